#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfa/data.hpp"
#include "cfa/patterns.hpp"
#include "cfa/recon_net.hpp"
#include "cfa/sensor.hpp"

namespace cfa {

struct TrainConfig {
  NetShape net;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  std::int64_t iters = 1'500'000;
  double gamma = 2.5e-5;
  // gamma is rescaled so that alpha at `iters` equals alpha at this many
  // iterations under the unscaled gamma. Set to 0 to disable.
  std::int64_t reference_iters = 1'500'000;
  double noise_std = 0.01;
  std::uint64_t seed = 0;
  std::int64_t validate_every = 1000;
  std::int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::filesystem::path checkpoint_path;
  std::int64_t fine_tune_iters = 0;   // second phase at fine_tune_lr
  double fine_tune_lr = 1e-4;
  double momentum = 0.0;
  std::size_t val_patches = 256;
  double log_init_scale = 1.0;  // multiplier on the w_log init std
  int log_init_radius = -1;     // >= 0 adds the local geometric-mean prior to w_log

  double effective_gamma() const;
  double lr_at(std::int64_t iteration) const;
  std::int64_t total_iters() const { return iters + fine_tune_iters; }
  void validate() const;
};

struct LogEntry {
  std::int64_t iteration = 0;
  double train_loss = 0.0;  // mean training loss since the previous entry (NaN at iteration 0)
  double val_loss = 0.0;    // validation MSE with the hardened (or fixed) pattern
  double mean_entropy = 0.0;
  double lr = 0.0;
  HardPattern pattern;      // hardened pattern at this point
};

struct TrainLog {
  std::vector<LogEntry> entries;
  std::vector<std::pair<std::int64_t, double>> lr_changes;  // (first iteration using lr, lr)

  // Lines "iter, train_loss, val_loss, mean_entropy".
  std::string to_text() const;
};

enum class TrainMode : std::uint8_t { joint = 0, fixed = 1 };

struct TrainState {
  TrainMode mode = TrainMode::joint;
  std::int64_t iteration = 0;  // completed steps; also indexes the data stream
  std::uint64_t seed = 0;
  std::optional<SensorPattern> sensor;  // joint mode
  std::optional<HardPattern> fixed;     // fixed mode
  NetParams params;
  std::vector<Tensor> velocity;         // momentum buffers (empty without momentum)
  double loss_sum = 0.0;                // running training loss since last entry
  std::int64_t loss_count = 0;
  TrainLog log;
  std::string config_text;

  HardPattern pattern() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::int64_t iteration, std::int64_t last_good, std::filesystem::path checkpoint);
  std::int64_t iteration() const { return iteration_; }
  std::int64_t last_good_iteration() const { return last_good_; }
  const std::filesystem::path& last_good_checkpoint() const { return checkpoint_; }

 private:
  std::int64_t iteration_;
  std::int64_t last_good_;
  std::filesystem::path checkpoint_;
};

struct TrainData {
  std::vector<RgbImage> train;
  std::vector<RgbImage> val;
};

/// p <- p - lr * g for every element.
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr);

std::string format_config(const TrainConfig& config);

TrainState initial_joint_state(const TrainConfig& config);
TrainState initial_fixed_state(const TrainConfig& config, const HardPattern& pattern);

class Trainer {
 public:
  using Observer = std::function<void(const LogEntry&)>;

  Trainer(TrainConfig config, const TrainData& data, TrainState state);

  /// Runs until `iteration` steps have completed (clamped to total_iters()).
  void run_until(std::int64_t iteration);
  void run() { run_until(config_.total_iters()); }
  /// One SGD step; returns the batch loss.
  double step();

  /// Validation MSE of the current network with the hardened/fixed pattern.
  double validation_loss() const;

  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return config_; }
  void set_observer(Observer obs) { observer_ = std::move(obs); }

 private:
  void record_entry();

  TrainConfig config_;
  const TrainData& data_;
  TrainState state_;
  PatchBatch val_batch_;
  TrainState last_good_;
  std::filesystem::path last_good_path_;
  Observer observer_;
};

struct JointResult {
  SensorPattern sensor;
  HardPattern pattern;
  NetParams params;
  TrainLog log;
};

JointResult train_joint(const TrainConfig& config, const TrainData& data, Trainer::Observer observer = {});
NetParams train_fixed(const HardPattern& pattern, const TrainConfig& config, const TrainData& data,
                      TrainLog* log = nullptr, Trainer::Observer observer = {});

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);
std::vector<unsigned char> serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(std::span<const unsigned char> bytes);

}  // namespace cfa
