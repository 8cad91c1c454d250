#include "cfa/trainer.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "cfa/errors.hpp"

namespace cfa {

namespace {

constexpr std::uint64_t kValidationStream = 0xffff'ffff'0000'0001ULL;
constexpr std::size_t kValidationChunk = 64;

}  // namespace

double TrainConfig::effective_gamma() const {
  if (reference_iters <= 0 || iters == reference_iters) return gamma;
  return gamma * static_cast<double>(reference_iters) / static_cast<double>(iters);
}

double TrainConfig::lr_at(std::int64_t iteration) const { return iteration < iters ? lr : fine_tune_lr; }

void TrainConfig::validate() const {
  if (batch_size == 0) throw ContractError("batch_size must be positive");
  if (!(lr > 0.0) || !(fine_tune_lr > 0.0)) throw ContractError("learning rates must be positive");
  if (iters <= 0) throw ContractError("iters must be positive");
  if (!(gamma > 0.0)) throw ContractError("gamma must be positive");
  if (noise_std < 0.0) throw ContractError("noise_std must be non-negative");
  if (validate_every <= 0 || validate_every > total_iters()) throw ContractError("validate_every must be in [1, iters]");
  if (checkpoint_every < 0 || fine_tune_iters < 0) throw ContractError("negative iteration counts");
  if (momentum < 0.0 || momentum >= 1.0) throw ContractError("momentum must be in [0, 1)");
  if (val_patches == 0) throw ContractError("val_patches must be positive");
  if (!(log_init_scale > 0.0)) throw ContractError("log_init_scale must be positive");
  if (log_init_radius >= net.period) throw ContractError("log_init_radius must be smaller than the period");
}

std::string TrainLog::to_text() const {
  std::ostringstream os;
  os.precision(17);
  for (const auto& e : entries)
    os << e.iteration << ", " << e.train_loss << ", " << e.val_loss << ", " << e.mean_entropy << '\n';
  return os.str();
}

HardPattern TrainState::pattern() const {
  if (fixed) return *fixed;
  if (sensor) return harden(*sensor);
  throw ContractError("training state has no pattern");
}

TrainingDiverged::TrainingDiverged(std::int64_t iteration, std::int64_t last_good, std::filesystem::path checkpoint)
    : std::runtime_error("training diverged at iteration " + std::to_string(iteration) +
                         "; last good state at iteration " + std::to_string(last_good) +
                         (checkpoint.empty() ? std::string() : " (" + checkpoint.string() + ")")),
      iteration_(iteration),
      last_good_(last_good),
      checkpoint_(std::move(checkpoint)) {}

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
  if (params.size() != grads.size()) throw DimensionError("sgd_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) throw DimensionError("sgd_step: gradient shape mismatch");
    auto p = params[i]->data();
    const auto g = grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
  }
}

std::string format_config(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "period = " << c.net.period << '\n'
     << "proposals = " << c.net.proposals << '\n'
     << "features = " << c.net.features << '\n'
     << "normalize_gates = " << (c.net.normalize_gates ? "true" : "false") << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "lr = " << c.lr << '\n'
     << "iters = " << c.iters << '\n'
     << "gamma = " << c.gamma << '\n'
     << "reference_iters = " << c.reference_iters << '\n'
     << "noise_std = " << c.noise_std << '\n'
     << "seed = " << c.seed << '\n'
     << "validate_every = " << c.validate_every << '\n'
     << "checkpoint_every = " << c.checkpoint_every << '\n'
     << "fine_tune_iters = " << c.fine_tune_iters << '\n'
     << "fine_tune_lr = " << c.fine_tune_lr << '\n'
     << "momentum = " << c.momentum << '\n'
     << "val_patches = " << c.val_patches << '\n'
     << "log_init_scale = " << c.log_init_scale << '\n'
     << "log_init_radius = " << c.log_init_radius << '\n';
  return os.str();
}

static TrainState initial_state(const TrainConfig& config, TrainMode mode) {
  config.validate();
  TrainState state;
  state.mode = mode;
  state.seed = config.seed;
  // Distinct derived seeds for the network and the sensor logits.
  state.params = init_params(config.net, config.seed * 2 + 1, config.log_init_scale, config.log_init_radius);
  if (config.momentum > 0.0) {
    for (const Tensor* t : state.params.tensors()) state.velocity.emplace_back(t->shape(), 0.0);
  }
  state.config_text = format_config(config);
  return state;
}

TrainState initial_joint_state(const TrainConfig& config) {
  TrainState state = initial_state(config, TrainMode::joint);
  state.sensor = SensorPattern::random(config.net.period, kNumChannels, config.seed * 2 + 2);
  if (config.momentum > 0.0) state.velocity.emplace_back(state.sensor->logits().shape(), 0.0);
  return state;
}

TrainState initial_fixed_state(const TrainConfig& config, const HardPattern& pattern) {
  if (pattern.period() != config.net.period) throw DimensionError("pattern period does not match the network");
  TrainState state = initial_state(config, TrainMode::fixed);
  state.fixed = pattern;
  return state;
}

Trainer::Trainer(TrainConfig config, const TrainData& data, TrainState state)
    : config_(std::move(config)), data_(data), state_(std::move(state)) {
  config_.validate();
  if (data_.train.empty() || data_.val.empty()) throw ContractError("training needs train and validation images");
  if (state_.params.shape.period != config_.net.period) throw ContractError("state does not match config");
  val_batch_ = sample_patch_pairs(data_.val, config_.net.period, config_.val_patches, config_.seed, kValidationStream,
                                  config_.noise_std);
  if (state_.log.lr_changes.empty()) state_.log.lr_changes.emplace_back(0, config_.lr);
  if (state_.iteration == 0 && state_.log.entries.empty()) record_entry();
  last_good_ = state_;
}

double Trainer::validation_loss() const {
  const Tensor selection = state_.pattern().one_hot(kNumChannels);
  const std::size_t total = val_batch_.x.dim(0);
  const auto p = static_cast<std::size_t>(config_.net.period);
  const std::size_t side = 3 * p;
  double sse = 0.0;
  for (std::size_t start = 0; start < total; start += kValidationChunk) {
    const std::size_t n = std::min(kValidationChunk, total - start);
    const auto xv = val_batch_.x.data().subspan(start * side * side * 4, n * side * side * 4);
    const auto yv = val_batch_.y.data().subspan(start * p * p * 3, n * p * p * 3);
    const Tensor x({n, side, side, 4}, std::vector<double>(xv.begin(), xv.end()));
    const Tensor s = measure(selection, x);
    const Tensor y_hat = reconstruct(s, state_.params).y_hat;
    for (std::size_t i = 0; i < yv.size(); ++i) {
      const double d = y_hat[i] - yv[i];
      sse += d * d;
    }
  }
  return sse / static_cast<double>(val_batch_.y.size());
}

void Trainer::record_entry() {
  LogEntry e;
  e.iteration = state_.iteration;
  e.train_loss = state_.loss_count > 0 ? state_.loss_sum / static_cast<double>(state_.loss_count)
                                       : std::numeric_limits<double>::quiet_NaN();
  e.val_loss = validation_loss();
  e.lr = config_.lr_at(state_.iteration);
  if (state_.sensor) {
    const double alpha = AnnealSchedule{config_.effective_gamma()}.alpha_at(state_.iteration);
    e.mean_entropy = mean_entropy(soft_select(state_.sensor->logits(), alpha));
  }
  e.pattern = state_.pattern();
  state_.loss_sum = 0.0;
  state_.loss_count = 0;
  state_.log.entries.push_back(std::move(e));
  if (observer_) observer_(state_.log.entries.back());
}

double Trainer::step() {
  const std::int64_t t = state_.iteration;
  if (t >= config_.total_iters()) throw ContractError("training already complete");
  const double lr = config_.lr_at(t);
  if (lr != state_.log.lr_changes.back().second) state_.log.lr_changes.emplace_back(t, lr);

  const PatchBatch batch = sample_patch_pairs(data_.train, config_.net.period, config_.batch_size, state_.seed,
                                              static_cast<std::uint64_t>(t), config_.noise_std);
  double loss_value = 0.0;
  std::vector<Tensor> grads;
  try {
    ad::Graph g;
    ad::Var selection;
    ad::Var logits;
    if (state_.sensor) {
      logits = g.parameter(state_.sensor->logits());
      selection = soft_select(logits, AnnealSchedule{config_.effective_gamma()}.alpha_at(t));
    } else {
      selection = g.constant(state_.fixed->one_hot(kNumChannels));
    }
    auto s = measure(selection, g.constant(batch.x));
    const auto bound = bind(g, state_.params);
    auto out = forward(s, bound, config_.net);
    auto loss = ad::mse_loss(out.y_hat, g.constant(batch.y));
    loss_value = loss.value()[0];
    if (!std::isfinite(loss_value)) throw DomainError("non-finite loss");
    g.backward(loss);
    for (const auto& v : bound.all()) grads.push_back(g.take_grad(v));
    if (state_.sensor) grads.push_back(g.take_grad(logits));
  } catch (const DomainError&) {
    throw TrainingDiverged(t, last_good_.iteration, last_good_path_);
  }

  std::vector<Tensor*> targets = state_.params.tensors();
  if (state_.sensor) targets.push_back(&state_.sensor->logits());
  if (config_.momentum > 0.0) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto v = state_.velocity[i].data();
      const auto gv = grads[i].data();
      for (std::size_t j = 0; j < v.size(); ++j) v[j] = config_.momentum * v[j] + gv[j];
    }
    sgd_step(targets, state_.velocity, lr);
  } else {
    sgd_step(targets, grads, lr);
  }
  for (const Tensor* tensor : targets)
    if (!tensor->all_finite()) throw TrainingDiverged(t, last_good_.iteration, last_good_path_);

  state_.iteration = t + 1;
  state_.loss_sum += loss_value;
  ++state_.loss_count;
  if (state_.iteration % config_.validate_every == 0 || state_.iteration == config_.total_iters()) {
    record_entry();
    last_good_ = state_;
  }
  if (config_.checkpoint_every > 0 && state_.iteration % config_.checkpoint_every == 0 &&
      !config_.checkpoint_path.empty()) {
    save_checkpoint(state_, config_.checkpoint_path);
    last_good_ = state_;
    last_good_path_ = config_.checkpoint_path;
  }
  return loss_value;
}

void Trainer::run_until(std::int64_t iteration) {
  const std::int64_t stop = std::min(iteration, config_.total_iters());
  while (state_.iteration < stop) step();
}

JointResult train_joint(const TrainConfig& config, const TrainData& data, Trainer::Observer observer) {
  Trainer trainer(config, data, initial_joint_state(config));
  if (observer)
    for (const auto& e : trainer.state().log.entries) observer(e);
  trainer.set_observer(std::move(observer));
  trainer.run();
  const auto& st = trainer.state();
  return {*st.sensor, st.pattern(), st.params, st.log};
}

NetParams train_fixed(const HardPattern& pattern, const TrainConfig& config, const TrainData& data, TrainLog* log,
                      Trainer::Observer observer) {
  Trainer trainer(config, data, initial_fixed_state(config, pattern));
  if (observer)
    for (const auto& e : trainer.state().log.entries) observer(e);
  trainer.set_observer(std::move(observer));
  trainer.run();
  if (log) *log = trainer.state().log;
  return trainer.state().params;
}

}  // namespace cfa
