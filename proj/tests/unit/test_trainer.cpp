#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "cfa/errors.hpp"
#include "cfa/trainer.hpp"
#include "doctest.h"

using namespace cfa;

namespace {

std::filesystem::path tmp_path(const std::string& name) {
  std::filesystem::create_directories(CFA_TEST_TMPDIR);
  return std::filesystem::path(CFA_TEST_TMPDIR) / name;
}

const TrainData& toy_data() {
  static const TrainData data = [] {
    TrainData d;
    for (std::uint64_t i = 0; i < 4; ++i) d.train.push_back(synthetic_image(48, 48, i));
    d.val.push_back(synthetic_image(48, 48, 100));
    return d;
  }();
  return data;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.net = {4, 2, 4, false};
  c.batch_size = 4;
  c.lr = 0.05;
  c.momentum = 0.9;
  c.iters = 60;
  c.validate_every = 20;
  c.noise_std = 0.01;
  c.val_patches = 16;
  c.log_init_scale = 0.1;
  c.log_init_radius = 1;
  c.seed = 3;
  return c;
}

bool same_params(const NetParams& a, const NetParams& b) {
  for (std::size_t i = 0; i < a.tensors().size(); ++i)
    if (!(*a.tensors()[i] == *b.tensors()[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("sgd_step arithmetic") {
  Tensor p({1}, 1.0);
  Tensor* ps[] = {&p};
  const Tensor g2[] = {Tensor({1}, 2.0)};
  sgd_step(ps, g2, 0.1);
  CHECK(p[0] == 0.8);
  const Tensor g0[] = {Tensor({1}, 0.0)};
  sgd_step(ps, g0, 0.1);
  CHECK(p[0] == 0.8);

  Tensor q({3}, std::vector<double>{0.3, -1.25, 7.0});
  const Tensor gq[] = {Tensor({3}, std::vector<double>{0.5, 2.0, -3.0})};
  Tensor* qs[] = {&q};
  sgd_step(qs, gq, 0.01);
  CHECK(q.vector() == std::vector<double>{0.3 - 0.01 * 0.5, -1.25 - 0.01 * 2.0, 7.0 - 0.01 * -3.0});

  const Tensor wrong[] = {Tensor({2}, 0.0)};
  CHECK_THROWS_AS(sgd_step(ps, wrong, 0.1), DimensionError);
}

TEST_CASE("config schedule helpers") {
  TrainConfig c;
  c.iters = 20'000;
  CHECK(c.effective_gamma() == doctest::Approx(2.5e-5 * 75).epsilon(1e-15));
  CHECK(AnnealSchedule{c.effective_gamma()}.alpha_at(20'000) == doctest::Approx(1407.25).epsilon(1e-12));
  c.reference_iters = 0;
  CHECK(c.effective_gamma() == 2.5e-5);
  c.fine_tune_iters = 10;
  CHECK(c.lr_at(19'999) == c.lr);
  CHECK(c.lr_at(20'000) == c.fine_tune_lr);
  CHECK(c.total_iters() == 20'010);
  c.validate_every = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
}

TEST_CASE("joint training bookkeeping and determinism") {
  const TrainConfig c = toy_config();
  const auto a = train_joint(c, toy_data());
  REQUIRE(a.log.entries.size() == 4);
  CHECK(a.log.entries[0].iteration == 0);
  CHECK(std::isnan(a.log.entries[0].train_loss));
  CHECK(a.log.entries[0].mean_entropy == doctest::Approx(std::log(4.0)).epsilon(1e-3));
  CHECK(a.log.entries.back().iteration == 60);
  CHECK(a.pattern == harden(a.sensor));

  const auto b = train_joint(c, toy_data());
  CHECK(b.pattern == a.pattern);
  CHECK(b.sensor.logits() == a.sensor.logits());
  CHECK(same_params(a.params, b.params));
  CHECK(a.log.to_text() == b.log.to_text());

  const std::string text = a.log.to_text();
  CHECK(text.rfind("0, nan, ", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
}

TEST_CASE("fine-tune phase switches lr at the boundary") {
  TrainConfig c = toy_config();
  c.net.period = 4;
  c.iters = 30;
  c.fine_tune_iters = 10;
  c.fine_tune_lr = 0.001;
  c.validate_every = 10;
  TrainLog log;
  train_fixed(bayer_pattern(4), c, toy_data(), &log);
  REQUIRE(log.lr_changes.size() == 2);
  CHECK(log.lr_changes[0] == std::pair<std::int64_t, double>{0, 0.05});
  CHECK(log.lr_changes[1] == std::pair<std::int64_t, double>{30, 0.001});
  CHECK(log.entries.back().iteration == 40);
  CHECK(log.entries.back().lr == 0.001);
  CHECK(log.entries[2].lr == 0.05);
}

TEST_CASE("fixed training overfits a single patch") {
  // A 3P x 3P image admits exactly one aligned patch, so every batch repeats it.
  TrainData one;
  one.train.push_back(synthetic_image(12, 12, 7));
  one.val = one.train;
  TrainConfig c = toy_config();
  c.batch_size = 1;
  c.noise_std = 0.0;
  c.iters = 5000;
  c.validate_every = 5000;
  c.val_patches = 1;
  Trainer t(c, one, initial_fixed_state(c, bayer_pattern(4)));
  double loss = 1.0;
  while (t.state().iteration < c.iters && loss >= 1e-6) loss = t.step();
  MESSAGE("single-patch loss " << loss << " after " << t.state().iteration << " iterations");
  CHECK(loss < 1e-6);
}

TEST_CASE("divergence guard reports the last good state") {
  TrainConfig c = toy_config();
  c.lr = 1e6;
  c.momentum = 0.0;
  c.validate_every = 1;
  Trainer t(c, toy_data(), initial_fixed_state(c, bayer_pattern(4)));
  try {
    t.run();
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.iteration() > 0);
    CHECK(e.last_good_iteration() <= e.iteration());
    CHECK(std::string(e.what()).find("diverged") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  const TrainConfig c = toy_config();
  Trainer t(c, toy_data(), initial_joint_state(c));
  t.run_until(25);
  const auto path = tmp_path("state.ckpt");
  save_checkpoint(t.state(), path);
  const TrainState back = load_checkpoint(path);
  CHECK(back.iteration == 25);
  CHECK(back.seed == c.seed);
  CHECK(back.sensor->logits() == t.state().sensor->logits());
  CHECK(same_params(back.params, t.state().params));
  CHECK(back.velocity == t.state().velocity);
  CHECK(back.loss_sum == t.state().loss_sum);
  CHECK(back.log.to_text() == t.state().log.to_text());
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(t.state()));
}

TEST_CASE("checkpoint corruption is detected") {
  const TrainConfig c = toy_config();
  auto bytes = serialize_checkpoint(initial_fixed_state(c, bayer_pattern(4)));
  CHECK_NOTHROW(deserialize_checkpoint(bytes));

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  CHECK_THROWS_AS(deserialize_checkpoint(flipped), IoError);

  auto version = bytes;
  version[8] = 99;
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(version), doctest::Contains("version"), IoError);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 9);
  CHECK_THROWS_AS(deserialize_checkpoint(truncated), IoError);
  CHECK_THROWS_AS(load_checkpoint(tmp_path("missing.ckpt")), IoError);
}

TEST_CASE("resume from a checkpoint equals an uninterrupted run") {
  TrainConfig c = toy_config();
  c.iters = 100;
  c.validate_every = 10;
  for (bool joint : {true, false}) {
    auto init = [&] { return joint ? initial_joint_state(c) : initial_fixed_state(c, bayer_pattern(4)); };
    Trainer straight(c, toy_data(), init());
    straight.run();

    const auto path = tmp_path("resume.ckpt");
    {
      Trainer first(c, toy_data(), init());
      first.run_until(37);
      save_checkpoint(first.state(), path);
    }
    Trainer resumed(c, toy_data(), load_checkpoint(path));
    resumed.run();
    CHECK(serialize_checkpoint(resumed.state()) == serialize_checkpoint(straight.state()));
  }
}

TEST_CASE("periodic checkpoints are written during training") {
  TrainConfig c = toy_config();
  c.checkpoint_every = 20;
  c.checkpoint_path = tmp_path("periodic.ckpt");
  std::filesystem::remove(c.checkpoint_path);
  Trainer t(c, toy_data(), initial_fixed_state(c, bayer_pattern(4)));
  t.run_until(45);
  CHECK(load_checkpoint(c.checkpoint_path).iteration == 40);
}
