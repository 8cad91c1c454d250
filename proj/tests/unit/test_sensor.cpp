#include <cmath>
#include <random>

#include "cfa/errors.hpp"
#include "cfa/sensor.hpp"
#include "doctest.h"
#include "../support/gradcheck.hpp"

using namespace cfa;
using cfa::testing::random_tensor;

TEST_CASE("anneal schedule") {
  CHECK(AnnealSchedule{2.5e-5}.alpha_at(0) == 1.0);
  CHECK(AnnealSchedule{2.5e-5}.alpha_at(1'500'000) == doctest::Approx(1407.25).epsilon(1e-12));
  CHECK_THROWS_AS(AnnealSchedule{1.0}.alpha_at(-1), ContractError);
}

TEST_CASE("soft_select of zero logits is uniform at any alpha") {
  for (double alpha : {0.5, 1.0, 1e4}) {
    Tensor sel = soft_select(Tensor({2, 2, 4}, 0.0), alpha);
    for (double v : sel.data()) CHECK(v == 0.25);
  }
}

TEST_CASE("harden takes the argmax with lowest-index ties") {
  CHECK(harden(Tensor({1, 1, 4}, std::vector<double>{0.1, 0.9, 0.2, 0.3})).at(0, 0) == 1);
  CHECK(harden(Tensor({1, 1, 4}, std::vector<double>{0.5, 0.2, 0.5, 0.5})).at(0, 0) == 0);
  CHECK(harden(Tensor({1, 1, 4}, 0.0)).at(0, 0) == 0);
}

TEST_CASE("measure examples") {
  Tensor x({1, 1, 4}, std::vector<double>{0.1, 0.2, 0.3, 0.6});
  HardPattern blue(1, {2});
  CHECK(measure(blue.one_hot(), x)[0] == 0.3);
  CHECK(measure(Tensor({1, 1, 4}, 0.25), x)[0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK_THROWS_AS(measure(Tensor({1, 1, 3}, 0.25), x), DimensionError);
}

TEST_CASE("measure with a hard pattern extracts one channel per pixel") {
  std::mt19937_64 rng(11);
  const int p = 4;
  std::vector<int> ch(p * p);
  for (int& c : ch) c = static_cast<int>(rng() % 4);
  HardPattern pat(p, ch);
  Tensor x = random_tensor({2, 8, 12, 4}, rng, 0.0, 1.0);
  Tensor s = measure(pat.one_hot(), x);
  REQUIRE(s.shape() == Shape{2, 8, 12});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t xx = 0; xx < 12; ++xx)
        CHECK(s.at({n, y, xx}) == x.at({n, y, xx, static_cast<std::size_t>(pat.tiled(y, xx))}));
}

TEST_CASE("mean entropy") {
  CHECK(mean_entropy(Tensor({8, 8, 4}, 0.25)) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(mean_entropy(bayer_pattern(8).one_hot()) == 0.0);
  CHECK_THROWS_AS(mean_entropy(Tensor({1, 1, 4}, 0.3)), ContractError);
  CHECK_THROWS_AS(mean_entropy(Tensor({1, 1, 2}, std::vector<double>{1.5, -0.5})), ContractError);

  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor sel = soft_select(random_tensor({3, 3, 4}, rng, -2.0, 2.0), 1.0);
    long double total = 0.0L;
    for (std::size_t px = 0; px < 9; ++px)
      for (std::size_t c = 0; c < 4; ++c) {
        const long double q = sel[px * 4 + c];
        if (q > 0) total -= q * std::log(q);
      }
    CHECK(std::abs(mean_entropy(sel) - static_cast<double>(total / 9)) < 1e-12);
  }
}

TEST_CASE("entropy is nonincreasing in alpha and argmax is alpha invariant") {
  std::mt19937_64 rng(13);
  const double alphas[] = {1, 2, 5, 10, 50, 1e2, 1e3, 1e4};
  for (int trial = 0; trial < 200; ++trial) {
    Tensor w = random_tensor({1, 1, 4}, rng);
    const int hard = harden(w).at(0, 0);
    double prev = INFINITY;
    for (double a : alphas) {
      Tensor sel = soft_select(w, a);
      const double h = mean_entropy(sel);
      CHECK(h <= prev + 1e-15);
      prev = h;
      CHECK(harden(sel).at(0, 0) == hard);
    }
  }
}

TEST_CASE("random initialisation starts near ln 4") {
  auto sp = SensorPattern::random(8, 4, 3);
  for (double v : sp.logits().data()) {
    CHECK(v >= -0.01);
    CHECK(v <= 0.01);
  }
  CHECK(mean_entropy(soft_select(sp.logits(), 1.0)) == doctest::Approx(std::log(4.0)).epsilon(1e-4));
  CHECK(SensorPattern::random(8, 4, 3).logits() == sp.logits());
}

TEST_CASE("gradient reaches the logits through measurement") {
  std::mt19937_64 rng(14);
  ad::Graph g;
  auto w = g.parameter(random_tensor({2, 2, 4}, rng, -0.01, 0.01));
  auto s = measure(soft_select(w, 1.0), g.constant(random_tensor({3, 4, 4, 4}, rng, 0.0, 1.0)));
  auto loss = ad::mse_loss(s, g.constant(random_tensor({3, 4, 4}, rng, 0.0, 1.0)));
  g.backward(loss);
  double norm = 0.0;
  const Tensor gw = g.grad(w);
  for (double v : gw.data()) norm += v * v;
  CHECK(norm > 0.0);
}
