#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "brac/data.hpp"
#include "brac/errors.hpp"
#include "brac/policy.hpp"

using namespace brac;

namespace {

// Policy whose head ignores the state: mean mu, log-std log_sigma in every dimension.
TanhGaussianPolicy fixed_policy(double mu, double log_sigma, ActionBounds bounds, std::size_t state_dim = 1) {
  const std::size_t a = bounds.dim();
  Mlp trunk = Mlp::zeros({state_dim, 2 * a});
  for (std::size_t d = 0; d < a; ++d) {
    trunk.bias(0)[d] = mu;
    trunk.bias(0)[a + d] = log_sigma;
  }
  return TanhGaussianPolicy(std::move(trunk), std::move(bounds));
}

// Squashed Gaussian density in 1-D, written directly from the change of variables.
double squashed_density(double a, double mu, double sigma, double scale, double shift) {
  const double u = (a - shift) / scale;
  const double pre = std::atanh(u);
  const double z = (pre - mu) / sigma;
  const double gauss = std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
  return gauss / (scale * (1.0 - u * u));
}

OfflineDataset pointmass_dataset() { return OfflineDataset("pointmass2d", 4, 2, "none"); }

}  // namespace

TEST_CASE("log_prob: standard normal pre-squash at a=0 is the Gaussian log-density") {
  const auto pi = fixed_policy(0.0, 0.0, ActionBounds::symmetric(1, 1.0));
  const Tensor lp = pi.log_prob(Tensor::matrix(1, 1), Tensor::matrix(1, 1, 0.0));
  CHECK(lp[0] == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
  CHECK(lp[0] == doctest::Approx(-0.9189385332046727).epsilon(1e-14));
}

TEST_CASE("sample: zero noise on symmetric bounds gives action 0 and the Gaussian density at 0") {
  const double log_sigma = -1.3;
  const auto pi = fixed_policy(0.0, log_sigma, ActionBounds::symmetric(1, 1.0));
  Tape tape;
  const Tensor states = Tensor::matrix(1, 1);
  const PolicySample s = pi.sample_with_noise(tape, tape.constant_ref(states), 1, Tensor::matrix(1, 1, 0.0));
  CHECK(s.actions.value()[0] == 0.0);
  CHECK(s.log_probs.value()[0] == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi) - log_sigma));
}

TEST_CASE("log_prob: matches the change-of-variables density on asymmetric bounds") {
  ActionBounds b{{-3.0}, {1.0}};
  const double mu = 0.4, log_sigma = -0.7;
  const auto pi = fixed_policy(mu, log_sigma, b);
  for (double a : {-2.9, -1.5, -1.0, 0.0, 0.7, 0.99}) {
    const Tensor lp = pi.log_prob(Tensor::matrix(1, 1), Tensor::matrix(1, 1, a));
    CHECK(lp[0] == doctest::Approx(std::log(squashed_density(a, mu, std::exp(log_sigma), 2.0, -1.0))).epsilon(1e-12));
  }
}

TEST_CASE("log_prob: value from sample equals re-evaluated log_prob to 1e-10") {
  Rng rng(3);
  TanhGaussianPolicy pi(4, ActionBounds{{-1.0, -2.0, 0.0}, {1.0, 2.0, 5.0}}, {16, 16}, rng);
  const Tensor states = rng.normal_matrix(7, 4);
  const auto [actions, log_probs] = pi.sample(states, 5, rng);
  for (std::size_t j = 0; j < 5; ++j) {
    Tensor a = Tensor::matrix(7, 3);
    for (std::size_t i = 0; i < 7; ++i) {
      for (std::size_t d = 0; d < 3; ++d) a.at(i, d) = actions[(i * 5 + j) * 3 + d];
    }
    const Tensor lp = pi.log_prob(states, a);
    for (std::size_t i = 0; i < 7; ++i) CHECK(std::abs(lp[i] - log_probs[i * 5 + j]) < 1e-10);
  }
}

TEST_CASE("sample: actions stay strictly inside [-2, 2] over 1e5 draws, even when saturated") {
  Rng rng(5);
  for (double log_sigma : {-1.0, 2.0}) {
    const auto pi = fixed_policy(3.0, log_sigma, ActionBounds::symmetric(1, 2.0));
    const auto [actions, log_probs] = pi.sample(Tensor::matrix(1, 1), 100000, rng);
    for (double a : actions.values()) {
      REQUIRE(a > -2.0);
      REQUIRE(a < 2.0);
    }
    CHECK(log_probs.all_finite());
  }
}

TEST_CASE("sample: histogram density agrees with exp(log_prob) within 5% (1e6 draws)") {
  const double mu = 0.3, log_sigma = std::log(0.6);
  const auto pi = fixed_policy(mu, log_sigma, ActionBounds::symmetric(1, 1.0));
  Rng rng(11);
  const std::size_t n = 1000000;
  const auto [actions, log_probs] = pi.sample(Tensor::matrix(1, 1), n, rng);
  const int bins = 20;
  std::vector<double> counts(bins, 0.0);
  for (double a : actions.values()) counts[std::min(bins - 1, static_cast<int>((a + 1.0) / 2.0 * bins))] += 1.0;
  const double width = 2.0 / bins;
  int checked = 0;
  for (int k = 0; k < bins; ++k) {
    if (counts[k] < 0.01 * n) continue;
    // Bin average of the model density, by midpoint rule on a fine grid.
    const double lo = -1.0 + k * width;
    const int fine = 200;
    Tensor grid = Tensor::matrix(fine, 1);
    for (int g = 0; g < fine; ++g) grid[g] = lo + (g + 0.5) * width / fine;
    const Tensor lp = pi.log_prob(Tensor::matrix(fine, 1), grid);
    double model = 0.0;
    for (double v : lp.values()) model += std::exp(v) / fine;
    const double hist = counts[k] / (n * width);
    CHECK(std::abs(hist - model) / model < 0.05);
    ++checked;
  }
  CHECK(checked >= 10);
}

TEST_CASE("log_prob: grid argmax matches the stationary point of the squashed density") {
  // The mode of the squashed density solves atanh(u) - mu = 2 u sigma^2, which
  // tends to tanh(mu) as sigma shrinks.
  const double mu = 0.8, scale = 1.5, shift = 0.5;
  for (double sigma : {0.05, 0.3}) {
    const auto pi = fixed_policy(mu, std::log(sigma), ActionBounds{{shift - scale}, {shift + scale}});
    const int n = 20001;
    Tensor grid = Tensor::matrix(n, 1);
    for (int g = 0; g < n; ++g) grid[g] = shift - scale + scale * 2.0 * (g + 0.5) / (n + 1);
    const Tensor lp = pi.log_prob(Tensor::matrix(n, 1), grid);
    std::size_t best = 0;
    for (std::size_t g = 1; g < lp.size(); ++g) if (lp[g] > lp[best]) best = g;
    double u = std::tanh(mu);
    for (int it = 0; it < 200; ++it) u = std::tanh(mu + 2.0 * u * sigma * sigma);
    CHECK(grid[best] == doctest::Approx(scale * u + shift).epsilon(1e-3));
    if (sigma == 0.05) CHECK(std::abs(grid[best] - (scale * std::tanh(mu) + shift)) < 0.01);
  }
}

TEST_CASE("log_prob: boundary and out-of-range actions are contract errors") {
  const auto pi = fixed_policy(0.0, 0.0, ActionBounds::symmetric(1, 1.0));
  CHECK_THROWS_AS(pi.log_prob(Tensor::matrix(1, 1), Tensor::matrix(1, 1, 1.0)), ContractError);
  CHECK_THROWS_AS(pi.log_prob(Tensor::matrix(1, 1), Tensor::matrix(1, 1, -1.5)), ContractError);
  const Tensor inside = pi.bounds().clip_inward(Tensor::matrix(1, 1, 1.0));
  CHECK(inside[0] == doctest::Approx(1.0 - 2e-6));
  CHECK(std::isfinite(pi.log_prob(Tensor::matrix(1, 1), inside)[0]));
}

TEST_CASE("log_prob: clamp is inert while the raw log-std lies inside it") {
  Rng rng(8);
  TanhGaussianPolicy pi(2, ActionBounds::symmetric(2, 1.0), {8}, rng);
  const Tensor states = rng.normal_matrix(5, 2);
  const Tensor raw = pi.trunk().predict(states);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t d = 2; d < 4; ++d) REQUIRE(raw.at(i, d) > TanhGaussianPolicy::kLogStdMin);
  }
  Tensor actions = rng.uniform_matrix(5, 2, -0.9, 0.9);
  const Tensor lp = pi.log_prob(states, actions);
  for (std::size_t i = 0; i < 5; ++i) {
    double expect = 0.0;
    for (std::size_t d = 0; d < 2; ++d) {
      expect += std::log(squashed_density(actions.at(i, d), raw.at(i, d), std::exp(raw.at(i, d + 2)), 1.0, 0.0));
    }
    CHECK(lp[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("sample: reparameterized gradient of E[Q(s,a)] matches finite differences with common noise") {
  Rng rng(21);
  TanhGaussianPolicy pi(3, ActionBounds::symmetric(2, 1.5), {6}, rng);
  Mlp q({5, 8, 1}, rng);
  const Tensor states = rng.normal_matrix(4, 3);
  const Tensor noise = rng.normal_matrix(4 * 3, 2);
  auto objective = [&](Tape& tape, const TanhGaussianPolicy& p) {
    Var s = tape.constant_ref(states);
    PolicySample smp = p.sample_with_noise(tape, s, 3, noise);
    Var sa = ad::concat_cols(ad::repeat_rows(s, 3), smp.actions);
    return ad::sub(ad::mean(q.forward(tape, sa, false)), ad::scale(ad::mean(smp.log_probs), 0.1));
  };
  Tape tape;
  tape.backward(objective(tape, pi));
  std::vector<double> analytic;
  for (const Tensor* p : std::as_const(pi.trunk()).parameters()) {
    const Tensor g = tape.gradient_of(*p);
    analytic.insert(analytic.end(), g.values().begin(), g.values().end());
  }
  std::vector<double> theta = pi.trunk().flat();
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double saved = theta[k];
    auto eval = [&](double v) {
      theta[k] = v;
      TanhGaussianPolicy probe = pi;
      probe.trunk().set_flat(theta);
      Tape t;
      return objective(t, probe).value().item();
    };
    const double fd = (eval(saved + h) - eval(saved - h)) / (2.0 * h);
    theta[k] = saved;
    worst = std::max(worst, std::abs(fd - analytic[k]) / std::max(1e-4, std::abs(fd) + std::abs(analytic[k])));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("checkpoint: save/load round trip and bad magic") {
  Rng rng(4);
  TanhGaussianPolicy pi(3, ActionBounds{{-1.0, 0.0}, {2.0, 1.0}}, {5, 7}, rng);
  const auto dir = std::filesystem::temp_directory_path() / "brac_policy_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "pi.bin";
  pi.save(path);
  CHECK(TanhGaussianPolicy::load(path) == pi);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  CHECK_THROWS_AS(TanhGaussianPolicy::load(path), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("clone_behavior: constant action 0.3 is recovered on held-out states") {
  Rng rng(1);
  OfflineDataset ds = pointmass_dataset();
  for (int i = 0; i < 2000; ++i) {
    const Tensor s = rng.normal_matrix(1, 4);
    ds.add(s.values(), std::vector<double>{0.3, 0.3}, 0.0, s.values(), false);
  }
  CloneConfig cfg{1500, 64, 1e-3, {32, 32}};
  const CloneResult res = clone_behavior(ds, cfg, rng);
  const Tensor held_out = rng.normal_matrix(50, 4);
  const Tensor mean = res.policy.mean_action(held_out);
  for (double v : mean.values()) CHECK(std::abs(v - 0.3) < 0.05);
  CHECK(std::isfinite(res.final_log_likelihood));
}

TEST_CASE("clone_behavior: log-likelihood of a single transition increases every step for 100 steps") {
  Rng rng(2);
  OfflineDataset ds = pointmass_dataset();
  ds.add(std::vector<double>{0.1, -0.2, 0.3, 0.0}, std::vector<double>{-0.4, 0.6}, -1.0,
         std::vector<double>{0.1, -0.2, 0.3, 0.0}, false);
  const CloneResult res = clone_behavior(ds, CloneConfig{101, 8, 1e-3, {16, 16}}, rng);
  REQUIRE(res.trace.size() == 101);
  for (std::size_t i = 1; i < res.trace.size(); ++i) CHECK(res.trace[i] > res.trace[i - 1]);
}

TEST_CASE("clone_behavior: refit of a squashed Gaussian with sigma 0.2 recovers the spread") {
  Rng rng(9);
  OfflineDataset ds = pointmass_dataset();
  for (int i = 0; i < 5000; ++i) {
    const Tensor s = rng.uniform_matrix(1, 4, -1.0, 1.0);
    std::vector<double> a(2);
    a[0] = std::tanh(0.8 * s[0] + 0.2 * rng.normal());
    a[1] = std::tanh(-0.5 * s[1] + 0.3 * s[2] + 0.2 * rng.normal());
    ds.add(s.values(), a, 0.0, s.values(), false);
  }
  const CloneResult res = clone_behavior(ds, CloneConfig{3000, 128, 1e-3, {64, 64}}, rng);
  const Tensor probe = rng.uniform_matrix(200, 4, -1.0, 1.0);
  const Tensor raw = res.policy.trunk().predict(probe);
  double mean_std = 0.0;
  for (std::size_t i = 0; i < 200; ++i) {
    for (std::size_t d = 2; d < 4; ++d) mean_std += std::exp(raw.at(i, d)) / 400.0;
  }
  CHECK(mean_std > 0.1);
  CHECK(mean_std < 0.4);
}

TEST_CASE("clone_behavior: same seed gives the same policy") {
  Rng data_rng(6);
  OfflineDataset ds = pointmass_dataset();
  for (int i = 0; i < 300; ++i) {
    const Tensor s = data_rng.normal_matrix(1, 4);
    const Tensor a = data_rng.uniform_matrix(1, 2, -0.9, 0.9);
    ds.add(s.values(), a.values(), 0.0, s.values(), false);
  }
  Rng r1(42), r2(42);
  const CloneConfig cfg{50, 32, 1e-3, {16}};
  const CloneResult a = clone_behavior(ds, cfg, r1);
  const CloneResult b = clone_behavior(ds, cfg, r2);
  CHECK(a.policy == b.policy);
  CHECK(a.trace == b.trace);
}

TEST_CASE("clone_behavior: empty dataset and bad config are rejected") {
  Rng rng(0);
  OfflineDataset ds = pointmass_dataset();
  CHECK_THROWS_AS(clone_behavior(ds, CloneConfig{}, rng), ConfigError);
  ds.add(std::vector<double>(4, 0.0), std::vector<double>(2, 0.0), 0.0, std::vector<double>(4, 0.0), false);
  CHECK_THROWS_AS(clone_behavior(ds, CloneConfig{0, 8, 1e-3, {4}}, rng), ConfigError);
}
