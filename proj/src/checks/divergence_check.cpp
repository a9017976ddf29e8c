#include <algorithm>
#include <cmath>
#include <future>
#include <sstream>

#include "brac/checks.hpp"
#include "brac/divergence.hpp"
#include "brac/policy.hpp"
#include "brac/rng.hpp"

namespace brac::checks {

namespace {

TanhGaussianPolicy fixed_gaussian(double mean, double log_std) {
  Mlp trunk = Mlp::zeros({1, 2});
  trunk.bias(0)[0] = mean;
  trunk.bias(0)[1] = log_std;
  return TanhGaussianPolicy(std::move(trunk), ActionBounds::symmetric(1, 1.0));
}

Tensor filled(std::size_t rows, double v) {
  Tensor t = Tensor::matrix(rows, 1);
  std::fill(t.storage().begin(), t.storage().end(), v);
  return t;
}

double dual_estimate(const DualDiscriminator& disc, const Tensor& pi_actions, const Tensor& b_actions) {
  Tape tape;
  const Tensor states = Tensor::matrix(pi_actions.rows(), 1);
  const Var est = disc.estimate(tape, tape.constant_ref(states), tape.constant_ref(pi_actions), 1,
                                tape.constant_ref(b_actions), 1);
  return ad::mean(est).value().item();
}

}  // namespace

MmdSweep mmd_oracle_sweep(std::size_t instances, std::uint64_t seed) {
  Rng rng(seed);
  MmdSweep out;
  out.instances = instances;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t n = 1 + rng.index(32), m = 1 + rng.index(32), d = 1 + rng.index(8);
    const double sigma = rng.uniform(0.1, 25.0);
    const Tensor x = rng.normal_matrix(n, d);
    Tensor y = rng.normal_matrix(m, d);
    for (double& v : y.storage()) v = 0.5 + 2.0 * v;
    out.max_abs_error = std::max(out.max_abs_error, std::abs(mmd_squared(x, y, sigma) - mmd_squared_bruteforce(x, y, sigma)));
    if (mmd_squared(x, x, sigma) != 0.0) out.self_exactly_zero = false;
  }
  return out;
}

double kl_primal_gaussian_pair(std::size_t samples, std::uint64_t seed) {
  Rng rng(seed);
  const TanhGaussianPolicy pi = fixed_gaussian(0.0, 0.0);
  const TanhGaussianPolicy behavior = fixed_gaussian(1.0, 0.0);
  DivergenceConfig cfg;
  cfg.kind = DivergenceKind::kKlPrimal;
  cfg.n_samples = samples;
  const DivergenceEstimator est(cfg, 1, 1, &behavior, rng);
  Tape tape;
  const Tensor state = Tensor::matrix(1, 1);
  return est.estimate(tape, tape.constant_ref(state), pi, Tensor::matrix(1, 1), rng, false).value().item();
}

// Raw Gaussians are used rather than squashed ones: the optimal discriminator
// log(pi/b)(a) = 0.5 - a then has unit slope, which the one-sided penalty leaves alone.
double kl_dual_gaussian_pair(std::size_t steps, std::uint64_t seed, std::size_t batch) {
  Rng rng(seed);
  const DivergenceConfig defaults;
  DualDiscriminator disc(DualDiscriminator::Form::kKl, 1, 1, defaults.discriminator_hidden,
                         defaults.discriminator_lr, defaults.penalty_coef, rng);
  const Tensor states = Tensor::matrix(batch, 1);
  for (std::size_t k = 0; k < steps; ++k) {
    const Tensor pi = rng.normal_matrix(batch, 1);
    Tensor b = rng.normal_matrix(batch, 1);
    for (double& v : b.storage()) v += 1.0;
    disc.step(states, pi, 1, b, 1, rng);
  }
  const std::size_t eval = 20000;
  const Tensor pi = rng.normal_matrix(eval, 1);
  Tensor b = rng.normal_matrix(eval, 1);
  for (double& v : b.storage()) v += 1.0;
  return dual_estimate(disc, pi, b);
}

double wasserstein_point_masses(std::size_t steps, std::uint64_t seed, std::size_t batch) {
  Rng rng(seed);
  const DivergenceConfig defaults;
  DualDiscriminator disc(DualDiscriminator::Form::kWasserstein, 1, 1, defaults.discriminator_hidden,
                         defaults.discriminator_lr, defaults.penalty_coef, rng);
  const Tensor states = Tensor::matrix(batch, 1);
  const Tensor pi = filled(batch, 0.0), b = filled(batch, 1.0);
  for (std::size_t k = 0; k < steps; ++k) disc.step(states, pi, 1, b, 1, rng);
  return dual_estimate(disc, filled(1, 0.0), filled(1, 1.0));
}

SuiteResult run_divergence_suite(std::uint64_t seed) {
  SuiteResult result{"divergence", true, {}};
  auto line = [&](bool ok, const std::string& text) {
    result.passed = result.passed && ok;
    result.lines.push_back(std::string(ok ? "PASS " : "FAIL ") + text);
  };
  std::ostringstream os;

  const MmdSweep sweep = mmd_oracle_sweep(1000, seed);
  os << "mmd vs double loop: instances=" << sweep.instances << " max_abs_error=" << sweep.max_abs_error
     << " self_zero=" << (sweep.self_exactly_zero ? "exact" : "inexact");
  line(sweep.max_abs_error <= 1e-12 && sweep.self_exactly_zero, os.str());

  const double kl = kl_primal_gaussian_pair(10000, seed + 1);
  os.str("");
  os << "kl_primal N(0,1)||N(1,1): estimate=" << kl << " analytic=0.5";
  line(std::abs(kl - 0.5) <= 0.05, os.str());

  std::vector<std::future<double>> kd, wd;
  for (std::uint64_t s = 0; s < 5; ++s) {
    kd.push_back(std::async(std::launch::async, kl_dual_gaussian_pair, 2000, seed + 100 + s, 64));
    wd.push_back(std::async(std::launch::async, wasserstein_point_masses, 2000, seed + 200 + s, 64));
  }
  int kl_ok = 0, w_ok = 0;
  std::ostringstream ks, ws;
  ks << "kl_dual N(0,1)||N(1,1) after 2000 steps:";
  ws << "wasserstein dual, point masses 0 and 1, after 2000 steps:";
  for (auto& f : kd) {
    const double v = f.get();
    kl_ok += std::abs(v - 0.5) <= 0.15;
    ks << ' ' << v;
  }
  for (auto& f : wd) {
    const double v = f.get();
    w_ok += v >= 0.7 && v <= 1.1;
    ws << ' ' << v;
  }
  ks << " (" << kl_ok << "/5 within 30%)";
  ws << " (" << w_ok << "/5 in [0.7, 1.1])";
  line(kl_ok >= 3, ks.str());
  line(w_ok >= 3, ws.str());
  return result;
}

}  // namespace brac::checks
