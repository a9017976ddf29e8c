#pragma once

// Independent reference implementations used to validate the library:
// plain-loop forward passes, central finite differences, an O(n^2) MMD, and
// a hand-written soft actor-critic step. Nothing here shares code paths with
// the routines it checks beyond the parameter containers.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "brac/mlp.hpp"
#include "brac/tensor.hpp"

namespace brac::checks {

/// Plain-loop MLP forward. When `pattern` is non-null it receives the hidden
/// ReLU on/off pattern so finite-difference probes can detect kink crossings.
Tensor reference_forward(const Mlp& net, const Tensor& x, std::vector<bool>* pattern = nullptr);

struct GradCheck {
  double max_relative_error = 0.0;
  std::size_t entries_checked = 0;
  std::size_t entries_skipped = 0;  // probes that straddled a ReLU kink
};

/// Compares tape gradients of 0.5 * mean((net(x) - y)^2) against central
/// differences with step h on up to `probes` randomly chosen parameters.
/// Relative error is |a - b| / max(|a|, |b|, floor).
GradCheck finite_difference_mlp(const Mlp& net, const Tensor& x, const Tensor& y, double h, std::size_t probes,
                                std::uint64_t seed, double floor = 1e-6);

/// Biased V-statistic squared MMD with a Laplacian kernel, by direct double loops.
double mmd_squared_bruteforce(const Tensor& x, const Tensor& y, double sigma);

struct MmdSweep {
  std::size_t instances = 0;
  double max_abs_error = 0.0;
  bool self_exactly_zero = true;
};
/// mmd_squared against the double loop on random instances (n, m <= 32, d <= 8).
MmdSweep mmd_oracle_sweep(std::size_t instances, std::uint64_t seed);

/// Primal KL estimate between squashed 1-D Gaussians with pre-tanh N(0,1) and
/// N(1,1) on [-1, 1]. Analytic value 0.5.
double kl_primal_gaussian_pair(std::size_t samples, std::uint64_t seed);
/// Dual KL estimate for N(0,1) (policy) vs N(1,1) (behavior) after `steps`
/// discriminator updates with the default discriminator settings.
double kl_dual_gaussian_pair(std::size_t steps, std::uint64_t seed, std::size_t batch = 64);
/// Dual Wasserstein estimate between point masses at 0 (policy) and 1 (behavior).
double wasserstein_point_masses(std::size_t steps, std::uint64_t seed, std::size_t batch = 64);

struct SuiteResult {
  std::string name;
  bool passed = true;
  std::vector<std::string> lines;
};

/// Autodiff vs finite differences on random MLPs (hidden sizes up to 300).
SuiteResult run_grad_suite(std::size_t trials, std::uint64_t seed);
/// Divergence estimators against brute-force and analytic oracles.
SuiteResult run_divergence_suite(std::uint64_t seed);
/// Target combiner exact values.
SuiteResult run_combiner_suite();
struct SacComparison {
  double max_policy_diff = 0.0;
  double max_critic_diff = 0.0;
  double max_target_diff = 0.0;
  double alpha_diff = 0.0;
};
/// One value-penalty step with the single-sample entropy divergence against a
/// hand-written soft actor-critic step on the same frozen batch and noise.
SacComparison sac_step_comparison(std::uint64_t seed, bool adaptive_alpha);
/// Value-penalty entropy step vs a reference soft actor-critic step.
SuiteResult run_sac_equivalence_suite(std::uint64_t seed);

}  // namespace brac::checks
