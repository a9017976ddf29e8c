#pragma once

#include <optional>
#include <string>
#include <vector>

#include "brac/adam.hpp"
#include "brac/autodiff.hpp"
#include "brac/mlp.hpp"
#include "brac/policy.hpp"
#include "brac/rng.hpp"
#include "brac/tensor.hpp"

namespace brac {

enum class DivergenceKind { kMmd, kKlPrimal, kKlDual, kWasserstein, kEntropySingleSample };

/// "mmd", "kl_primal", "kl_dual", "wasserstein", "entropy_single_sample".
DivergenceKind parse_divergence(const std::string& name);
std::string divergence_name(DivergenceKind kind);

/// Squared MMD with the Laplacian kernel exp(-|x-y|_1 / sigma) between the
/// rows of X and Y, including self-pairs (biased V-statistic).
double mmd_squared(const Tensor& x, const Tensor& y, double sigma);

/// Variational discriminator g(s, a) for the dual forms.
///   kl:          maximize E_b[t] - E_pi[f*(t)],  t = -exp(u), f*(t) = -log(-t) - 1
///   wasserstein: maximize E_b[g] - E_pi[g]
/// Both subtract a one-sided gradient penalty coef * E[max(0, |d out / d a| - 1)^2]
/// on random interpolates between behavior and policy actions.
class DualDiscriminator {
 public:
  enum class Form { kKl, kWasserstein };

  DualDiscriminator() = default;
  DualDiscriminator(Form form, std::size_t state_dim, std::size_t action_dim, const std::vector<std::size_t>& hidden,
                    double learning_rate, double penalty_coef, Rng& rng);

  Form form() const { return form_; }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

  /// One Adam ascent step. Policy actions are (batch*n, A) and behavior actions
  /// (batch*m, A), grouped per state. Returns the penalized objective before the step.
  double step(const Tensor& states, const Tensor& policy_actions, std::size_t n, const Tensor& behavior_actions,
              std::size_t m, Rng& rng);
  double last_objective() const { return last_objective_; }
  double last_penalty() const { return last_penalty_; }

  /// Per-state dual objective (batch, 1) with the discriminator frozen;
  /// differentiable through `policy_actions`.
  Var estimate(Tape& tape, Var states, Var policy_actions, std::size_t n, Var behavior_actions, std::size_t m) const;
  /// Mapped discriminator output (t for kl, g for wasserstein), shape (rows, 1).
  Tensor mapped_output(const Tensor& states, const Tensor& actions) const;

 private:
  Var objective_terms(Tape& tape, Var states, Var policy_actions, std::size_t n, Var behavior_actions, std::size_t m,
                      bool trainable) const;

  Form form_ = Form::kWasserstein;
  Mlp net_;
  Adam opt_;
  double penalty_coef_ = 5.0;
  std::size_t state_dim_ = 0;
  double last_objective_ = 0.0;
  double last_penalty_ = 0.0;
};

struct DivergenceConfig {
  DivergenceKind kind = DivergenceKind::kMmd;
  double mmd_sigma = 20.0;
  std::size_t n_samples = 10;
  std::vector<std::size_t> discriminator_hidden{300, 300};
  double discriminator_lr = 1e-4;
  int inner_steps = 3;
  double penalty_coef = 5.0;

  void validate() const;
};

/// Sample-based D(pi(.|s), pi_b(.|s)), one value per state.
class DivergenceEstimator {
 public:
  DivergenceEstimator() = default;
  /// `behavior` is the cloned policy; required for mmd and kl_primal.
  DivergenceEstimator(DivergenceConfig cfg, std::size_t state_dim, std::size_t action_dim,
                      const TanhGaussianPolicy* behavior, Rng& rng);

  const DivergenceConfig& config() const { return cfg_; }
  DivergenceKind kind() const { return cfg_.kind; }
  bool has_discriminator() const { return discriminator_.has_value(); }
  DualDiscriminator& discriminator() { return *discriminator_; }
  const DualDiscriminator& discriminator() const { return *discriminator_; }

  /// Per-state estimate, shape (batch, 1). Gradients reach `pi` (when
  /// trainable) through its reparameterized samples only. `behavior_actions`
  /// (batch, A) are logged actions at these states, used by the dual forms.
  /// For entropy_single_sample a caller-provided single-sample draw is reused.
  Var estimate(Tape& tape, Var states, const TanhGaussianPolicy& pi, const Tensor& behavior_actions, Rng& rng,
               bool trainable = true, const PolicySample* reuse = nullptr) const;

  /// Runs the configured number of discriminator ascent steps (dual forms
  /// only). Returns the last penalized objective, 0 when there is no discriminator.
  double train_discriminator(const Tensor& states, const TanhGaussianPolicy& pi, const Tensor& behavior_actions,
                             Rng& rng);

 private:
  DivergenceConfig cfg_;
  const TanhGaussianPolicy* behavior_ = nullptr;
  std::optional<DualDiscriminator> discriminator_;
};

}  // namespace brac
