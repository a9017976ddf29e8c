#include "brac/divergence.hpp"

#include <cmath>

#include "brac/errors.hpp"

namespace brac {

DivergenceKind parse_divergence(const std::string& name) {
  if (name == "mmd") return DivergenceKind::kMmd;
  if (name == "kl_primal" || name == "kl") return DivergenceKind::kKlPrimal;
  if (name == "kl_dual") return DivergenceKind::kKlDual;
  if (name == "wasserstein" || name == "w") return DivergenceKind::kWasserstein;
  if (name == "entropy_single_sample" || name == "entropy") return DivergenceKind::kEntropySingleSample;
  throw ConfigError("unknown divergence '" + name + "'");
}

std::string divergence_name(DivergenceKind kind) {
  switch (kind) {
    case DivergenceKind::kMmd: return "mmd";
    case DivergenceKind::kKlPrimal: return "kl_primal";
    case DivergenceKind::kKlDual: return "kl_dual";
    case DivergenceKind::kWasserstein: return "wasserstein";
    case DivergenceKind::kEntropySingleSample: return "entropy_single_sample";
  }
  return "?";
}

double mmd_squared(const Tensor& x, const Tensor& y, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("mmd bandwidth must be positive");
  if (x.rows() == 0 || y.rows() == 0 || x.cols() != y.cols()) throw ConfigError("mmd_squared: bad sample shapes");
  Tape tape;
  return ad::mmd_laplacian(tape.constant_ref(x), tape.constant_ref(y), x.rows(), y.rows(), sigma).value().item();
}

DualDiscriminator::DualDiscriminator(Form form, std::size_t state_dim, std::size_t action_dim,
                                     const std::vector<std::size_t>& hidden, double learning_rate,
                                     double penalty_coef, Rng& rng)
    : form_(form), penalty_coef_(penalty_coef), state_dim_(state_dim) {
  if (!(penalty_coef >= 0.0)) throw ConfigError("gradient penalty coefficient must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("discriminator learning rate must be positive");
  std::vector<std::size_t> sizes{state_dim + action_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  net_ = Mlp(sizes, rng);
  opt_ = Adam(net_, learning_rate);
}

Var DualDiscriminator::objective_terms(Tape& tape, Var states, Var policy_actions, std::size_t n,
                                       Var behavior_actions, std::size_t m, bool trainable) const {
  const std::size_t batch = states.rows();
  if (n == 0 || m == 0 || policy_actions.rows() != batch * n || behavior_actions.rows() != batch * m) {
    throw ConfigError("dual objective: action groups do not match the state batch");
  }
  const Var s_pi = n > 1 ? ad::repeat_rows(states, n) : states;
  const Var s_b = m > 1 ? ad::repeat_rows(states, m) : states;
  const Var out_pi = net_.forward(tape, ad::concat_cols(s_pi, policy_actions), trainable);
  const Var out_b = net_.forward(tape, ad::concat_cols(s_b, behavior_actions), trainable);
  if (form_ == Form::kWasserstein) {
    return ad::sub(ad::group_mean(out_b, m), ad::group_mean(out_pi, n));
  }
  // t = -exp(u) and f*(t) = -log(-t) - 1 = -u - 1.
  const Var e_b = ad::group_mean(ad::neg(ad::exp(out_b)), m);
  const Var e_pi = ad::group_mean(ad::add_scalar(ad::neg(out_pi), -1.0), n);
  return ad::sub(e_b, e_pi);
}

double DualDiscriminator::step(const Tensor& states, const Tensor& policy_actions, std::size_t n,
                               const Tensor& behavior_actions, std::size_t m, Rng& rng) {
  Tape tape(opt_.state().step);
  const Var s = tape.constant_ref(states);
  const Var obj = ad::mean(
      objective_terms(tape, s, tape.constant_ref(policy_actions), n, tape.constant_ref(behavior_actions), m, true));
  Var total = obj;
  last_penalty_ = 0.0;
  if (penalty_coef_ > 0.0) {
    const std::size_t rows = policy_actions.rows(), a = policy_actions.cols();
    Tensor input = Tensor::matrix(rows, state_dim_ + a);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t i = r / n, j = r % n;
      const auto srow = states.row(i);
      const auto prow = policy_actions.row(r);
      const auto brow = behavior_actions.row(i * m + j % m);
      const double eps = rng.uniform();
      auto dst = input.row(r);
      std::copy(srow.begin(), srow.end(), dst.begin());
      for (std::size_t d = 0; d < a; ++d) dst[state_dim_ + d] = eps * brow[d] + (1.0 - eps) * prow[d];
    }
    const Var grad = net_.input_gradient(tape, tape.constant(std::move(input)), true);
    const Var ga = ad::slice_cols(grad, state_dim_, a);
    const Var norm = ad::sqrt(ad::add_scalar(ad::row_sum(ad::square(ga)), 1e-12));
    const Var pen = ad::scale(ad::mean(ad::square(ad::relu(ad::add_scalar(norm, -1.0)))), penalty_coef_);
    last_penalty_ = pen.value().item();
    total = ad::sub(obj, pen);
  }
  last_objective_ = total.value().item();
  tape.backward(ad::neg(total));
  opt_.step(net_, tape);
  return last_objective_;
}

Var DualDiscriminator::estimate(Tape& tape, Var states, Var policy_actions, std::size_t n, Var behavior_actions,
                                std::size_t m) const {
  return objective_terms(tape, states, policy_actions, n, behavior_actions, m, false);
}

Tensor DualDiscriminator::mapped_output(const Tensor& states, const Tensor& actions) const {
  Tensor sa = Tensor::matrix(states.rows(), states.cols() + actions.cols());
  for (std::size_t i = 0; i < states.rows(); ++i) {
    std::copy(states.row(i).begin(), states.row(i).end(), sa.row(i).begin());
    std::copy(actions.row(i).begin(), actions.row(i).end(), sa.row(i).begin() + static_cast<std::ptrdiff_t>(states.cols()));
  }
  Tensor out = net_.predict(sa);
  if (form_ == Form::kKl) {
    for (double& v : out.storage()) v = -std::exp(v);
  }
  return out;
}

void DivergenceConfig::validate() const {
  if (!(mmd_sigma > 0.0)) throw ConfigError("mmd bandwidth must be positive");
  if (n_samples == 0) throw ConfigError("divergence n_samples must be at least 1");
  if (kind == DivergenceKind::kMmd && n_samples < 2) throw ConfigError("mmd needs at least 2 samples per state");
  if (!(discriminator_lr > 0.0)) throw ConfigError("discriminator learning rate must be positive");
  if (inner_steps < 1) throw ConfigError("discriminator inner steps must be at least 1");
  if (!(penalty_coef >= 0.0)) throw ConfigError("gradient penalty coefficient must be non-negative");
}

DivergenceEstimator::DivergenceEstimator(DivergenceConfig cfg, std::size_t state_dim, std::size_t action_dim,
                                         const TanhGaussianPolicy* behavior, Rng& rng)
    : cfg_(std::move(cfg)), behavior_(behavior) {
  cfg_.validate();
  if ((cfg_.kind == DivergenceKind::kMmd || cfg_.kind == DivergenceKind::kKlPrimal) && behavior_ == nullptr) {
    throw ConfigError(divergence_name(cfg_.kind) + " needs a cloned behavior policy");
  }
  if (behavior_ && (behavior_->state_dim() != state_dim || behavior_->action_dim() != action_dim)) {
    throw ConfigError("cloned behavior policy dimensions do not match the task");
  }
  if (cfg_.kind == DivergenceKind::kKlDual || cfg_.kind == DivergenceKind::kWasserstein) {
    const auto form = cfg_.kind == DivergenceKind::kKlDual ? DualDiscriminator::Form::kKl
                                                           : DualDiscriminator::Form::kWasserstein;
    discriminator_.emplace(form, state_dim, action_dim, cfg_.discriminator_hidden, cfg_.discriminator_lr,
                           cfg_.penalty_coef, rng);
  }
}

Var DivergenceEstimator::estimate(Tape& tape, Var states, const TanhGaussianPolicy& pi,
                                  const Tensor& behavior_actions, Rng& rng, bool trainable,
                                  const PolicySample* reuse) const {
  const std::size_t n = cfg_.n_samples;
  switch (cfg_.kind) {
    case DivergenceKind::kMmd: {
      const PolicySample s = pi.sample(tape, states, n, rng, trainable);
      const PolicySample b = behavior_->sample(tape, states, n, rng, false);
      return ad::mmd_laplacian(s.actions, ad::stop_gradient(b.actions), n, n, cfg_.mmd_sigma);
    }
    case DivergenceKind::kKlPrimal: {
      if (!(behavior_->bounds() == pi.bounds())) throw ConfigError("kl_primal needs matching action bounds");
      // Both densities go through the same pre-squash formula, so identical
      // policies give exactly zero per sample.
      const PolicySample s = pi.sample(tape, states, n, rng, trainable);
      const Var lp_pi = pi.log_prob_pre_tanh(tape, states, s.pre_tanh, n, trainable);
      const Var lp_b = behavior_->log_prob_pre_tanh(tape, states, s.pre_tanh, n, false);
      return ad::group_mean(ad::sub(lp_pi, lp_b), n);
    }
    case DivergenceKind::kKlDual:
    case DivergenceKind::kWasserstein: {
      if (behavior_actions.rows() != states.rows()) throw ConfigError("dual estimate needs one logged action per state");
      const PolicySample s = pi.sample(tape, states, n, rng, trainable);
      return discriminator_->estimate(tape, states, s.actions, n, tape.constant_ref(behavior_actions), 1);
    }
    case DivergenceKind::kEntropySingleSample: {
      if (reuse != nullptr) {
        if (reuse->n != 1 || reuse->batch != states.rows()) throw ConfigError("entropy estimate reuses one draw per state");
        return reuse->log_probs;
      }
      return pi.sample(tape, states, 1, rng, trainable).log_probs;
    }
  }
  throw ConfigError("unhandled divergence kind");
}

double DivergenceEstimator::train_discriminator(const Tensor& states, const TanhGaussianPolicy& pi,
                                                const Tensor& behavior_actions, Rng& rng) {
  if (!discriminator_) return 0.0;
  const std::size_t n = cfg_.n_samples, a = pi.action_dim();
  double obj = 0.0;
  for (int k = 0; k < cfg_.inner_steps; ++k) {
    const Tensor actions = pi.sample(states, n, rng).first.reshaped({states.rows() * n, a});
    obj = discriminator_->step(states, actions, n, behavior_actions, 1, rng);
  }
  return obj;
}

}  // namespace brac
