#include "brac/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "brac/errors.hpp"

namespace brac {

namespace {

Var concat_sa(Tape& tape, const Tensor& s, const Tensor& a) {
  return ad::concat_cols(tape.constant_ref(s), tape.constant_ref(a));
}

Tensor bounds_row(const ActionBounds& b, bool scale) {
  Tensor t = Tensor::matrix(1, b.dim());
  for (std::size_t d = 0; d < b.dim(); ++d) t[d] = scale ? b.scale(d) : b.shift(d);
  return t;
}

// Clamp into the box on the tape, per dimension.
Var clip_to_bounds(Tape& tape, Var actions, const ActionBounds& b) {
  Tensor inv = bounds_row(b, true);
  for (double& v : inv.storage()) v = 1.0 / v;
  const Var unit = ad::mul(ad::sub(actions, tape.constant(bounds_row(b, false))), tape.constant(std::move(inv)));
  return ad::add(ad::mul(ad::clamp(unit, -1.0, 1.0), tape.constant(bounds_row(b, true))),
                 tape.constant(bounds_row(b, false)));
}

Tensor repeat_rows(const Tensor& x, std::size_t n) {
  Tensor out = Tensor::matrix(x.rows() * n, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < n; ++j) std::copy(x.row(i).begin(), x.row(i).end(), out.row(i * n + j).begin());
  }
  return out;
}

Tensor concat_value(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::matrix(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy(a.row(i).begin(), a.row(i).end(), out.row(i).begin());
    std::copy(b.row(i).begin(), b.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

// n perturbed behavior candidates per state, clipped to the bounds; rows state-major.
Tensor bcq_candidates(const BcqConfig& bcq, const Mlp& xi, const TanhGaussianPolicy& behavior, const Tensor& states,
                      const Tensor& rep_states, Rng& rng) {
  const std::size_t b = states.rows(), a = behavior.action_dim(), n = bcq.candidates;
  Tensor cand = behavior.sample(states, n, rng).first.reshaped({b * n, a});
  if (bcq.phi > 0.0) {
    const Tensor raw = xi.predict(concat_value(rep_states, cand));
    for (std::size_t i = 0; i < cand.size(); ++i) cand[i] += bcq.phi * std::tanh(raw[i]);
  }
  return behavior.bounds().clip(cand);
}

void check_finite(double v, const char* what, std::int64_t step) {
  if (!std::isfinite(v)) {
    throw TrainingError(std::string("non-finite ") + what + " at step " + std::to_string(step));
  }
}

const char* mode_name(PenaltyMode m) {
  return m == PenaltyMode::kValuePenalty ? "value_penalty" : "policy_regularization";
}

const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kBrac: return "brac";
    case Algorithm::kBcq: return "bcq";
    case Algorithm::kBc: return "bc";
  }
  return "?";
}

}  // namespace

void AlphaConfig::validate() const {
  if (!(value >= 0.0) || !std::isfinite(value)) throw ConfigError("alpha must be a finite non-negative number");
  if (adaptive) {
    if (!(value > 0.0)) throw ConfigError("adaptive alpha needs a positive starting value");
    if (!(epsilon > 0.0)) throw ConfigError("divergence threshold epsilon must be positive");
    if (!(dual_lr > 0.0)) throw ConfigError("alpha dual learning rate must be positive");
  }
}

AdaptiveAlpha::AdaptiveAlpha(double initial_alpha, double epsilon, double dual_lr)
    : log_alpha_(std::log(initial_alpha)), epsilon_(epsilon), dual_lr_(dual_lr) {
  AlphaConfig{true, initial_alpha, epsilon, dual_lr}.validate();
}

double AdaptiveAlpha::alpha() const { return std::exp(log_alpha_); }

double AdaptiveAlpha::update(double mean_divergence) {
  if (!std::isfinite(mean_divergence)) throw ContractError("adaptive alpha: mean divergence is not finite");
  log_alpha_ += dual_lr_ * (mean_divergence - epsilon_);
  return alpha();
}

void BcqConfig::validate() const {
  if (!(phi >= 0.0)) throw ConfigError("bcq phi must be non-negative");
  if (candidates == 0) throw ConfigError("bcq needs at least one candidate");
  if (!(learning_rate > 0.0)) throw ConfigError("bcq learning rate must be positive");
}

void TrainerConfig::validate() const {
  alpha.validate();
  divergence.validate();
  combiner.validate();
  bcq.validate();
  if (k == 0) throw ConfigError("ensemble size k must be at least 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must be in (0, 1)");
  if (!(policy_lr > 0.0)) throw ConfigError("policy learning rate must be positive");
  if (!(q_lr > 0.0)) throw ConfigError("critic learning rate must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must be in (0, 1]");
  if (eval_points == 0) throw ConfigError("eval_points must be at least 1");
  if (q_window == 0) throw ConfigError("q_window must be at least 1");
  if (algorithm == Algorithm::kBrac && divergence.kind == DivergenceKind::kEntropySingleSample &&
      divergence.n_samples != 1) {
    throw ConfigError("entropy_single_sample uses exactly one sample");
  }
}

// ---- config serialization

nlohmann::json config_to_json(const TrainerConfig& c) {
  nlohmann::json j;
  j["algo"] = c.algo;
  j["algorithm"] = algorithm_name(c.algorithm);
  j["mode"] = mode_name(c.mode);
  j["divergence"] = {{"kind", divergence_name(c.divergence.kind)},
                     {"mmd_sigma", c.divergence.mmd_sigma},
                     {"n_samples", c.divergence.n_samples},
                     {"discriminator_hidden", c.divergence.discriminator_hidden},
                     {"discriminator_lr", c.divergence.discriminator_lr},
                     {"inner_steps", c.divergence.inner_steps},
                     {"penalty_coef", c.divergence.penalty_coef}};
  j["alpha"] = {{"adaptive", c.alpha.adaptive},
                {"value", c.alpha.value},
                {"epsilon", c.alpha.epsilon},
                {"dual_lr", c.alpha.dual_lr}};
  j["k"] = c.k;
  j["combiner"] = {{"mode", c.combiner.mode == TargetCombiner::Mode::kMin ? "min" : "weighted"},
                   {"lambda", c.combiner.lambda}};
  j["gamma"] = c.gamma;
  j["policy_lr"] = c.policy_lr;
  j["q_lr"] = c.q_lr;
  j["batch_size"] = c.batch_size;
  j["total_steps"] = c.total_steps;
  j["tau"] = c.tau;
  j["seed"] = c.seed;
  j["policy_hidden"] = c.policy_hidden;
  j["q_hidden"] = c.q_hidden;
  j["bcq"] = {{"phi", c.bcq.phi},
              {"candidates", c.bcq.candidates},
              {"hidden", c.bcq.hidden},
              {"learning_rate", c.bcq.learning_rate}};
  j["eval_points"] = c.eval_points;
  j["q_window"] = c.q_window;
  return j;
}

namespace {

template <typename Fn>
void for_keys(const nlohmann::json& j, const std::string& where, Fn&& fn) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!fn(it.key(), it.value())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace

TrainerConfig config_from_json(const nlohmann::json& j, TrainerConfig c) {
  try {
    for_keys(j, "config", [&](const std::string& key, const nlohmann::json& v) {
      if (key == "algo") v.get_to(c.algo);
      else if (key == "algorithm") {
        const std::string a = v.get<std::string>();
        if (a == "brac") c.algorithm = Algorithm::kBrac;
        else if (a == "bcq") c.algorithm = Algorithm::kBcq;
        else if (a == "bc") c.algorithm = Algorithm::kBc;
        else throw ConfigError("unknown algorithm '" + a + "'");
      } else if (key == "mode") {
        const std::string m = v.get<std::string>();
        if (m == "value_penalty" || m == "vp") c.mode = PenaltyMode::kValuePenalty;
        else if (m == "policy_regularization" || m == "pr") c.mode = PenaltyMode::kPolicyRegularization;
        else throw ConfigError("unknown mode '" + m + "'");
      } else if (key == "divergence") {
        for_keys(v, "divergence", [&](const std::string& k2, const nlohmann::json& w) {
          if (k2 == "kind") c.divergence.kind = parse_divergence(w.get<std::string>());
          else if (k2 == "mmd_sigma") w.get_to(c.divergence.mmd_sigma);
          else if (k2 == "n_samples") w.get_to(c.divergence.n_samples);
          else if (k2 == "discriminator_hidden") w.get_to(c.divergence.discriminator_hidden);
          else if (k2 == "discriminator_lr") w.get_to(c.divergence.discriminator_lr);
          else if (k2 == "inner_steps") w.get_to(c.divergence.inner_steps);
          else if (k2 == "penalty_coef") w.get_to(c.divergence.penalty_coef);
          else return false;
          return true;
        });
      } else if (key == "alpha") {
        for_keys(v, "alpha", [&](const std::string& k2, const nlohmann::json& w) {
          if (k2 == "adaptive") w.get_to(c.alpha.adaptive);
          else if (k2 == "value") w.get_to(c.alpha.value);
          else if (k2 == "epsilon") w.get_to(c.alpha.epsilon);
          else if (k2 == "dual_lr") w.get_to(c.alpha.dual_lr);
          else return false;
          return true;
        });
      } else if (key == "k") v.get_to(c.k);
      else if (key == "combiner") {
        for_keys(v, "combiner", [&](const std::string& k2, const nlohmann::json& w) {
          if (k2 == "mode") {
            const std::string m = w.get<std::string>();
            if (m == "min") c.combiner.mode = TargetCombiner::Mode::kMin;
            else if (m == "weighted") c.combiner.mode = TargetCombiner::Mode::kWeighted;
            else throw ConfigError("unknown combiner '" + m + "'");
          } else if (k2 == "lambda") w.get_to(c.combiner.lambda);
          else return false;
          return true;
        });
      } else if (key == "gamma") v.get_to(c.gamma);
      else if (key == "policy_lr") v.get_to(c.policy_lr);
      else if (key == "q_lr") v.get_to(c.q_lr);
      else if (key == "batch_size") v.get_to(c.batch_size);
      else if (key == "total_steps") v.get_to(c.total_steps);
      else if (key == "tau") v.get_to(c.tau);
      else if (key == "seed") v.get_to(c.seed);
      else if (key == "policy_hidden") v.get_to(c.policy_hidden);
      else if (key == "q_hidden") v.get_to(c.q_hidden);
      else if (key == "bcq") {
        for_keys(v, "bcq", [&](const std::string& k2, const nlohmann::json& w) {
          if (k2 == "phi") w.get_to(c.bcq.phi);
          else if (k2 == "candidates") w.get_to(c.bcq.candidates);
          else if (k2 == "hidden") w.get_to(c.bcq.hidden);
          else if (k2 == "learning_rate") w.get_to(c.bcq.learning_rate);
          else return false;
          return true;
        });
      } else if (key == "eval_points") v.get_to(c.eval_points);
      else if (key == "q_window") v.get_to(c.q_window);
      else return false;
      return true;
    });
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- presets

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"mmd_vp",    "mmd_pr", "kl_vp", "kl_pr", "kldual_vp", "kldual_pr",
                                              "w_vp",      "w_pr",   "bear",  "bcq",   "sac",       "bc"};
  return names;
}

TrainerConfig preset(const std::string& algo, std::size_t action_dim) {
  TrainerConfig c;
  c.algo = algo;
  const auto split = algo.rfind('_');
  const std::string family = split == std::string::npos ? algo : algo.substr(0, split);
  const std::string suffix = split == std::string::npos ? "" : algo.substr(split + 1);
  if (suffix == "vp" || suffix == "pr") {
    c.mode = suffix == "vp" ? PenaltyMode::kValuePenalty : PenaltyMode::kPolicyRegularization;
    if (family == "mmd") {
      c.divergence.kind = DivergenceKind::kMmd;
      c.alpha.value = 30.0;
    } else if (family == "kl") {
      c.divergence.kind = DivergenceKind::kKlPrimal;
      c.alpha.value = 1.0;
    } else if (family == "kldual") {
      c.divergence.kind = DivergenceKind::kKlDual;
      c.alpha.value = 1.0;
    } else if (family == "w") {
      c.divergence.kind = DivergenceKind::kWasserstein;
      c.alpha.value = 3.0;
    } else {
      throw ConfigError("unknown algorithm '" + algo + "'");
    }
  } else if (algo == "bear") {
    c.mode = PenaltyMode::kPolicyRegularization;
    c.divergence.kind = DivergenceKind::kMmd;
    c.alpha = AlphaConfig{true, 1.0, 0.05, 0.01};
    c.k = 4;
    c.combiner = TargetCombiner::weighted(0.75);
    c.policy_hidden = {400, 300};
    c.q_hidden = {400, 300};
  } else if (algo == "bcq") {
    c.algorithm = Algorithm::kBcq;
    c.combiner = TargetCombiner::weighted(0.75);
    c.batch_size = 100;
    c.q_hidden = {400, 300};
    c.bcq.hidden = {400, 300};
  } else if (algo == "sac") {
    c.mode = PenaltyMode::kValuePenalty;
    c.divergence.kind = DivergenceKind::kEntropySingleSample;
    c.divergence.n_samples = 1;
    // Target entropy -|A|: the constraint E[log pi] <= |A|.
    c.alpha = AlphaConfig{true, 1.0, static_cast<double>(action_dim), 0.01};
  } else if (algo == "bc") {
    c.algorithm = Algorithm::kBc;
    c.policy_lr = 1e-3;
  } else {
    throw ConfigError("unknown algorithm '" + algo + "'");
  }
  c.validate();
  return c;
}

void apply_desk_scale(TrainerConfig& c) {
  c.policy_hidden = {32, 32};
  c.q_hidden = {32, 32};
  c.divergence.discriminator_hidden = {32, 32};
  c.bcq.hidden = {32, 32};
  c.batch_size = std::min<std::size_t>(c.batch_size, 64);
  if (c.divergence.kind == DivergenceKind::kMmd || c.divergence.kind == DivergenceKind::kKlPrimal) {
    c.divergence.n_samples = 4;
  } else if (c.divergence.kind != DivergenceKind::kEntropySingleSample) {
    c.divergence.n_samples = 1;
  }
}

std::string strength_name(const TrainerConfig& c) {
  if (c.algorithm == Algorithm::kBcq) return "phi";
  if (c.algorithm == Algorithm::kBc || c.divergence.kind == DivergenceKind::kEntropySingleSample) return "";
  return c.alpha.adaptive ? "epsilon" : "alpha";
}

double strength_value(const TrainerConfig& c) {
  const std::string n = strength_name(c);
  if (n == "phi") return c.bcq.phi;
  if (n == "epsilon") return c.alpha.epsilon;
  if (n == "alpha") return c.alpha.value;
  return 0.0;
}

void set_strength(TrainerConfig& c, double value) {
  const std::string n = strength_name(c);
  if (n == "phi") c.bcq.phi = value;
  else if (n == "epsilon") c.alpha.epsilon = value;
  else if (n == "alpha") c.alpha.value = value;
  else throw ConfigError(c.algo + " has no regularization strength to set");
}

// ---- BCQ

Tensor bcq_select(const BcqConfig& bcq, const Mlp& xi, const QEnsemble& ens, const TanhGaussianPolicy& behavior,
                  const Tensor& states, Rng& rng) {
  bcq.validate();
  const std::size_t b = states.rows(), a = behavior.action_dim(), n = bcq.candidates;
  const Tensor rep = repeat_rows(states, n);
  const Tensor cand = bcq_candidates(bcq, xi, behavior, states, rep, rng);
  const Tensor q = ens.q_values(rep, cand);
  Tensor out = Tensor::matrix(b, a);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    double best_q = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const auto row = q.row(i * n + j);
      const double m = *std::min_element(row.begin(), row.end());
      if (j == 0 || m > best_q) {
        best = j;
        best_q = m;
      }
    }
    std::copy(cand.row(i * n + best).begin(), cand.row(i * n + best).end(), out.row(i).begin());
  }
  return out;
}

// ---- Trainer

Trainer::Trainer(TrainerConfig cfg, std::size_t state_dim, ActionBounds bounds, const TanhGaussianPolicy* behavior)
    : cfg_(std::move(cfg)), rng_(cfg_.seed), behavior_(behavior) {
  cfg_.validate();
  const std::size_t ad = bounds.dim();
  policy_ = TanhGaussianPolicy(state_dim, bounds, cfg_.policy_hidden, rng_);
  policy_opt_ = Adam(policy_.trunk(), cfg_.policy_lr);
  if (cfg_.algorithm == Algorithm::kBc) return;
  critic_ = QEnsemble(state_dim, ad, cfg_.k, cfg_.q_hidden, rng_, cfg_.tau);
  for (std::size_t j = 0; j < cfg_.k; ++j) critic_opt_.emplace_back(critic_.member(j), cfg_.q_lr);
  if (cfg_.algorithm == Algorithm::kBrac) {
    divergence_ = DivergenceEstimator(cfg_.divergence, state_dim, ad, behavior_, rng_);
    if (cfg_.alpha.adaptive) adaptive_.emplace(cfg_.alpha.value, cfg_.alpha.epsilon, cfg_.alpha.dual_lr);
  } else {
    if (behavior_ == nullptr) throw ConfigError("bcq needs a cloned behavior policy");
    if (behavior_->state_dim() != state_dim || !(behavior_->bounds() == bounds)) {
      throw ConfigError("cloned behavior policy does not match the task");
    }
    std::vector<std::size_t> sizes{state_dim + ad};
    sizes.insert(sizes.end(), cfg_.bcq.hidden.begin(), cfg_.bcq.hidden.end());
    sizes.push_back(ad);
    xi_ = Mlp(sizes, rng_);
    xi_opt_ = Adam(xi_, cfg_.bcq.learning_rate);
  }
}

double Trainer::alpha() const { return adaptive_ ? adaptive_->alpha() : cfg_.alpha.value; }

double Trainer::critic_alpha() const { return cfg_.mode == PenaltyMode::kValuePenalty ? alpha() : 0.0; }

CriticStats Trainer::regress(const TransitionBatch& batch, const Tensor& targets) {
  const std::size_t b = batch.size();
  const Tensor y({b, 1}, std::vector<double>(targets.values().begin(), targets.values().end()));
  CriticStats stats;
  for (std::size_t j = 0; j < critic_.k(); ++j) {
    Tape tape(step_);
    const Var q = critic_.member(j).forward(tape, concat_sa(tape, batch.states, batch.actions), true);
    const Var loss = ad::mean(ad::square(ad::sub(q, tape.constant_ref(y))));
    tape.backward(loss);
    critic_opt_[j].step(critic_.member(j), tape);
    stats.td_loss += loss.value().item();
    double s = 0.0;
    for (double v : q.value().values()) s += v;
    stats.mean_q += s / static_cast<double>(b);
  }
  stats.td_loss /= static_cast<double>(critic_.k());
  stats.mean_q /= static_cast<double>(critic_.k());
  critic_.soft_update_targets();
  stats.targets = targets;
  return stats;
}

CriticStats Trainer::critic_update(const TransitionBatch& batch) {
  if (cfg_.algorithm == Algorithm::kBcq) return bcq_critic_update(batch);
  if (cfg_.algorithm != Algorithm::kBrac) throw ContractError("critic_update: algorithm has no critic");
  const std::size_t b = batch.size();
  Tensor next_actions, penalty = Tensor::matrix(b, 1);
  const double a_eff = critic_alpha();
  {
    Tape tape(step_);
    const Var s2 = tape.constant_ref(batch.next_states);
    const PolicySample next = policy_.sample(tape, s2, 1, rng_, false);
    next_actions = next.actions.value();
    if (a_eff != 0.0) {
      const bool reuse = cfg_.divergence.kind == DivergenceKind::kEntropySingleSample;
      const Var d = divergence_.estimate(tape, s2, policy_, batch.next_actions, rng_, false, reuse ? &next : nullptr);
      penalty = d.value();
    }
  }
  return regress(batch, td_target(critic_, cfg_.combiner, batch, next_actions, penalty, a_eff, cfg_.gamma));
}

ActorStats Trainer::actor_update(const TransitionBatch& batch) {
  if (cfg_.algorithm == Algorithm::kBcq) return {bcq_actor_update(batch), 0.0};
  if (cfg_.algorithm == Algorithm::kBc) return {behavior_clone_step(batch), 0.0};
  const double alpha = this->alpha();
  const bool regularized = adaptive_.has_value() || alpha != 0.0;
  if (regularized && divergence_.has_discriminator()) {
    divergence_.train_discriminator(batch.states, policy_, batch.actions, rng_);
  }
  Tape tape(step_);
  const Var s = tape.constant_ref(batch.states);
  const PolicySample draw = policy_.sample(tape, s, 1, rng_, true);
  Var loss = ad::neg(ad::mean(critic_.min_q(tape, s, draw.actions, false)));
  ActorStats stats;
  if (regularized) {
    const bool reuse = cfg_.divergence.kind == DivergenceKind::kEntropySingleSample;
    const Var d = ad::mean(divergence_.estimate(tape, s, policy_, batch.actions, rng_, true, reuse ? &draw : nullptr));
    stats.mean_divergence = d.value().item();
    loss = ad::add(loss, ad::scale(d, alpha));
  }
  tape.backward(loss);
  policy_opt_.step(policy_.trunk(), tape);
  stats.actor_loss = loss.value().item();
  return stats;
}

double Trainer::behavior_clone_step(const TransitionBatch& batch) {
  Tape tape(step_);
  const Tensor a = policy_.bounds().clip_inward(batch.actions);
  const Var loss = ad::neg(ad::mean(policy_.log_prob(tape, tape.constant_ref(batch.states), a, true)));
  tape.backward(loss);
  policy_opt_.step(policy_.trunk(), tape);
  return loss.value().item();
}

CriticStats Trainer::bcq_critic_update(const TransitionBatch& batch) {
  const std::size_t b = batch.size(), n = cfg_.bcq.candidates;
  const Tensor rep = repeat_rows(batch.next_states, n);
  const Tensor cand = bcq_candidates(cfg_.bcq, xi_, *behavior_, batch.next_states, rep, rng_);
  const Tensor q = combine(critic_.q_values(rep, cand, QEnsemble::Which::kTarget), cfg_.combiner);
  Tensor y(std::vector<std::size_t>{b});
  for (std::size_t i = 0; i < b; ++i) {
    double best = q[i * n];
    for (std::size_t j = 1; j < n; ++j) best = std::max(best, q[i * n + j]);
    y[i] = batch.dones[i] != 0.0 ? batch.rewards[i] : batch.rewards[i] + cfg_.gamma * best;
  }
  return regress(batch, y);
}

double Trainer::bcq_actor_update(const TransitionBatch& batch) {
  const std::size_t b = batch.size(), a = behavior_->action_dim();
  const Tensor base = behavior_->sample(batch.states, 1, rng_).first.reshaped({b, a});
  Tape tape(step_);
  const Var s = tape.constant_ref(batch.states);
  const Var pert = ad::scale(ad::tanh(xi_.forward(tape, concat_sa(tape, batch.states, base), true)), cfg_.bcq.phi);
  const Var act = clip_to_bounds(tape, ad::add(tape.constant_ref(base), pert), behavior_->bounds());
  const Var loss = ad::neg(ad::mean(critic_.min_q(tape, s, act, false)));
  tape.backward(loss);
  xi_opt_.step(xi_, tape);
  return loss.value().item();
}

Trainer::StepStats Trainer::train_step(const OfflineDataset& data) {
  const TransitionBatch batch = data.sample_batch(cfg_.batch_size, rng_);
  ++step_;
  StepStats st;
  if (cfg_.algorithm != Algorithm::kBc) st.critic = critic_update(batch);
  st.actor = actor_update(batch);
  if (adaptive_) adaptive_->update(st.actor.mean_divergence);
  check_finite(st.critic.td_loss, "critic loss", step_);
  check_finite(st.critic.mean_q, "Q value", step_);
  check_finite(st.actor.actor_loss, "actor loss", step_);
  if (std::abs(st.critic.mean_q) > 1e12) throw TrainingError("Q value overflow at step " + std::to_string(step_));
  return st;
}

BatchActionSelector Trainer::selector(const EvalProtocol& protocol) const {
  switch (cfg_.algorithm) {
    case Algorithm::kBc:
      return [this](const Tensor& s, Rng&) { return policy_.mean_action(s); };
    case Algorithm::kBcq:
      return [this](const Tensor& s, Rng& r) { return bcq_select(cfg_.bcq, xi_, critic_, *behavior_, s, r); };
    case Algorithm::kBrac:
      break;
  }
  const std::size_t c = protocol.candidates;
  return [this, c](const Tensor& s, Rng& r) { return select_max_q(policy_, critic_, s, c, r); };
}

// ---- run records

nlohmann::json RunRecord::to_json() const {
  nlohmann::json j;
  j["config"] = config_to_json(config);
  j["env"] = env;
  j["dataset"] = dataset;
  nlohmann::json ev = nlohmann::json::array(), qt = nlohmann::json::array();
  for (const EvalPoint& p : eval_trace) ev.push_back({p.step, p.mean_return});
  for (const QPoint& p : q_trace) qt.push_back({p.step, p.mean_q});
  j["eval_trace"] = ev;
  j["q_trace"] = qt;
  j["mean_q_last_window"] = mean_q_last_window;
  j["final_score"] = final_score;
  j["reported_score"] = reported_score();
  j["failed"] = failed;
  j["failure"] = failure;
  j["final_alpha"] = final_alpha;
  j["steps_completed"] = steps_completed;
  return j;
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
  RunRecord r;
  try {
    r.config = config_from_json(j.at("config"));
    j.at("env").get_to(r.env);
    j.at("dataset").get_to(r.dataset);
    for (const auto& p : j.at("eval_trace")) r.eval_trace.push_back({p.at(0).get<std::size_t>(), p.at(1).get<double>()});
    for (const auto& p : j.at("q_trace")) r.q_trace.push_back({p.at(0).get<std::size_t>(), p.at(1).get<double>()});
    j.at("mean_q_last_window").get_to(r.mean_q_last_window);
    j.at("final_score").get_to(r.final_score);
    j.at("failed").get_to(r.failed);
    j.at("failure").get_to(r.failure);
    j.at("final_alpha").get_to(r.final_alpha);
    j.at("steps_completed").get_to(r.steps_completed);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("run record: ") + e.what());
  }
  return r;
}

RunRecord train_offline(const TrainerConfig& cfg, const OfflineDataset& data, const TanhGaussianPolicy* behavior,
                        const Environment& env, const EvalProtocol& protocol, const ProgressFn& progress,
                        const FinishFn& finish) {
  protocol.validate();
  if (data.state_dim() != env.state_dim() || data.action_dim() != env.action_dim()) {
    throw ConfigError("dataset dimensions do not match environment " + env.name());
  }
  RunRecord rec;
  rec.config = cfg;
  rec.env = env.name();
  rec.dataset = data.noise_tag();
  Trainer trainer(cfg, env.state_dim(), env.bounds(), behavior);
  rec.final_alpha = trainer.alpha();
  Rng eval_rng(derive_seed(cfg.seed, {0xe7a1}));
  const BatchActionSelector select = trainer.selector(protocol);
  auto eval_now = [&](std::size_t step) {
    const double v = evaluate(env, select, protocol, eval_rng);
    if (!std::isfinite(v)) throw TrainingError("non-finite evaluation return at step " + std::to_string(step));
    rec.eval_trace.push_back({step, v});
    if (progress) progress(rec.eval_trace.back());
  };
  std::vector<double> ring(cfg.q_window, 0.0);
  std::size_t filled = 0;
  try {
    eval_now(0);
    const std::size_t interval = std::max<std::size_t>(1, cfg.total_steps / cfg.eval_points);
    double window_sum = 0.0;
    std::size_t window_n = 0;
    for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
      const Trainer::StepStats st = trainer.train_step(data);
      ring[(step - 1) % ring.size()] = st.critic.mean_q;
      filled = std::min(filled + 1, ring.size());
      window_sum += st.critic.mean_q;
      ++window_n;
      rec.steps_completed = step;
      if (step % interval == 0 || step == cfg.total_steps) {
        eval_now(step);
        rec.q_trace.push_back({step, window_sum / static_cast<double>(window_n)});
        window_sum = 0.0;
        window_n = 0;
      }
    }
    rec.final_score = tail_mean(rec.eval_trace, protocol.tail_points);
  } catch (const TrainingError& e) {
    rec.failed = true;
    rec.failure = e.what();
    rec.final_score = 0.0;
  }
  double s = 0.0;
  for (std::size_t i = 0; i < filled; ++i) s += ring[i];
  rec.mean_q_last_window = filled ? s / static_cast<double>(filled) : 0.0;
  rec.final_alpha = std::isfinite(trainer.alpha()) ? trainer.alpha() : 0.0;
  if (finish) finish(trainer);
  return rec;
}

// ---- online pretraining

PretrainResult pretrain_online(const Environment& env, const PretrainConfig& cfg) {
  if (!(cfg.tolerance >= 0.0) || cfg.eval_every == 0 || cfg.eval_episodes == 0 || cfg.batch_size == 0) {
    throw ConfigError("pretrain: invalid configuration");
  }
  Rng rng(cfg.seed);
  EvalProtocol proto;
  proto.episodes = cfg.eval_episodes;
  PretrainResult res;
  res.random_return = evaluate(
      env,
      [&env](const Tensor& s, Rng& r) {
        Tensor a = Tensor::matrix(s.rows(), env.action_dim());
        for (std::size_t i = 0; i < s.rows(); ++i) {
          const std::vector<double> u = uniform_action(env, r);
          std::copy(u.begin(), u.end(), a.row(i).begin());
        }
        return a;
      },
      proto, rng);
  res.controller_return = evaluate(
      env,
      [&env](const Tensor& s, Rng&) {
        Tensor a = Tensor::matrix(s.rows(), env.action_dim());
        for (std::size_t i = 0; i < s.rows(); ++i) {
          const std::vector<double> u = env.reference_action(s.row(i));
          std::copy(u.begin(), u.end(), a.row(i).begin());
        }
        return a;
      },
      proto, rng);
  const double span = res.controller_return - res.random_return;
  if (!(span > 0.0)) throw ConfigError("pretrain: reference controller does not beat random play");

  TrainerConfig tc = preset("sac", env.action_dim());
  tc.policy_hidden = cfg.policy_hidden;
  tc.q_hidden = cfg.q_hidden;
  tc.batch_size = cfg.batch_size;
  tc.policy_lr = cfg.policy_lr;
  tc.seed = derive_seed(cfg.seed, {1});
  Trainer trainer(tc, env.state_dim(), env.bounds(), nullptr);
  OfflineDataset replay(env.name(), env.state_dim(), env.action_dim(), "online");
  const BatchActionSelector stochastic = [&trainer](const Tensor& s, Rng& r) {
    return trainer.policy().sample(s, 1, r).first.reshaped({s.rows(), trainer.policy().action_dim()});
  };

  double best_gap = 1e300;
  res.policy = trainer.policy();
  EnvState state = env.reset(rng.next_u64());
  Tensor obs = Tensor::matrix(1, env.state_dim());
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    std::vector<double> action;
    if (step <= cfg.warmup) {
      action = uniform_action(env, rng);
    } else {
      std::copy(state.obs.begin(), state.obs.end(), obs.row(0).begin());
      const Tensor a = stochastic(obs, rng);
      action.assign(a.values().begin(), a.values().end());
    }
    StepResult r = env.step(state, action);
    replay.add(state.obs, env.bounds().clip(Tensor({1, action.size()}, action)).values(), r.reward, r.next.obs, false);
    state = r.done ? env.reset(rng.next_u64()) : std::move(r.next);
    if (step > cfg.warmup) trainer.train_step(replay);
    if (step > cfg.warmup && step % cfg.eval_every == 0) {
      const double ret = evaluate(env, stochastic, proto, rng);
      const double norm = (ret - res.random_return) / span;
      const double gap = std::abs(norm - cfg.target);
      if (gap < best_gap) {
        best_gap = gap;
        res.policy = trainer.policy();
        res.policy_return = ret;
        res.normalized = norm;
        res.steps = step;
      }
      if (gap <= cfg.tolerance) {
        res.reached = true;
        break;
      }
    }
  }
  return res;
}

}  // namespace brac
