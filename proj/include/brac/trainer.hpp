#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "brac/critic.hpp"
#include "brac/data.hpp"
#include "brac/divergence.hpp"
#include "brac/env.hpp"
#include "brac/eval.hpp"
#include "brac/policy.hpp"

namespace brac {

enum class Algorithm { kBrac, kBcq, kBc };
enum class PenaltyMode { kValuePenalty, kPolicyRegularization };

struct AlphaConfig {
  bool adaptive = false;
  /// Fixed alpha, or the starting alpha when adaptive.
  double value = 1.0;
  double epsilon = 0.05;
  double dual_lr = 0.01;

  void validate() const;
};

/// alpha = exp(log_alpha), moved by dual ascent on (mean divergence - epsilon).
class AdaptiveAlpha {
 public:
  AdaptiveAlpha() = default;
  AdaptiveAlpha(double initial_alpha, double epsilon, double dual_lr);

  double alpha() const;
  double log_alpha() const { return log_alpha_; }
  double epsilon() const { return epsilon_; }
  double dual_lr() const { return dual_lr_; }
  /// Throws ContractError for a non-finite divergence. Returns the new alpha.
  double update(double mean_divergence);

 private:
  double log_alpha_ = 0.0;
  double epsilon_ = 0.05;
  double dual_lr_ = 0.01;
};

struct BcqConfig {
  double phi = 0.05;
  std::size_t candidates = 10;
  std::vector<std::size_t> hidden{400, 300};
  double learning_rate = 1e-3;

  void validate() const;
};

struct TrainerConfig {
  std::string algo = "kl_vp";
  Algorithm algorithm = Algorithm::kBrac;
  PenaltyMode mode = PenaltyMode::kValuePenalty;
  DivergenceConfig divergence;
  AlphaConfig alpha;
  std::size_t k = 2;
  TargetCombiner combiner = TargetCombiner::min();
  double gamma = 0.99;
  double policy_lr = 1e-4;
  double q_lr = 1e-3;
  std::size_t batch_size = 256;
  std::size_t total_steps = 100000;
  double tau = 0.005;
  std::uint64_t seed = 0;
  std::vector<std::size_t> policy_hidden{200, 200};
  std::vector<std::size_t> q_hidden{300, 300};
  BcqConfig bcq;
  /// Evaluations after step 0 (every total_steps / eval_points steps).
  std::size_t eval_points = 100;
  /// Training batches averaged for the learned-Q statistic.
  std::size_t q_window = 500;

  void validate() const;
};

nlohmann::json config_to_json(const TrainerConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainerConfig config_from_json(const nlohmann::json& j, TrainerConfig base = {});

/// Algorithm names accepted by preset().
const std::vector<std::string>& preset_names();
/// Default settings for a named variant (mmd_vp ... w_pr, bear, bcq, sac, bc).
/// `action_dim` sets the SAC entropy threshold.
TrainerConfig preset(const std::string& algo, std::size_t action_dim);
/// Small networks and samplers for single-core runs.
void apply_desk_scale(TrainerConfig& cfg);
/// Name of the strength hyperparameter for an algorithm: "alpha", "epsilon" or "phi"
/// (empty for bc and sac).
std::string strength_name(const TrainerConfig& cfg);
double strength_value(const TrainerConfig& cfg);
void set_strength(TrainerConfig& cfg, double value);

/// Picks, per state, the best of `candidates` perturbed behavior samples
/// a_i + xi(s, a_i) by min-ensemble Q. xi outputs phi * tanh(raw).
Tensor bcq_select(const BcqConfig& bcq, const Mlp& xi, const QEnsemble& ens, const TanhGaussianPolicy& behavior,
                  const Tensor& states, Rng& rng);

struct CriticStats {
  double td_loss = 0.0;  // mean over members of mean squared error
  double mean_q = 0.0;   // mean of Q_j(s, a) over batch and members, before the step
  Tensor targets;        // (batch)
};

struct ActorStats {
  double actor_loss = 0.0;
  double mean_divergence = 0.0;
};

class Trainer {
 public:
  /// `behavior` must outlive the trainer; required by mmd, kl_primal and bcq.
  Trainer(TrainerConfig cfg, std::size_t state_dim, ActionBounds bounds, const TanhGaussianPolicy* behavior);

  const TrainerConfig& config() const { return cfg_; }
  TanhGaussianPolicy& policy() { return policy_; }
  const TanhGaussianPolicy& policy() const { return policy_; }
  QEnsemble& critic() { return critic_; }
  const QEnsemble& critic() const { return critic_; }
  DivergenceEstimator& divergence() { return divergence_; }
  Mlp& perturbation() { return xi_; }
  Adam& policy_optimizer() { return policy_opt_; }
  Adam& critic_optimizer(std::size_t j) { return critic_opt_[j]; }
  Rng& rng() { return rng_; }

  /// Actor-side alpha (fixed or adaptive).
  double alpha() const;
  /// Alpha inside the critic target: alpha in value-penalty mode, 0 otherwise.
  double critic_alpha() const;
  const std::optional<AdaptiveAlpha>& adaptive() const { return adaptive_; }

  CriticStats critic_update(const TransitionBatch& batch);
  ActorStats actor_update(const TransitionBatch& batch);

  struct StepStats {
    CriticStats critic;
    ActorStats actor;
  };
  /// Samples a batch, then critic update, actor update and the alpha rule.
  StepStats train_step(const OfflineDataset& data);

  /// Action rule used for evaluation.
  BatchActionSelector selector(const EvalProtocol& protocol) const;

 private:
  double behavior_clone_step(const TransitionBatch& batch);
  CriticStats bcq_critic_update(const TransitionBatch& batch);
  double bcq_actor_update(const TransitionBatch& batch);
  CriticStats regress(const TransitionBatch& batch, const Tensor& targets);

  TrainerConfig cfg_;
  Rng rng_;
  const TanhGaussianPolicy* behavior_ = nullptr;
  TanhGaussianPolicy policy_;
  Adam policy_opt_;
  QEnsemble critic_;
  std::vector<Adam> critic_opt_;
  DivergenceEstimator divergence_;
  std::optional<AdaptiveAlpha> adaptive_;
  Mlp xi_;
  Adam xi_opt_;
  std::int64_t step_ = 0;
};

struct QPoint {
  std::size_t step = 0;
  double mean_q = 0.0;
};

struct RunRecord {
  TrainerConfig config;
  std::string env;
  std::string dataset;
  std::vector<EvalPoint> eval_trace;
  /// Mean training-batch Q over each evaluation window.
  std::vector<QPoint> q_trace;
  /// Mean training-batch Q over the last q_window steps.
  double mean_q_last_window = 0.0;
  /// Raw mean of the last tail_points evaluations; 0 when the run failed.
  double final_score = 0.0;
  bool failed = false;
  std::string failure;
  double final_alpha = 0.0;
  std::size_t steps_completed = 0;

  double reported_score() const { return clamp_score(final_score); }
  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
  friend bool operator==(const RunRecord& a, const RunRecord& b) { return a.to_json() == b.to_json(); }
};

using ProgressFn = std::function<void(const EvalPoint&)>;
/// Called once with the trained networks after the last step (also after a failure).
using FinishFn = std::function<void(const Trainer&)>;

/// Alternating critic/actor updates with periodic evaluation. Training
/// failures (non-finite values) end the run with failed=true and score 0.
RunRecord train_offline(const TrainerConfig& cfg, const OfflineDataset& data, const TanhGaussianPolicy* behavior,
                        const Environment& env, const EvalProtocol& protocol, const ProgressFn& progress = {},
                        const FinishFn& finish = {});

struct PretrainConfig {
  /// Target normalized return (0 = uniform random policy, 1 = reference controller).
  double target = 0.5;
  double tolerance = 0.1;
  std::size_t max_steps = 200000;
  std::size_t warmup = 500;
  std::size_t eval_every = 50;
  double policy_lr = 1e-4;
  std::size_t eval_episodes = 10;
  std::vector<std::size_t> policy_hidden{64, 64};
  std::vector<std::size_t> q_hidden{64, 64};
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  TanhGaussianPolicy policy;
  double random_return = 0.0;
  double controller_return = 0.0;
  double policy_return = 0.0;
  double normalized = 0.0;
  std::size_t steps = 0;
  bool reached = false;
};

/// Online soft actor-critic, stopped once the stochastic policy's normalized
/// return falls inside target +- tolerance.
PretrainResult pretrain_online(const Environment& env, const PretrainConfig& cfg);

}  // namespace brac
