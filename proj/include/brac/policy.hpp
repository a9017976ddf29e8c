#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "brac/autodiff.hpp"
#include "brac/mlp.hpp"
#include "brac/rng.hpp"
#include "brac/tensor.hpp"

namespace brac {

class OfflineDataset;

/// Per-dimension box [low, high] for actions.
struct ActionBounds {
  std::vector<double> low;
  std::vector<double> high;

  static ActionBounds symmetric(std::size_t dim, double limit);
  std::size_t dim() const { return low.size(); }
  double scale(std::size_t d) const { return 0.5 * (high[d] - low[d]); }
  double shift(std::size_t d) const { return 0.5 * (high[d] + low[d]); }
  /// Moves every entry at least margin * range inside the box.
  Tensor clip_inward(const Tensor& actions, double margin = 1e-6) const;
  /// Clamps every entry into the closed box.
  Tensor clip(const Tensor& actions) const;
  friend bool operator==(const ActionBounds&, const ActionBounds&) = default;
};

/// Reparameterized draw from a policy, recorded on a tape. Rows are laid out
/// state-major: row i*n + j is sample j for state i.
struct PolicySample {
  Var actions;    // (batch*n, act_dim)
  Var pre_tanh;   // (batch*n, act_dim)
  Var log_probs;  // (batch*n, 1)
  std::size_t batch = 0;
  std::size_t n = 0;
};

/// Squashed Gaussian policy: a = scale * tanh(mu + sigma * z) + shift with the
/// trunk producing (mu, log sigma) per action dimension.
class TanhGaussianPolicy {
 public:
  static constexpr double kLogStdMin = -5.0;
  static constexpr double kLogStdMax = 2.0;

  TanhGaussianPolicy() = default;
  TanhGaussianPolicy(std::size_t state_dim, ActionBounds bounds, const std::vector<std::size_t>& hidden, Rng& rng);
  /// Wraps an existing trunk whose output is 2 * action_dim wide.
  TanhGaussianPolicy(Mlp trunk, ActionBounds bounds);

  std::size_t state_dim() const { return trunk_.input_dim(); }
  std::size_t action_dim() const { return bounds_.dim(); }
  const ActionBounds& bounds() const { return bounds_; }
  Mlp& trunk() { return trunk_; }
  const Mlp& trunk() const { return trunk_; }

  struct Head {
    Var mean;     // (batch, act_dim)
    Var log_std;  // (batch, act_dim), clamped
  };
  Head head(Tape& tape, Var states, bool trainable = true) const;

  /// Draws n actions per state with noise from `rng` (batch*n*act_dim normals, row-major).
  PolicySample sample(Tape& tape, Var states, std::size_t n, Rng& rng, bool trainable = true) const;
  /// Same as sample() but with caller-supplied standard normal noise (batch*n, act_dim).
  PolicySample sample_with_noise(Tape& tape, Var states, std::size_t n, const Tensor& noise,
                                 bool trainable = true) const;

  /// Exact log-density of actions strictly inside the bounds; (batch, 1).
  /// Throws ContractError for actions on or outside the boundary.
  Var log_prob(Tape& tape, Var states, const Tensor& actions, bool trainable = true) const;
  /// Log-density of actions given by their pre-squash values, one group of n
  /// rows per state; (batch*n, 1). Differentiable in `pre_tanh`. Avoids the
  /// atanh round trip when another policy with the same bounds produced them.
  Var log_prob_pre_tanh(Tape& tape, Var states, Var pre_tanh, std::size_t n, bool trainable = true) const;

  /// Value-only sampling: actions (batch, n, act_dim) and log-probs (batch, n).
  std::pair<Tensor, Tensor> sample(const Tensor& states, std::size_t n, Rng& rng) const;
  /// Value-only log-density, shape (batch).
  Tensor log_prob(const Tensor& states, const Tensor& actions) const;
  /// scale * tanh(mu) + shift, (batch, act_dim).
  Tensor mean_action(const Tensor& states) const;

  void save(const std::filesystem::path& path) const;
  static TanhGaussianPolicy load(const std::filesystem::path& path);

  friend bool operator==(const TanhGaussianPolicy& a, const TanhGaussianPolicy& b) {
    return a.bounds_ == b.bounds_ && a.trunk_ == b.trunk_;
  }

 private:
  Mlp trunk_;
  ActionBounds bounds_;
};

struct CloneConfig {
  std::size_t steps = 10000;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  std::vector<std::size_t> hidden{200, 200};
};

struct CloneResult {
  TanhGaussianPolicy policy;
  /// Mean log-likelihood of the whole dataset under the final policy.
  double final_log_likelihood = 0.0;
  /// Minibatch mean log-likelihood before each update.
  std::vector<double> trace;
};

/// Maximum-likelihood fit of a squashed Gaussian to the dataset's (s, a) pairs.
/// Dataset actions are clipped inward by 1e-6 of the range before evaluation.
CloneResult clone_behavior(const OfflineDataset& dataset, const CloneConfig& cfg, Rng& rng);

}  // namespace brac
