#pragma once

#include <filesystem>
#include <vector>

#include "brac/autodiff.hpp"
#include "brac/data.hpp"
#include "brac/mlp.hpp"
#include "brac/rng.hpp"
#include "brac/tensor.hpp"

namespace brac {

/// Reduction of k target values to one per row.
struct TargetCombiner {
  enum class Mode { kMin, kWeighted };
  Mode mode = Mode::kMin;
  /// Weight on the minimum in weighted mode.
  double lambda = 0.75;

  static TargetCombiner min() { return {Mode::kMin, 1.0}; }
  static TargetCombiner weighted(double lambda = 0.75) { return {Mode::kWeighted, lambda}; }
  void validate() const;
};

/// Row-wise combination of a (batch, k) value table; shape (batch).
/// min: min_j; weighted: lambda * min_j + (1 - lambda) * max_j.
Tensor combine(const Tensor& values, const TargetCombiner& c);

/// k Q-networks over concat(state, action) with soft-updated target copies.
class QEnsemble {
 public:
  enum class Which { kSource, kTarget };

  QEnsemble() = default;
  QEnsemble(std::size_t state_dim, std::size_t action_dim, std::size_t k, const std::vector<std::size_t>& hidden,
            Rng& rng, double tau = 0.005);
  /// Builds an ensemble from given source networks; targets start as exact copies.
  QEnsemble(std::vector<Mlp> members, std::size_t state_dim, double tau = 0.005);

  std::size_t k() const { return source_.size(); }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return source_.front().input_dim() - state_dim_; }
  double tau() const { return tau_; }

  Mlp& member(std::size_t j) { return source_[j]; }
  const Mlp& member(std::size_t j) const { return source_[j]; }
  Mlp& target(std::size_t j) { return target_[j]; }
  const Mlp& target(std::size_t j) const { return target_[j]; }

  /// Per-member Q for each (s, a), shape (batch, k). Tape-free.
  Tensor q_values(const Tensor& states, const Tensor& actions, Which which = Which::kSource) const;
  /// Recorded source values, shape (batch, k). With trainable=false the
  /// weights are constants but gradients still flow into `actions`.
  Var q_values(Tape& tape, Var states, Var actions, bool trainable) const;
  /// Row-wise minimum over recorded source values, shape (batch, 1).
  Var min_q(Tape& tape, Var states, Var actions, bool trainable) const;

  /// target <- tau * source + (1 - tau) * target for every member.
  void soft_update_targets();

  void save(const std::filesystem::path& path) const;
  static QEnsemble load(const std::filesystem::path& path);

  friend bool operator==(const QEnsemble& a, const QEnsemble& b) {
    return a.state_dim_ == b.state_dim_ && a.tau_ == b.tau_ && a.source_ == b.source_ && a.target_ == b.target_;
  }

 private:
  std::size_t state_dim_ = 0;
  double tau_ = 0.005;
  std::vector<Mlp> source_;
  std::vector<Mlp> target_;
};

/// Bootstrapped regression target, shape (batch):
///   r + gamma * (combine(target Q(s', a')) - alpha * penalty)  for non-terminal rows,
///   r                                                           for terminal rows.
/// `penalty` holds one divergence estimate per next state, shape (batch) or (batch, 1).
Tensor td_target(const QEnsemble& ens, const TargetCombiner& c, const TransitionBatch& batch,
                 const Tensor& next_actions, const Tensor& penalty, double alpha, double gamma);

}  // namespace brac
