#pragma once

#include <cstddef>
#include <vector>

#include "brac/critic.hpp"
#include "brac/env.hpp"
#include "brac/policy.hpp"
#include "brac/rng.hpp"

namespace brac {

struct EvalProtocol {
  std::size_t episodes = 20;
  std::size_t tail_points = 10;
  /// Actions sampled per step; the one with the highest min-ensemble Q is taken.
  std::size_t candidates = 10;

  void validate() const;
};

struct EvalPoint {
  std::size_t step = 0;
  double mean_return = 0.0;
};

/// Per state: draws `candidates` actions from `pi`, returns the one with the
/// largest min_j Q_j (first index wins ties). Shape (batch, act_dim).
Tensor select_max_q(const TanhGaussianPolicy& pi, const QEnsemble& ens, const Tensor& states,
                    std::size_t candidates, Rng& rng);

/// Mean return over protocol.episodes episodes run in lockstep.
double evaluate(const Environment& env, const BatchActionSelector& select, const EvalProtocol& protocol, Rng& rng);
double evaluate(const TanhGaussianPolicy& pi, const QEnsemble& ens, const Environment& env,
                const EvalProtocol& protocol, Rng& rng);

/// Mean of the last `tail` points (all points when fewer); 0 for an empty trace.
double tail_mean(const std::vector<EvalPoint>& trace, std::size_t tail);
/// Negative scores are reported as 0.
inline double clamp_score(double raw) { return raw > 0.0 ? raw : 0.0; }

}  // namespace brac
