#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "brac/mlp.hpp"
#include "brac/tensor.hpp"

namespace brac {

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::int64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  /// Zero accumulators shaped like `params`.
  static AdamState for_params(std::span<const Tensor* const> params, double learning_rate);
};

/// One bias-corrected Adam update in place. Throws TrainingError on
/// non-finite gradients and ConfigError on shape mismatch.
void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor> grads);

/// target <- tau * source + (1 - tau) * target, elementwise.
void soft_update(std::span<Tensor* const> target, std::span<const Tensor* const> source, double tau);
void soft_update(Mlp& target, const Mlp& source, double tau);

/// Optimizer bundled with the network it updates.
class Adam {
 public:
  Adam() = default;
  Adam(const Mlp& net, double learning_rate);

  /// Applies the gradients recorded on `tape` for `net`'s parameters.
  void step(Mlp& net, const Tape& tape);
  void step(Mlp& net, std::span<const Tensor> grads);
  const AdamState& state() const { return state_; }
  AdamState& state() { return state_; }

 private:
  AdamState state_;
};

}  // namespace brac
