#pragma once

#include <span>
#include <vector>

#include "brac/autodiff.hpp"
#include "brac/rng.hpp"
#include "brac/tensor.hpp"

namespace brac {

/// Fully connected network: ReLU on hidden layers, identity on the output.
/// Weights are (fan_in, fan_out), biases (1, fan_out).
class Mlp {
 public:
  Mlp() = default;
  /// Uniform init in +-1/sqrt(fan_in) for weights and biases.
  Mlp(std::vector<std::size_t> layer_sizes, Rng& rng);
  static Mlp zeros(std::vector<std::size_t> layer_sizes);

  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t output_dim() const { return sizes_.back(); }
  std::size_t num_layers() const { return weights_.size(); }
  std::size_t parameter_count() const;
  static std::size_t parameter_count(const std::vector<std::size_t>& layer_sizes);

  Tensor& weight(std::size_t layer) { return weights_[layer]; }
  const Tensor& weight(std::size_t layer) const { return weights_[layer]; }
  Tensor& bias(std::size_t layer) { return biases_[layer]; }
  const Tensor& bias(std::size_t layer) const { return biases_[layer]; }

  /// Records the forward pass. With trainable=false the weights enter the
  /// tape as constants and receive no gradient.
  Var forward(Tape& tape, Var x, bool trainable = true) const;
  /// Tape-free forward pass for evaluation and target computation.
  Tensor predict(const Tensor& x) const;

  /// Gradient of a scalar-output network with respect to its input, (batch, in).
  /// Built from recorded ops, so it is itself differentiable in the weights
  /// (used by gradient penalties).
  Var input_gradient(Tape& tape, Var x, bool trainable = true) const;

  /// Parameters in a fixed order: w0, b0, w1, b1, ...
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<double> flat() const;
  void set_flat(std::span<const double> values);

  friend bool operator==(const Mlp& a, const Mlp& b) {
    return a.sizes_ == b.sizes_ && a.weights_ == b.weights_ && a.biases_ == b.biases_;
  }

 private:
  void check_input(const Tensor& x) const;

  std::vector<std::size_t> sizes_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

}  // namespace brac
