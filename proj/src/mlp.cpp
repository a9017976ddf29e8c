#include "brac/mlp.hpp"

#include <Eigen/Core>
#include <cmath>

#include "brac/errors.hpp"

namespace brac {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_sizes(const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 2) throw ConfigError("Mlp needs at least input and output sizes");
  for (std::size_t s : sizes) {
    if (s == 0) throw ConfigError("Mlp layer sizes must be positive");
  }
}

}  // namespace

Mlp::Mlp(std::vector<std::size_t> layer_sizes, Rng& rng) : sizes_(std::move(layer_sizes)) {
  check_sizes(sizes_);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
    weights_.push_back(rng.uniform_matrix(sizes_[l], sizes_[l + 1], -bound, bound));
    biases_.push_back(rng.uniform_matrix(1, sizes_[l + 1], -bound, bound));
  }
}

Mlp Mlp::zeros(std::vector<std::size_t> layer_sizes) {
  check_sizes(layer_sizes);
  Mlp m;
  m.sizes_ = std::move(layer_sizes);
  for (std::size_t l = 0; l + 1 < m.sizes_.size(); ++l) {
    m.weights_.push_back(Tensor::matrix(m.sizes_[l], m.sizes_[l + 1]));
    m.biases_.push_back(Tensor::matrix(1, m.sizes_[l + 1]));
  }
  return m;
}

std::size_t Mlp::parameter_count(const std::vector<std::size_t>& layer_sizes) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) n += (layer_sizes[l] + 1) * layer_sizes[l + 1];
  return n;
}

std::size_t Mlp::parameter_count() const { return parameter_count(sizes_); }

void Mlp::check_input(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != input_dim()) {
    throw ConfigError("Mlp input shape " + x.shape_string() + " does not match input size " +
                      std::to_string(input_dim()));
  }
}

Var Mlp::forward(Tape& tape, Var x, bool trainable) const {
  check_input(x.value());
  Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Var w = trainable ? tape.parameter(weights_[l]) : tape.constant_ref(weights_[l]);
    Var b = trainable ? tape.parameter(biases_[l]) : tape.constant_ref(biases_[l]);
    h = ad::linear(h, w, b);
    if (l + 1 < weights_.size()) h = ad::relu(h);
  }
  return h;
}

Tensor Mlp::predict(const Tensor& x) const {
  check_input(x);
  RowMat h = Eigen::Map<const RowMat>(x.data(), static_cast<Eigen::Index>(x.rows()),
                                      static_cast<Eigen::Index>(x.cols()));
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const auto w = Eigen::Map<const RowMat>(weights_[l].data(), static_cast<Eigen::Index>(weights_[l].rows()),
                                            static_cast<Eigen::Index>(weights_[l].cols()));
    const auto b = Eigen::Map<const RowMat>(biases_[l].data(), 1, static_cast<Eigen::Index>(biases_[l].cols()));
    RowMat z = h * w;
    z.rowwise() += b.row(0);
    if (l + 1 < weights_.size()) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  Tensor out = Tensor::matrix(static_cast<std::size_t>(h.rows()), static_cast<std::size_t>(h.cols()));
  Eigen::Map<RowMat>(out.data(), h.rows(), h.cols()) = h;
  return out;
}

Var Mlp::input_gradient(Tape& tape, Var x, bool trainable) const {
  check_input(x.value());
  if (output_dim() != 1) throw ConfigError("input_gradient requires a scalar-output network");
  const std::size_t batch = x.rows();
  // Hidden-layer ReLU masks; piecewise constant in the weights.
  std::vector<Tensor> masks;
  Tensor h = x.value();
  for (std::size_t l = 0; l + 1 < weights_.size(); ++l) {
    Mlp layer = Mlp::zeros({sizes_[l], sizes_[l + 1]});
    layer.weights_[0] = weights_[l];
    layer.biases_[0] = biases_[l];
    Tensor z = layer.predict(h);
    Tensor mask(z.shape());
    for (std::size_t k = 0; k < z.size(); ++k) {
      mask[k] = z[k] > 0.0 ? 1.0 : 0.0;
      z[k] = z[k] > 0.0 ? z[k] : 0.0;
    }
    masks.push_back(std::move(mask));
    h = std::move(z);
  }
  auto bind = [&](const Tensor& t) { return trainable ? tape.parameter(t) : tape.constant_ref(t); };
  const std::size_t last = weights_.size() - 1;
  Var g = ad::matmul_nt(tape.constant(Tensor::matrix(batch, 1, 1.0)), bind(weights_[last]));
  for (std::size_t l = last; l-- > 0;) {
    g = ad::mul(g, tape.constant(std::move(masks[l])));
    g = ad::matmul_nt(g, bind(weights_[l]));
  }
  return g;
}

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::vector<const Tensor*> Mlp::parameters() const {
  std::vector<const Tensor*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::vector<double> Mlp::flat() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const Tensor* p : parameters()) out.insert(out.end(), p->values().begin(), p->values().end());
  return out;
}

void Mlp::set_flat(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw ConfigError("Mlp::set_flat: expected " + std::to_string(parameter_count()) + " values, got " +
                      std::to_string(values.size()));
  }
  std::size_t off = 0;
  for (Tensor* p : parameters()) {
    std::copy_n(values.data() + off, p->size(), p->data());
    off += p->size();
  }
}

}  // namespace brac
