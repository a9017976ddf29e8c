#include "brac/adam.hpp"

#include <cmath>
#include <string>

#include "brac/errors.hpp"

namespace brac {

AdamState AdamState::for_params(std::span<const Tensor* const> params, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  for (const Tensor* p : params) {
    s.first_moment.emplace_back(p->shape(), 0.0);
    s.second_moment.emplace_back(p->shape(), 0.0);
  }
  return s;
}

void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ConfigError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(state.first_moment[i])) {
      throw ConfigError("adam_step: shape mismatch at parameter " + std::to_string(i));
    }
    if (!grads[i].all_finite()) {
      throw TrainingError("adam_step: non-finite gradient at parameter " + std::to_string(i) + ", update " +
                          std::to_string(state.step + 1));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

void soft_update(std::span<Tensor* const> target, std::span<const Tensor* const> source, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("soft_update: tau must lie in (0, 1]");
  if (target.size() != source.size()) throw ConfigError("soft_update: parameter counts differ");
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (!target[i]->same_shape(*source[i])) throw ConfigError("soft_update: shape mismatch");
    Tensor& t = *target[i];
    const Tensor& s = *source[i];
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = tau * s[k] + (1.0 - tau) * t[k];
  }
}

void soft_update(Mlp& target, const Mlp& source, double tau) {
  auto t = target.parameters();
  auto s = source.parameters();
  soft_update(std::span<Tensor* const>(t), std::span<const Tensor* const>(s), tau);
}

Adam::Adam(const Mlp& net, double learning_rate)
    : state_(AdamState::for_params(net.parameters(), learning_rate)) {}

void Adam::step(Mlp& net, const Tape& tape) {
  const auto cparams = static_cast<const Mlp&>(net).parameters();
  step(net, tape.gradients(cparams));
}

void Adam::step(Mlp& net, std::span<const Tensor> grads) {
  auto params = net.parameters();
  adam_step(state_, params, grads);
}

}  // namespace brac
