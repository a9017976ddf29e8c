#include "brac/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "brac/errors.hpp"

namespace brac {

StepResult Environment::step(const EnvState& state, std::span<const double> action) const {
  if (state.obs.size() != state_dim() || action.size() != action_dim()) {
    throw ConfigError("Environment::step: state/action dimension mismatch for " + name());
  }
  const ActionBounds& b = bounds();
  std::vector<double> clipped(action.begin(), action.end());
  for (std::size_t d = 0; d < clipped.size(); ++d) clipped[d] = std::clamp(clipped[d], b.low[d], b.high[d]);
  Transition tr = dynamics(state.obs, clipped);
  StepResult out;
  out.next.obs = std::move(tr.obs);
  out.next.t = state.t + 1;
  out.reward = tr.reward;
  out.done = out.next.t >= horizon();
  return out;
}

PointMass2D::PointMass2D(int horizon, double start_box)
    : bounds_(ActionBounds::symmetric(2, 1.0)), horizon_(horizon), start_box_(start_box) {
  if (horizon < 0) throw ConfigError("horizon must be non-negative");
}

EnvState PointMass2D::reset(std::uint64_t seed) const {
  Rng rng(seed);
  const double x = rng.uniform(-start_box_, start_box_);
  const double y = rng.uniform(-start_box_, start_box_);
  return EnvState{{x, y, 0.0, 0.0}, 0};
}

PointMass2D::Transition PointMass2D::dynamics(std::span<const double> obs, std::span<const double> a) const {
  double px = obs[0], py = obs[1], vx = obs[2], vy = obs[3];
  vx = std::clamp(vx + 0.1 * a[0], -1.0, 1.0);
  vy = std::clamp(vy + 0.1 * a[1], -1.0, 1.0);
  px += 0.1 * vx;
  py += 0.1 * vy;
  const double dist = std::hypot(px, py);
  const double reward = -dist - 0.01 * (a[0] * a[0] + a[1] * a[1]);
  return {{px, py, vx, vy}, reward};
}

std::vector<double> PointMass2D::reference_action(std::span<const double> obs) const {
  // Critically damped PD law on the discrete double integrator.
  std::vector<double> a(2);
  for (int d = 0; d < 2; ++d) a[d] = std::clamp(-10.0 * obs[d] - 6.0 * obs[2 + d], -1.0, 1.0);
  return a;
}

PendulumSwingup::PendulumSwingup(int horizon) : bounds_(ActionBounds::symmetric(1, 2.0)), horizon_(horizon) {
  if (horizon < 0) throw ConfigError("horizon must be non-negative");
}

EnvState PendulumSwingup::reset(std::uint64_t seed) const {
  Rng rng(seed);
  const double th = rng.uniform(-std::numbers::pi, std::numbers::pi);
  const double thdot = rng.uniform(-1.0, 1.0);
  return EnvState{{std::cos(th), std::sin(th), thdot}, 0};
}

namespace {

double wrap_angle(double th) {
  return std::remainder(th, 2.0 * std::numbers::pi);
}

}  // namespace

PendulumSwingup::Transition PendulumSwingup::dynamics(std::span<const double> obs,
                                                      std::span<const double> a) const {
  const double th = std::atan2(obs[1], obs[0]);
  const double thdot = obs[2];
  const double u = a[0];
  const double reward = -(wrap_angle(th) * wrap_angle(th) + 0.1 * thdot * thdot + 0.001 * u * u);
  double new_thdot = thdot + (1.5 * kGravity * std::sin(th) + 3.0 * u) * kDt;
  new_thdot = std::clamp(new_thdot, -kMaxSpeed, kMaxSpeed);
  const double new_th = th + new_thdot * kDt;
  return {{std::cos(new_th), std::sin(new_th), new_thdot}, reward};
}

double PendulumSwingup::energy(std::span<const double> obs) {
  return 0.5 * obs[2] * obs[2] + 1.5 * kGravity * obs[0];
}

std::vector<double> PendulumSwingup::reference_action(std::span<const double> obs) const {
  const double th = std::atan2(obs[1], obs[0]);
  const double thdot = obs[2];
  if (obs[0] > 0.85) {
    return {std::clamp(-(12.0 * th + 3.0 * thdot), -2.0, 2.0)};
  }
  // Pump energy toward the upright level 1.5 g.
  const double deficit = 1.5 * kGravity - energy(obs);
  const double dir = thdot == 0.0 ? 1.0 : (thdot > 0.0 ? 1.0 : -1.0);
  return {std::clamp(deficit * dir, -2.0, 2.0)};
}

std::unique_ptr<Environment> make_env(const std::string& name) {
  if (name == "pointmass2d") return std::make_unique<PointMass2D>();
  if (name == "pendulum") return std::make_unique<PendulumSwingup>();
  throw ConfigError("unknown environment '" + name + "' (expected pointmass2d or pendulum)");
}

double episode_return(const Environment& env, const ActionSelector& select, Rng& rng) {
  EnvState s = env.reset(rng.next_u64());
  double total = 0.0;
  for (int t = 0; t < env.horizon(); ++t) {
    const std::vector<double> a = select(s.obs, rng);
    StepResult r = env.step(s, a);
    total += r.reward;
    s = std::move(r.next);
    if (r.done) break;
  }
  return total;
}

std::vector<double> batched_returns(const Environment& env, const BatchActionSelector& select,
                                    std::size_t episodes, Rng& rng) {
  std::vector<EnvState> states;
  states.reserve(episodes);
  for (std::size_t e = 0; e < episodes; ++e) states.push_back(env.reset(rng.next_u64()));
  std::vector<double> totals(episodes, 0.0);
  const std::size_t sd = env.state_dim(), ad = env.action_dim();
  Tensor obs = Tensor::matrix(episodes, sd);
  for (int t = 0; t < env.horizon() && episodes > 0; ++t) {
    for (std::size_t e = 0; e < episodes; ++e) std::copy(states[e].obs.begin(), states[e].obs.end(), obs.row(e).begin());
    const Tensor actions = select(obs, rng);
    if (actions.rows() != episodes || actions.cols() != ad) {
      throw ConfigError("batched_returns: selector returned shape " + actions.shape_string());
    }
    for (std::size_t e = 0; e < episodes; ++e) {
      StepResult r = env.step(states[e], actions.row(e));
      totals[e] += r.reward;
      states[e] = std::move(r.next);
    }
  }
  return totals;
}

std::vector<double> uniform_action(const Environment& env, Rng& rng) {
  const ActionBounds& b = env.bounds();
  std::vector<double> a(b.dim());
  for (std::size_t d = 0; d < a.size(); ++d) a[d] = rng.uniform(b.low[d], b.high[d]);
  return a;
}

}  // namespace brac
