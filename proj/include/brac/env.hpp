#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "brac/policy.hpp"
#include "brac/rng.hpp"
#include "brac/tensor.hpp"

namespace brac {

/// Observation plus the step index within the episode.
struct EnvState {
  std::vector<double> obs;
  int t = 0;
};

struct StepResult {
  EnvState next;
  double reward = 0.0;
  /// True when the episode has reached its horizon.
  bool done = false;
};

/// Deterministic continuous-control task. step() is a pure function of
/// (state, action); reset() is a pure function of the seed.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual std::size_t state_dim() const = 0;
  std::size_t action_dim() const { return bounds().dim(); }
  virtual const ActionBounds& bounds() const = 0;
  virtual int horizon() const = 0;

  virtual EnvState reset(std::uint64_t seed) const = 0;
  /// Clips the action into bounds, then advances the dynamics.
  StepResult step(const EnvState& state, std::span<const double> action) const;

  /// Hand-written controller with good (not necessarily optimal) return.
  virtual std::vector<double> reference_action(std::span<const double> obs) const = 0;

 protected:
  struct Transition {
    std::vector<double> obs;
    double reward;
  };
  virtual Transition dynamics(std::span<const double> obs, std::span<const double> action) const = 0;
};

/// Point mass on a plane steered toward the origin.
///   v <- clip(v + 0.1 a, -1, 1), p <- p + 0.1 v
///   r = -|p - goal|_2 - 0.01 |a|^2
/// Start position uniform in [-start_box, start_box]^2, zero velocity.
class PointMass2D final : public Environment {
 public:
  explicit PointMass2D(int horizon = 100, double start_box = 1.0);

  std::string name() const override { return "pointmass2d"; }
  std::size_t state_dim() const override { return 4; }
  const ActionBounds& bounds() const override { return bounds_; }
  int horizon() const override { return horizon_; }
  double start_box() const { return start_box_; }

  EnvState reset(std::uint64_t seed) const override;
  std::vector<double> reference_action(std::span<const double> obs) const override;

 protected:
  Transition dynamics(std::span<const double> obs, std::span<const double> action) const override;

 private:
  ActionBounds bounds_;
  int horizon_;
  double start_box_;
};

/// Rigid pendulum swing-up; observation (cos th, sin th, th_dot), th = 0 upright.
///   th_dot <- clip(th_dot + (3g/2l sin th + 3/(m l^2) u) dt, -8, 8), th <- th + th_dot dt
///   r = -(wrap(th)^2 + 0.1 th_dot^2 + 0.001 u^2)
class PendulumSwingup final : public Environment {
 public:
  static constexpr double kGravity = 10.0;
  static constexpr double kDt = 0.05;
  static constexpr double kMaxSpeed = 8.0;

  explicit PendulumSwingup(int horizon = 200);

  std::string name() const override { return "pendulum"; }
  std::size_t state_dim() const override { return 3; }
  const ActionBounds& bounds() const override { return bounds_; }
  int horizon() const override { return horizon_; }

  EnvState reset(std::uint64_t seed) const override;
  std::vector<double> reference_action(std::span<const double> obs) const override;

  /// 0.5 th_dot^2 + (3g/2l) cos th; conserved by the unforced continuous dynamics.
  static double energy(std::span<const double> obs);

 protected:
  Transition dynamics(std::span<const double> obs, std::span<const double> action) const override;

 private:
  ActionBounds bounds_;
  int horizon_;
};

/// "pointmass2d" or "pendulum"; ConfigError otherwise.
std::unique_ptr<Environment> make_env(const std::string& name);

/// Chooses an action for one observation.
using ActionSelector = std::function<std::vector<double>(std::span<const double> obs, Rng& rng)>;
/// Chooses actions for a (episodes, state_dim) batch of observations.
using BatchActionSelector = std::function<Tensor(const Tensor& obs, Rng& rng)>;

/// Sum of rewards over one episode; the reset seed is drawn from `rng`.
double episode_return(const Environment& env, const ActionSelector& select, Rng& rng);
/// Runs `episodes` episodes in lockstep (reset seeds drawn from `rng` in
/// order) and returns each episode's return.
std::vector<double> batched_returns(const Environment& env, const BatchActionSelector& select,
                                    std::size_t episodes, Rng& rng);

/// Uniform action in the environment's bounds.
std::vector<double> uniform_action(const Environment& env, Rng& rng);

}  // namespace brac
