#include <doctest.h>

#include <cmath>

#include "brac/env.hpp"
#include "brac/errors.hpp"

using namespace brac;

namespace {

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("reset: same seed twice gives the same state, different seeds differ") {
  for (const char* name : {"pointmass2d", "pendulum"}) {
    const auto env = make_env(name);
    CHECK(env->reset(17).obs == env->reset(17).obs);
    CHECK(env->reset(17).obs != env->reset(18).obs);
    CHECK(env->reset(17).t == 0);
  }
}

TEST_CASE("reset: point mass starts inside the declared box with zero velocity (1e4 seeds)") {
  PointMass2D env(100, 1.0);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const EnvState s = env.reset(seed);
    REQUIRE(std::abs(s.obs[0]) <= 1.0);
    REQUIRE(std::abs(s.obs[1]) <= 1.0);
    REQUIRE(s.obs[2] == 0.0);
    REQUIRE(s.obs[3] == 0.0);
  }
}

TEST_CASE("step: point mass at the goal at rest with zero action is a fixed point with reward 0") {
  PointMass2D env;
  const EnvState s{{0.0, 0.0, 0.0, 0.0}, 0};
  const StepResult r = env.step(s, std::vector<double>{0.0, 0.0});
  CHECK(r.reward == 0.0);
  CHECK(r.next.obs == s.obs);
  CHECK(r.next.t == 1);
}

TEST_CASE("step: point mass push from rest") {
  PointMass2D env;
  const StepResult r = env.step(EnvState{{0.5, -0.25, 0.0, 0.0}, 0}, std::vector<double>{1.0, 0.0});
  CHECK(r.next.obs[2] == doctest::Approx(0.1));
  CHECK(r.next.obs[3] == 0.0);
  CHECK(r.next.obs[0] == doctest::Approx(0.51));
  CHECK(r.next.obs[1] == -0.25);
  CHECK(r.reward == doctest::Approx(-std::hypot(0.51, 0.25) - 0.01));
}

TEST_CASE("step: velocity saturates at 1 and rewards are never positive") {
  PointMass2D env;
  Rng rng(2);
  EnvState s = env.reset(3);
  for (int t = 0; t < 100; ++t) {
    const StepResult r = env.step(s, uniform_action(env, rng));
    CHECK(r.reward <= 0.0);
    CHECK(std::abs(r.next.obs[2]) <= 1.0);
    CHECK(std::abs(r.next.obs[3]) <= 1.0);
    s = r.next;
  }
  EnvState fast{{0.0, 0.0, 0.95, 0.0}, 0};
  CHECK(env.step(fast, std::vector<double>{1.0, 0.0}).next.obs[2] == 1.0);
}

TEST_CASE("step: out-of-range actions behave exactly like their clipped versions") {
  for (const char* name : {"pointmass2d", "pendulum"}) {
    const auto env = make_env(name);
    Rng rng(5);
    EnvState s = env->reset(9);
    for (int t = 0; t < 50; ++t) {
      std::vector<double> a(env->action_dim());
      for (double& v : a) v = rng.uniform(-10.0, 10.0);
      std::vector<double> clipped = a;
      for (std::size_t d = 0; d < a.size(); ++d) {
        clipped[d] = std::clamp(a[d], env->bounds().low[d], env->bounds().high[d]);
      }
      const StepResult r1 = env->step(s, a);
      const StepResult r2 = env->step(s, clipped);
      CHECK(r1.next.obs == r2.next.obs);
      CHECK(r1.reward == r2.reward);
      s = r1.next;
    }
  }
}

TEST_CASE("step: done exactly at the horizon") {
  PendulumSwingup env(5);
  EnvState s = env.reset(1);
  for (int t = 0; t < 5; ++t) {
    const StepResult r = env.step(s, std::vector<double>{0.0});
    CHECK(r.done == (t == 4));
    s = r.next;
  }
}

TEST_CASE("step: trajectory is a function of the seed and the action sequence") {
  for (const char* name : {"pointmass2d", "pendulum"}) {
    const auto env = make_env(name);
    auto run = [&] {
      Rng rng(77);
      EnvState s = env->reset(4);
      std::vector<double> trace;
      for (int t = 0; t < 60; ++t) {
        const StepResult r = env->step(s, uniform_action(*env, rng));
        trace.insert(trace.end(), r.next.obs.begin(), r.next.obs.end());
        trace.push_back(r.reward);
        s = r.next;
      }
      return trace;
    };
    CHECK(run() == run());
  }
}

TEST_CASE("pendulum: unit circle observation and bounded energy drift over 1e4 unforced steps") {
  PendulumSwingup env(10000);
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    EnvState s = env.reset(seed);
    const double e0 = PendulumSwingup::energy(s.obs);
    double worst = 0.0, early = 0.0, late = 0.0;
    for (int t = 0; t < 10000; ++t) {
      s = env.step(s, std::vector<double>{0.0}).next;
      REQUIRE(std::abs(s.obs[0] * s.obs[0] + s.obs[1] * s.obs[1] - 1.0) < 1e-9);
      const double e = PendulumSwingup::energy(s.obs);
      worst = std::max(worst, std::abs(e - e0));
      if (t < 2000) early += e / 2000.0;
      if (t >= 8000) late += e / 2000.0;
    }
    // Symplectic Euler: an O(dt) oscillation around the true energy (range
    // -15..47 here) and no secular drift between the first and last windows.
    CHECK(worst < 4.0);
    CHECK(std::abs(late - early) < 0.1);
  }
}

TEST_CASE("episode_return: zero horizon gives 0; random point-mass play is strictly negative") {
  Rng rng(1);
  PointMass2D zero(0);
  CHECK(episode_return(zero, [&](auto, Rng& r) { return uniform_action(zero, r); }, rng) == 0.0);
  PointMass2D env;
  for (int e = 0; e < 20; ++e) {
    CHECK(episode_return(env, [&](auto, Rng& r) { return uniform_action(env, r); }, rng) < 0.0);
  }
}

TEST_CASE("episode_return: reference controllers beat random play") {
  for (const char* name : {"pointmass2d", "pendulum"}) {
    const auto env = make_env(name);
    Rng rng(12);
    std::vector<double> ctrl, rand;
    for (int e = 0; e < 20; ++e) {
      ctrl.push_back(episode_return(*env, [&](auto obs, Rng&) { return env->reference_action(obs); }, rng));
      rand.push_back(episode_return(*env, [&](auto, Rng& r) { return uniform_action(*env, r); }, rng));
    }
    MESSAGE(std::string(name) << ": controller " << mean(ctrl) << ", random " << mean(rand));
    CHECK(mean(ctrl) >= mean(rand) + 20.0);
  }
}

TEST_CASE("batched_returns: lockstep episodes equal sequential episodes") {
  const auto env = make_env("pendulum");
  Rng r1(8), r2(8);
  const std::vector<double> batched = batched_returns(
      *env,
      [&](const Tensor& obs, Rng&) {
        Tensor a = Tensor::matrix(obs.rows(), 1);
        for (std::size_t i = 0; i < obs.rows(); ++i) a[i] = env->reference_action(obs.row(i))[0];
        return a;
      },
      5, r1);
  std::vector<std::uint64_t> seeds;
  for (int e = 0; e < 5; ++e) seeds.push_back(r2.next_u64());
  for (int e = 0; e < 5; ++e) {
    EnvState s = env->reset(seeds[e]);
    double total = 0.0;
    for (int t = 0; t < env->horizon(); ++t) {
      const StepResult r = env->step(s, env->reference_action(s.obs));
      total += r.reward;
      s = r.next;
    }
    CHECK(batched[e] == total);
  }
}

TEST_CASE("make_env: unknown names are configuration errors") {
  CHECK(make_env("pointmass2d")->state_dim() == 4);
  CHECK(make_env("pendulum")->action_dim() == 1);
  CHECK_THROWS_AS(make_env("ant"), ConfigError);
  CHECK_THROWS_AS(PointMass2D(-1), ConfigError);
}
