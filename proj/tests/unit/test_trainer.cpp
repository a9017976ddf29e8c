#include <doctest.h>

#include <cmath>

#include "brac/errors.hpp"
#include "brac/trainer.hpp"

using namespace brac;

namespace {

TrainerConfig small(const std::string& algo) {
  TrainerConfig c = preset(algo, 2);
  apply_desk_scale(c);
  c.policy_hidden = {16, 16};
  c.q_hidden = {16, 16};
  c.divergence.discriminator_hidden = {16, 16};
  c.bcq.hidden = {16, 16};
  c.batch_size = 32;
  return c;
}

OfflineDataset pointmass_data(std::size_t n, std::uint64_t seed) {
  PointMass2D env;
  Rng rng(seed);
  BehaviorSource src = [&env](std::span<const double> obs, Rng&) { return env.reference_action(obs); };
  return collect(env, src, NoiseConfig::parse("gauss:0.3"), n, rng);
}

TanhGaussianPolicy behavior_for(const OfflineDataset& ds, std::uint64_t seed) {
  Rng rng(seed);
  return clone_behavior(ds, CloneConfig{200, 64, 1e-3, {16, 16}}, rng).policy;
}

// Q(s, a) = w * a[0] for every member.
QEnsemble linear_q(std::size_t sd, std::size_t ad, std::size_t k, double w) {
  std::vector<Mlp> members;
  for (std::size_t j = 0; j < k; ++j) {
    Mlp m = Mlp::zeros({sd + ad, 1});
    m.weight(0).at(sd, 0) = w;
    members.push_back(m);
  }
  return QEnsemble(std::move(members), sd);
}

}  // namespace

TEST_CASE("adaptive alpha: direction of the dual step and positivity") {
  AdaptiveAlpha a(1.0, 0.05, 0.01);
  CHECK(a.update(0.05) == doctest::Approx(1.0).epsilon(1e-15));
  const double up = a.update(0.5);
  CHECK(up > 1.0);
  AdaptiveAlpha b(1.0, 0.05, 0.01);
  CHECK(b.update(0.0) < 1.0);
  AdaptiveAlpha c(1.0, 0.05, 0.01);
  for (int i = 0; i < 100000; ++i) {
    c.update(0.0);
    REQUIRE(c.alpha() > 0.0);
  }
  CHECK_THROWS_AS(c.update(std::nan("")), ContractError);
}

TEST_CASE("policy regularization and value penalty with alpha 0 give bit-identical targets") {
  const OfflineDataset ds = pointmass_data(500, 1);
  const TanhGaussianPolicy beh = behavior_for(ds, 2);
  for (const std::string fam : {"mmd", "kl", "kldual", "w"}) {
    TrainerConfig pr = small(fam + "_pr");
    TrainerConfig vp = small(fam + "_vp");
    vp.alpha.value = 0.0;
    pr.seed = vp.seed = 5;
    Trainer a(pr, 4, PointMass2D().bounds(), &beh), b(vp, 4, PointMass2D().bounds(), &beh);
    Rng r(3);
    const TransitionBatch batch = ds.sample_batch(32, r);
    const CriticStats sa = a.critic_update(batch), sb = b.critic_update(batch);
    CHECK(sa.targets == sb.targets);
    CHECK(a.critic().member(0) == b.critic().member(0));
  }
}

TEST_CASE("all-terminal batch: targets equal rewards whatever the networks") {
  const OfflineDataset ds = pointmass_data(200, 3);
  TrainerConfig c = small("kl_vp");
  const TanhGaussianPolicy beh = behavior_for(ds, 4);
  Trainer t(c, 4, PointMass2D().bounds(), &beh);
  Rng r(1);
  TransitionBatch batch = ds.sample_batch(32, r);
  for (std::size_t i = 0; i < 32; ++i) batch.dones[i] = 1.0;
  const CriticStats st = t.critic_update(batch);
  for (std::size_t i = 0; i < 32; ++i) CHECK(st.targets[i] == batch.rewards[i]);
}

TEST_CASE("single repeated terminal transition: td loss goes to zero") {
  OfflineDataset ds("pointmass2d", 4, 2, "none");
  ds.add(std::vector<double>{0.5, -0.5, 0.0, 0.0}, std::vector<double>{0.2, -0.1}, -1.25,
         std::vector<double>{0.5, -0.5, 0.0, 0.0}, true);
  TrainerConfig c = small("kl_vp");
  c.alpha.value = 0.0;
  const TanhGaussianPolicy beh = behavior_for(ds, 1);
  Trainer t(c, 4, PointMass2D().bounds(), &beh);
  double loss = 0.0;
  for (int i = 0; i < 2000; ++i) loss = t.train_step(ds).critic.td_loss;
  CHECK(loss < 1e-6);
}

TEST_CASE("alpha 0: the actor step follows -min Q only and skips the divergence") {
  const OfflineDataset ds = pointmass_data(300, 5);
  const TanhGaussianPolicy beh = behavior_for(ds, 6);
  TrainerConfig c = small("kldual_vp");
  c.alpha.value = 0.0;
  Trainer t(c, 4, PointMass2D().bounds(), &beh);
  Rng r(2);
  const TransitionBatch batch = ds.sample_batch(32, r);
  const Mlp disc_before = t.divergence().discriminator().net();
  const ActorStats st = t.actor_update(batch);
  CHECK(st.mean_divergence == 0.0);
  CHECK(t.divergence().discriminator().net() == disc_before);
  CHECK(std::isfinite(st.actor_loss));
}

TEST_CASE("large alpha with the primal kl pulls the policy toward the behavior") {
  const OfflineDataset ds = pointmass_data(2000, 7);
  const TanhGaussianPolicy beh = behavior_for(ds, 8);
  TrainerConfig c = small("kl_pr");
  c.alpha.value = 100.0;
  c.policy_lr = 1e-3;
  Trainer t(c, 4, PointMass2D().bounds(), &beh);
  Rng r(4);
  const TransitionBatch probe = ds.sample_batch(64, r);
  auto divergence = [&] {
    Tape tape;
    Rng dr(9);
    return ad::mean(t.divergence().estimate(tape, tape.constant_ref(probe.states), t.policy(), probe.actions, dr,
                                            false)).value().item();
  };
  const double before = divergence();
  for (int i = 0; i < 500; ++i) t.actor_update(ds.sample_batch(32, r));
  CHECK(divergence() < 0.5 * before);
}

TEST_CASE("bcq selection: phi 0 with one candidate returns the behavior sample") {
  const OfflineDataset ds = pointmass_data(300, 9);
  const TanhGaussianPolicy beh = behavior_for(ds, 10);
  Rng init(1);
  const Mlp xi({6, 8, 2}, init);
  const QEnsemble q = linear_q(4, 2, 2, 1.0);
  const Tensor states = init.normal_matrix(16, 4);
  BcqConfig cfg;
  cfg.phi = 0.0;
  cfg.candidates = 1;
  Rng r1(5), r2(5);
  const Tensor chosen = bcq_select(cfg, xi, q, beh, states, r1);
  const Tensor sampled = beh.sample(states, 1, r2).first.reshaped({16, 2});
  CHECK(chosen == sampled);
}

TEST_CASE("bcq selection: argmax of min Q, unchanged by positive Q scaling") {
  const OfflineDataset ds = pointmass_data(300, 11);
  const TanhGaussianPolicy beh = behavior_for(ds, 12);
  Rng init(2);
  const Mlp xi({6, 8, 2}, init);
  const Tensor states = init.normal_matrix(8, 4);
  BcqConfig cfg;
  cfg.candidates = 10;
  Rng r1(7), r2(7), r3(7);
  const Tensor a = bcq_select(cfg, xi, linear_q(4, 2, 2, 1.0), beh, states, r1);
  const Tensor b = bcq_select(cfg, xi, linear_q(4, 2, 2, 37.0), beh, states, r2);
  CHECK(a == b);
  // Q = a[0]: the chosen action has the largest first coordinate among candidates.
  Tensor cand = beh.sample(states, 10, r3).first.reshaped({80, 2});
  const Tensor raw = xi.predict([&] {
    Tensor x = Tensor::matrix(80, 6);
    for (std::size_t i = 0; i < 80; ++i) {
      for (std::size_t d = 0; d < 4; ++d) x.at(i, d) = states.at(i / 10, d);
      for (std::size_t d = 0; d < 2; ++d) x.at(i, 4 + d) = cand.at(i, d);
    }
    return x;
  }());
  for (std::size_t i = 0; i < cand.size(); ++i) cand[i] += cfg.phi * std::tanh(raw[i]);
  cand = beh.bounds().clip(cand);
  for (std::size_t i = 0; i < 8; ++i) {
    double best = cand.at(i * 10, 0);
    for (std::size_t j = 1; j < 10; ++j) best = std::max(best, cand.at(i * 10 + j, 0));
    CHECK(a.at(i, 0) == best);
  }
}

TEST_CASE("bcq selection: two candidates with hand-set Q pick the larger min") {
  const ActionBounds bounds = ActionBounds::symmetric(1, 1.0);
  // Behavior with a deterministic-ish wide spread: mean 0, log std 0.
  Mlp trunk = Mlp::zeros({1, 2});
  const TanhGaussianPolicy beh(trunk, bounds);
  // Member 0: Q = a, member 1: Q = -a + 0.5. min is larger for a closer to 0.25.
  std::vector<Mlp> members(2, Mlp::zeros({2, 1}));
  members[0].weight(0).at(1, 0) = 1.0;
  members[1].weight(0).at(1, 0) = -1.0;
  members[1].bias(0)[0] = 0.5;
  const QEnsemble q(std::move(members), 1);
  BcqConfig cfg;
  cfg.phi = 0.0;
  cfg.candidates = 2;
  const Tensor states = Tensor::matrix(50, 1);
  Rng r1(3), r2(3);
  const Tensor chosen = bcq_select(cfg, Mlp::zeros({2, 1}), q, beh, states, r1);
  const Tensor cand = beh.sample(states, 2, r2).first.reshaped({100, 1});
  for (std::size_t i = 0; i < 50; ++i) {
    const double x = cand[2 * i], y = cand[2 * i + 1];
    const double mx = std::min(x, 0.5 - x), my = std::min(y, 0.5 - y);
    CHECK(chosen[i] == (my > mx ? y : x));
  }
}

TEST_CASE("train_offline: zero steps records only the initial evaluation") {
  const OfflineDataset ds = pointmass_data(300, 13);
  const TanhGaussianPolicy beh = behavior_for(ds, 14);
  TrainerConfig c = small("kl_vp");
  c.total_steps = 0;
  EvalProtocol p;
  p.episodes = 2;
  const RunRecord rec = train_offline(c, ds, &beh, PointMass2D(), p);
  REQUIRE(rec.eval_trace.size() == 1);
  CHECK(rec.eval_trace[0].step == 0);
  CHECK(rec.steps_completed == 0);
  CHECK(rec.final_score == rec.eval_trace[0].mean_return);
  CHECK(!rec.failed);
}

TEST_CASE("train_offline: same config and seed give bitwise equal records") {
  const OfflineDataset ds = pointmass_data(400, 15);
  const TanhGaussianPolicy beh = behavior_for(ds, 16);
  EvalProtocol p;
  p.episodes = 2;
  for (const std::string algo : {"mmd_pr", "kldual_vp", "w_pr", "bcq", "bc", "sac"}) {
    TrainerConfig c = small(algo);
    c.total_steps = 40;
    c.eval_points = 4;
    c.seed = 21;
    const RunRecord a = train_offline(c, ds, &beh, PointMass2D(), p);
    const RunRecord b = train_offline(c, ds, &beh, PointMass2D(), p);
    CHECK_MESSAGE(a == b, algo);
    CHECK(a.eval_trace.size() == 5);
    CHECK(a.q_trace.size() == 4);
    CHECK(RunRecord::from_json(a.to_json()) == a);
  }
}

TEST_CASE("train_offline: a diverging run is marked failed and scores 0") {
  const OfflineDataset ds = pointmass_data(300, 17);
  const TanhGaussianPolicy beh = behavior_for(ds, 18);
  TrainerConfig c = small("kl_vp");
  c.q_lr = 1e12;
  c.total_steps = 200;
  c.eval_points = 2;
  EvalProtocol p;
  p.episodes = 1;
  const RunRecord rec = train_offline(c, ds, &beh, PointMass2D(), p);
  CHECK(rec.failed);
  CHECK(!rec.failure.empty());
  CHECK(rec.final_score == 0.0);
  CHECK(rec.reported_score() == 0.0);
}

TEST_CASE("reported score clamps negatives to 0") {
  RunRecord r;
  r.final_score = -42.0;
  CHECK(r.reported_score() == 0.0);
  r.final_score = 3.5;
  CHECK(r.reported_score() == 3.5);
}

TEST_CASE("config json: round trip, defaults kept, unknown keys rejected") {
  for (const std::string& name : preset_names()) {
    const TrainerConfig c = preset(name, 3);
    const TrainerConfig back = config_from_json(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));
  }
  const TrainerConfig c = config_from_json(nlohmann::json{{"gamma", 0.9}}, preset("bear", 2));
  CHECK(c.gamma == 0.9);
  CHECK(c.k == 4);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"gama", 0.9}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"alpha", {{"valu", 1}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"gamma", "x"}}), ConfigError);
  CHECK_THROWS_AS(preset("nope", 2), ConfigError);
}

TEST_CASE("presets: strengths, modes and validation") {
  CHECK(preset_names().size() == 12);
  CHECK(strength_name(preset("bear", 2)) == "epsilon");
  CHECK(strength_name(preset("bcq", 2)) == "phi");
  CHECK(strength_name(preset("mmd_vp", 2)) == "alpha");
  CHECK(strength_name(preset("bc", 2)).empty());
  CHECK(preset("sac", 6).alpha.epsilon == 6.0);
  CHECK(preset("kl_pr", 2).mode == PenaltyMode::kPolicyRegularization);
  TrainerConfig c = preset("w_vp", 2);
  set_strength(c, 10.0);
  CHECK(strength_value(c) == 10.0);
  TrainerConfig bc = preset("bc", 2);
  CHECK_THROWS_AS(set_strength(bc, 1.0), ConfigError);
  TrainerConfig bad = preset("kl_vp", 2);
  bad.gamma = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = preset("kl_vp", 2);
  bad.alpha.value = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(Trainer(preset("bcq", 2), 4, PointMass2D().bounds(), nullptr), ConfigError);
}
