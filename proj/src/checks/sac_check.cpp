#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "brac/adam.hpp"
#include "brac/checks.hpp"
#include "brac/critic.hpp"
#include "brac/trainer.hpp"

namespace brac::checks {

namespace {

struct Draw {
  Var action;
  Var log_prob;
};

// Squashed Gaussian written out directly:
// log pi = sum(-z^2/2 - log(2 pi)/2 - log scale - log sigma - log(1 - tanh(u)^2)),
// with log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)).
Draw squashed_draw(Tape& tape, const Mlp& trunk, const ActionBounds& bounds, const Tensor& states,
                   const Tensor& noise, bool trainable) {
  const std::size_t a = bounds.dim();
  const Var out = trunk.forward(tape, tape.constant_ref(states), trainable);
  const Var mu = ad::slice_cols(out, 0, a);
  const Var log_sigma = ad::clamp(ad::slice_cols(out, a, a), -5.0, 2.0);
  const Var z = tape.constant_ref(noise);
  const Var u = ad::add(mu, ad::mul(ad::exp(log_sigma), z));
  Tensor scale = Tensor::matrix(1, a), shift = Tensor::matrix(1, a), c = Tensor::matrix(1, a);
  for (std::size_t d = 0; d < a; ++d) {
    scale[d] = bounds.scale(d);
    shift[d] = bounds.shift(d);
    c[d] = -0.5 * std::log(2.0 * std::numbers::pi) - std::log(bounds.scale(d));
  }
  const Var action = ad::add(ad::mul(ad::tanh(u), tape.constant(scale)), tape.constant(shift));
  const Var jac = ad::scale(ad::add_scalar(ad::neg(ad::add(u, ad::softplus(ad::scale(u, -2.0)))), std::log(2.0)), 2.0);
  const Var terms = ad::sub(ad::sub(ad::add(ad::scale(ad::square(z), -0.5), tape.constant(c)), log_sigma), jac);
  return {action, ad::row_sum(terms)};
}

double max_diff(const Mlp& a, const Mlp& b) {
  const std::vector<double> x = a.flat(), y = b.flat();
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

void adam_update(AdamState& st, Mlp& net, const Tape& tape) {
  std::vector<Tensor*> params = net.parameters();
  std::vector<Tensor> grads;
  for (Tensor* p : params) grads.push_back(tape.gradient_of(*p));
  adam_step(st, params, grads);
}

}  // namespace

SacComparison sac_step_comparison(std::uint64_t seed, bool adaptive_alpha) {
  const std::size_t sd = 3, batch = 32;
  const ActionBounds bounds{{-2.0, -1.0}, {2.0, 0.5}};
  TrainerConfig cfg = preset("sac", bounds.dim());
  cfg.alpha.adaptive = adaptive_alpha;
  cfg.alpha.value = 0.2;
  cfg.policy_hidden = {16, 16};
  cfg.q_hidden = {16, 16};
  cfg.policy_lr = 3e-4;
  cfg.tau = 0.05;
  cfg.seed = seed;
  Trainer trainer(cfg, sd, bounds, nullptr);

  Rng data_rng(derive_seed(seed, {7}));
  TransitionBatch b;
  b.states = data_rng.normal_matrix(batch, sd);
  b.actions = data_rng.uniform_matrix(batch, 2, -0.9, 0.4);
  b.rewards = data_rng.normal_matrix(batch, 1);
  b.next_states = data_rng.normal_matrix(batch, sd);
  b.dones = Tensor::matrix(batch, 1);
  for (std::size_t i = 0; i < batch; i += 5) b.dones[i] = 1.0;
  b.next_actions = b.actions;
  b.indices.assign(batch, 0);

  // Reference copies taken before the trainer moves.
  Mlp pi = trainer.policy().trunk();
  std::vector<Mlp> q, q_targ;
  std::vector<AdamState> q_opt;
  for (std::size_t j = 0; j < cfg.k; ++j) {
    q.push_back(trainer.critic().member(j));
    q_targ.push_back(trainer.critic().target(j));
    q_opt.push_back(AdamState::for_params(std::as_const(q.back()).parameters(), cfg.q_lr));
  }
  AdamState pi_opt = AdamState::for_params(std::as_const(pi).parameters(), cfg.policy_lr);
  double log_alpha = std::log(cfg.alpha.value);

  const std::uint64_t step_seed = derive_seed(seed, {11});
  trainer.rng() = Rng(step_seed);
  trainer.critic_update(b);
  const ActorStats actor = trainer.actor_update(b);
  if (adaptive_alpha) const_cast<AdaptiveAlpha&>(*trainer.adaptive()).update(actor.mean_divergence);

  Rng rng(step_seed);
  const double alpha = std::exp(log_alpha);
  {
    const Tensor noise = rng.normal_matrix(batch, bounds.dim());
    Tape tape;
    const Draw next = squashed_draw(tape, pi, bounds, b.next_states, noise, false);
    Tensor sa = Tensor::matrix(batch, sd + bounds.dim());
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t c = 0; c < sd; ++c) sa.at(i, c) = b.next_states.at(i, c);
      for (std::size_t c = 0; c < bounds.dim(); ++c) sa.at(i, sd + c) = next.action.value().at(i, c);
    }
    Tensor y = Tensor::matrix(batch, 1);
    for (std::size_t i = 0; i < batch; ++i) {
      double m = q_targ[0].predict(sa)[i];
      for (std::size_t j = 1; j < q_targ.size(); ++j) m = std::min(m, q_targ[j].predict(sa)[i]);
      const double soft = m - alpha * next.log_prob.value()[i];
      y[i] = b.dones[i] != 0.0 ? b.rewards[i] : b.rewards[i] + cfg.gamma * soft;
    }
    for (std::size_t j = 0; j < q.size(); ++j) {
      Tape t;
      const Var pred = q[j].forward(t, ad::concat_cols(t.constant_ref(b.states), t.constant_ref(b.actions)));
      t.backward(ad::mean(ad::square(ad::sub(pred, t.constant_ref(y)))));
      adam_update(q_opt[j], q[j], t);
    }
    for (std::size_t j = 0; j < q.size(); ++j) {
      auto tp = q_targ[j].parameters();
      auto sp = std::as_const(q[j]).parameters();
      for (std::size_t p = 0; p < tp.size(); ++p) {
        for (std::size_t e = 0; e < tp[p]->size(); ++e) {
          (*tp[p])[e] = cfg.tau * (*sp[p])[e] + (1.0 - cfg.tau) * (*tp[p])[e];
        }
      }
    }
  }
  double mean_log_prob = 0.0;
  {
    const Tensor noise = rng.normal_matrix(batch, bounds.dim());
    Tape tape;
    const Draw cur = squashed_draw(tape, pi, bounds, b.states, noise, true);
    const Var sa = ad::concat_cols(tape.constant_ref(b.states), cur.action);
    Var qmin = q[0].forward(tape, sa, false);
    for (std::size_t j = 1; j < q.size(); ++j) qmin = ad::row_min(ad::concat_cols(qmin, q[j].forward(tape, sa, false)));
    const Var loss = ad::mean(ad::sub(ad::scale(cur.log_prob, alpha), qmin));
    tape.backward(loss);
    adam_update(pi_opt, pi, tape);
    mean_log_prob = ad::mean(cur.log_prob).value().item();
  }
  if (adaptive_alpha) log_alpha += cfg.alpha.dual_lr * (mean_log_prob - cfg.alpha.epsilon);

  SacComparison out;
  out.max_policy_diff = max_diff(pi, trainer.policy().trunk());
  for (std::size_t j = 0; j < q.size(); ++j) {
    out.max_critic_diff = std::max(out.max_critic_diff, max_diff(q[j], trainer.critic().member(j)));
    out.max_target_diff = std::max(out.max_target_diff, max_diff(q_targ[j], trainer.critic().target(j)));
  }
  out.alpha_diff = std::abs(std::exp(log_alpha) - trainer.alpha());
  return out;
}

SuiteResult run_sac_equivalence_suite(std::uint64_t seed) {
  SuiteResult result{"sac-equiv", true, {}};
  for (bool adaptive : {false, true}) {
    for (std::uint64_t s = 0; s < 3; ++s) {
      const SacComparison c = sac_step_comparison(seed + s, adaptive);
      const double worst = std::max({c.max_policy_diff, c.max_critic_diff, c.max_target_diff, c.alpha_diff});
      const bool ok = worst <= 1e-10;
      result.passed = result.passed && ok;
      std::ostringstream os;
      os << (ok ? "PASS" : "FAIL") << " seed=" << seed + s << (adaptive ? " adaptive" : " fixed")
         << " policy=" << c.max_policy_diff << " critic=" << c.max_critic_diff << " target=" << c.max_target_diff
         << " alpha=" << c.alpha_diff;
      result.lines.push_back(os.str());
    }
  }
  return result;
}

SuiteResult run_combiner_suite() {
  SuiteResult result{"combiner", true, {}};
  auto line = [&](bool ok, const std::string& text) {
    result.passed = result.passed && ok;
    result.lines.push_back(std::string(ok ? "PASS " : "FAIL ") + text);
  };
  const Tensor v({1, 2}, std::vector<double>{1.0, 3.0});
  const double w = combine(v, TargetCombiner::weighted(0.75))[0];
  const double m = combine(v, TargetCombiner::min())[0];
  std::ostringstream os;
  os << "weighted(0.75) of {1, 3} = " << w << " (expect 1.5)";
  line(w == 1.5, os.str());
  os.str("");
  os << "min of {1, 3} = " << m << " (expect 1)";
  line(m == 1.0, os.str());
  Rng rng(1);
  const Tensor single = rng.normal_matrix(100, 1);
  bool identity = true;
  for (const TargetCombiner c : {TargetCombiner::min(), TargetCombiner::weighted(0.75), TargetCombiner::weighted(0.3)}) {
    const Tensor out = combine(single, c);
    for (std::size_t i = 0; i < 100; ++i) identity = identity && out[i] == single[i];
  }
  line(identity, "k=1 is the identity for min and weighted modes (100 rows)");
  return result;
}

}  // namespace brac::checks
