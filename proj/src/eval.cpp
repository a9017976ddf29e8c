#include "brac/eval.hpp"

#include <algorithm>
#include <numeric>

#include "brac/errors.hpp"

namespace brac {

void EvalProtocol::validate() const {
  if (episodes == 0) throw ConfigError("evaluation needs at least one episode");
  if (tail_points == 0) throw ConfigError("tail_points must be at least 1");
  if (candidates == 0) throw ConfigError("evaluation needs at least one candidate action");
}

Tensor select_max_q(const TanhGaussianPolicy& pi, const QEnsemble& ens, const Tensor& states,
                    std::size_t candidates, Rng& rng) {
  const std::size_t b = states.rows(), a = pi.action_dim();
  const Tensor actions = pi.sample(states, candidates, rng).first.reshaped({b * candidates, a});
  if (candidates == 1) return actions;
  Tensor rep = Tensor::matrix(b * candidates, states.cols());
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < candidates; ++j) {
      std::copy(states.row(i).begin(), states.row(i).end(), rep.row(i * candidates + j).begin());
    }
  }
  const Tensor q = ens.q_values(rep, actions);
  Tensor out = Tensor::matrix(b, a);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    double best_q = 0.0;
    for (std::size_t j = 0; j < candidates; ++j) {
      const auto row = q.row(i * candidates + j);
      const double m = *std::min_element(row.begin(), row.end());
      if (j == 0 || m > best_q) {
        best = j;
        best_q = m;
      }
    }
    const auto src = actions.row(i * candidates + best);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

double evaluate(const Environment& env, const BatchActionSelector& select, const EvalProtocol& protocol, Rng& rng) {
  protocol.validate();
  const std::vector<double> r = batched_returns(env, select, protocol.episodes, rng);
  return std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
}

double evaluate(const TanhGaussianPolicy& pi, const QEnsemble& ens, const Environment& env,
                const EvalProtocol& protocol, Rng& rng) {
  const std::size_t c = protocol.candidates;
  return evaluate(env, [&](const Tensor& s, Rng& r) { return select_max_q(pi, ens, s, c, r); }, protocol, rng);
}

double tail_mean(const std::vector<EvalPoint>& trace, std::size_t tail) {
  if (trace.empty()) return 0.0;
  const std::size_t k = std::min(tail, trace.size());
  double s = 0.0;
  for (std::size_t i = trace.size() - k; i < trace.size(); ++i) s += trace[i].mean_return;
  return s / static_cast<double>(k);
}

}  // namespace brac
