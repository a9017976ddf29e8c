#include "brac/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "brac/adam.hpp"
#include "brac/binary_io.hpp"
#include "brac/data.hpp"
#include "brac/errors.hpp"

namespace brac {

namespace {

constexpr char kPolicyMagic[8] = {'B', 'R', 'A', 'C', 'P', 'O', 'L', '1'};
constexpr double kSquashMargin = 1e-12;
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

Tensor bounds_row(const ActionBounds& b, bool want_scale) {
  Tensor t = Tensor::matrix(1, b.dim());
  for (std::size_t d = 0; d < b.dim(); ++d) t[d] = want_scale ? b.scale(d) : b.shift(d);
  return t;
}

void check_bounds(const ActionBounds& b) {
  if (b.low.empty() || b.low.size() != b.high.size()) throw ConfigError("action bounds must be non-empty and aligned");
  for (std::size_t d = 0; d < b.dim(); ++d) {
    if (!(b.low[d] < b.high[d])) throw ConfigError("action bounds need low < high in every dimension");
  }
}

}  // namespace

ActionBounds ActionBounds::symmetric(std::size_t dim, double limit) {
  return ActionBounds{std::vector<double>(dim, -limit), std::vector<double>(dim, limit)};
}

Tensor ActionBounds::clip_inward(const Tensor& actions, double margin) const {
  Tensor out = actions;
  const std::size_t a = dim();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t d = i % a;
    const double pad = margin * (high[d] - low[d]);
    out[i] = std::clamp(out[i], low[d] + pad, high[d] - pad);
  }
  return out;
}

Tensor ActionBounds::clip(const Tensor& actions) const { return clip_inward(actions, 0.0); }

TanhGaussianPolicy::TanhGaussianPolicy(std::size_t state_dim, ActionBounds bounds,
                                       const std::vector<std::size_t>& hidden, Rng& rng)
    : bounds_(std::move(bounds)) {
  check_bounds(bounds_);
  std::vector<std::size_t> sizes{state_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(2 * bounds_.dim());
  trunk_ = Mlp(sizes, rng);
}

TanhGaussianPolicy::TanhGaussianPolicy(Mlp trunk, ActionBounds bounds)
    : trunk_(std::move(trunk)), bounds_(std::move(bounds)) {
  check_bounds(bounds_);
  if (trunk_.output_dim() != 2 * bounds_.dim()) {
    throw ConfigError("policy trunk must output 2 * action_dim values");
  }
}

TanhGaussianPolicy::Head TanhGaussianPolicy::head(Tape& tape, Var states, bool trainable) const {
  const Var out = trunk_.forward(tape, states, trainable);
  const std::size_t a = action_dim();
  return Head{ad::slice_cols(out, 0, a), ad::clamp(ad::slice_cols(out, a, a), kLogStdMin, kLogStdMax)};
}

PolicySample TanhGaussianPolicy::sample(Tape& tape, Var states, std::size_t n, Rng& rng, bool trainable) const {
  if (n == 0) throw ConfigError("sample: n must be at least 1");
  return sample_with_noise(tape, states, n, rng.normal_matrix(states.rows() * n, action_dim()), trainable);
}

PolicySample TanhGaussianPolicy::sample_with_noise(Tape& tape, Var states, std::size_t n, const Tensor& noise,
                                                   bool trainable) const {
  const std::size_t batch = states.rows(), a = action_dim();
  if (n == 0) throw ConfigError("sample: n must be at least 1");
  if (noise.rows() != batch * n || noise.cols() != a) {
    throw ConfigError("sample: noise shape " + noise.shape_string() + " does not match batch*n x action_dim");
  }
  Head h = head(tape, states, trainable);
  Var mean = n > 1 ? ad::repeat_rows(h.mean, n) : h.mean;
  Var log_std = n > 1 ? ad::repeat_rows(h.log_std, n) : h.log_std;
  Var pre = ad::add(mean, ad::mul(ad::exp(log_std), tape.constant(noise)));
  // tanh rounds to +-1 for |pre| > ~19; keep samples strictly inside the box.
  Var squashed = ad::clamp(ad::tanh(pre), -1.0 + kSquashMargin, 1.0 - kSquashMargin);
  Var actions = ad::add(ad::mul(squashed, tape.constant(bounds_row(bounds_, true))),
                        tape.constant(bounds_row(bounds_, false)));

  Tensor base = Tensor::matrix(batch * n, a);
  for (std::size_t i = 0; i < base.size(); ++i) {
    base[i] = -0.5 * noise[i] * noise[i] - kHalfLog2Pi - std::log(bounds_.scale(i % a));
  }
  Var terms = ad::sub(ad::sub(tape.constant(std::move(base)), log_std), ad::log1m_tanh_sq(pre));
  return PolicySample{actions, pre, ad::row_sum(terms), batch, n};
}

Var TanhGaussianPolicy::log_prob_pre_tanh(Tape& tape, Var states, Var pre_tanh, std::size_t n, bool trainable) const {
  const std::size_t batch = states.rows(), a = action_dim();
  if (n == 0 || pre_tanh.rows() != batch * n || pre_tanh.cols() != a) {
    throw ConfigError("log_prob_pre_tanh: expected " + std::to_string(batch * n) + " x " + std::to_string(a) +
                      " pre-squash values");
  }
  Head h = head(tape, states, trainable);
  Var mean = n > 1 ? ad::repeat_rows(h.mean, n) : h.mean;
  Var log_std = n > 1 ? ad::repeat_rows(h.log_std, n) : h.log_std;
  Var z = ad::mul(ad::sub(pre_tanh, mean), ad::exp(ad::neg(log_std)));
  Tensor c = Tensor::matrix(1, a);
  for (std::size_t d = 0; d < a; ++d) c[d] = -kHalfLog2Pi - std::log(bounds_.scale(d));
  Var terms = ad::sub(ad::sub(ad::add(ad::scale(ad::square(z), -0.5), tape.constant(std::move(c))), log_std),
                      ad::log1m_tanh_sq(pre_tanh));
  return ad::row_sum(terms);
}

Var TanhGaussianPolicy::log_prob(Tape& tape, Var states, const Tensor& actions, bool trainable) const {
  const std::size_t a = action_dim();
  if (actions.rows() != states.rows() || actions.cols() != a) {
    throw ConfigError("log_prob: actions shape " + actions.shape_string() + " does not match states");
  }
  Tensor pre(std::vector<std::size_t>{actions.rows(), a});
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const std::size_t d = i % a;
    const double u = (actions[i] - bounds_.shift(d)) / bounds_.scale(d);
    if (!(std::abs(u) < 1.0)) {
      throw ContractError("log_prob: action " + std::to_string(actions[i]) +
                          " is not strictly inside the bounds; clip inward first");
    }
    pre[i] = std::atanh(u);
  }
  return log_prob_pre_tanh(tape, states, tape.constant(std::move(pre)), 1, trainable);
}

std::pair<Tensor, Tensor> TanhGaussianPolicy::sample(const Tensor& states, std::size_t n, Rng& rng) const {
  Tape tape;
  const PolicySample s = sample(tape, tape.constant_ref(states), n, rng, false);
  const std::size_t batch = states.rows();
  return {s.actions.value().reshaped({batch, n, action_dim()}), s.log_probs.value().reshaped({batch, n})};
}

Tensor TanhGaussianPolicy::log_prob(const Tensor& states, const Tensor& actions) const {
  Tape tape;
  const Var lp = log_prob(tape, tape.constant_ref(states), actions, false);
  return lp.value().reshaped({states.rows()});
}

Tensor TanhGaussianPolicy::mean_action(const Tensor& states) const {
  const Tensor out = trunk_.predict(states);
  const std::size_t a = action_dim();
  Tensor act = Tensor::matrix(states.rows(), a);
  for (std::size_t i = 0; i < states.rows(); ++i) {
    for (std::size_t d = 0; d < a; ++d) {
      act.at(i, d) = bounds_.scale(d) * std::tanh(out.at(i, d)) + bounds_.shift(d);
    }
  }
  return act;
}

void TanhGaussianPolicy::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(kPolicyMagic, 8);
  io::put_u64(os, trunk_.layer_sizes().size());
  for (std::size_t s : trunk_.layer_sizes()) io::put_u64(os, s);
  io::put_u64(os, bounds_.dim());
  for (double v : bounds_.low) io::put_f64(os, v);
  for (double v : bounds_.high) io::put_f64(os, v);
  io::put_f64(os, kLogStdMin);
  io::put_f64(os, kLogStdMax);
  const std::vector<double> flat = trunk_.flat();
  io::put_u64(os, flat.size());
  for (double v : flat) io::put_f64(os, v);
  if (!os) throw FormatError("write failed for " + path.string());
}

TanhGaussianPolicy TanhGaussianPolicy::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open policy checkpoint " + path.string());
  char magic[8];
  io::read_exact(is, magic, 8, "policy magic");
  if (!std::equal(magic, magic + 8, kPolicyMagic)) throw FormatError(path.string() + " is not a policy checkpoint");
  const std::uint64_t layers = io::get_u64(is, "layer count");
  if (layers < 2 || layers > 64) throw FormatError("implausible layer count in policy checkpoint");
  std::vector<std::size_t> sizes(layers);
  for (auto& s : sizes) {
    s = io::get_u64(is, "layer size");
    if (s == 0 || s > (1u << 20)) throw FormatError("implausible layer size in policy checkpoint");
  }
  const std::uint64_t dim = io::get_u64(is, "action dim");
  if (dim == 0 || 2 * dim != sizes.back()) throw FormatError("policy checkpoint action dim disagrees with trunk");
  ActionBounds bounds{std::vector<double>(dim), std::vector<double>(dim)};
  for (auto& v : bounds.low) v = io::get_f64(is, "bounds");
  for (auto& v : bounds.high) v = io::get_f64(is, "bounds");
  const double lo = io::get_f64(is, "clamp"), hi = io::get_f64(is, "clamp");
  if (lo != kLogStdMin || hi != kLogStdMax) throw FormatError("policy checkpoint uses a different log-std clamp");
  const std::uint64_t count = io::get_u64(is, "parameter count");
  if (count != Mlp::parameter_count(sizes)) throw FormatError("policy checkpoint parameter count mismatch");
  std::vector<double> flat(count);
  for (auto& v : flat) v = io::get_f64(is, "parameters");
  Mlp trunk = Mlp::zeros(sizes);
  trunk.set_flat(flat);
  return TanhGaussianPolicy(std::move(trunk), std::move(bounds));
}

CloneResult clone_behavior(const OfflineDataset& dataset, const CloneConfig& cfg, Rng& rng) {
  if (dataset.empty()) throw ConfigError("clone_behavior: dataset is empty");
  if (cfg.steps == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0)) {
    throw ConfigError("clone_behavior: steps, batch size and learning rate must be positive");
  }
  const std::unique_ptr<Environment> env = make_env(dataset.env_name());
  if (env->state_dim() != dataset.state_dim() || env->action_dim() != dataset.action_dim()) {
    throw ConfigError("clone_behavior: dataset dimensions do not match " + dataset.env_name());
  }
  CloneResult result;
  result.policy = TanhGaussianPolicy(dataset.state_dim(), env->bounds(), cfg.hidden, rng);
  TanhGaussianPolicy& pi = result.policy;
  Adam opt(pi.trunk(), cfg.learning_rate);
  result.trace.reserve(cfg.steps);

  const std::size_t sd = dataset.state_dim(), adim = dataset.action_dim();
  Tensor states = Tensor::matrix(cfg.batch_size, sd);
  Tensor actions = Tensor::matrix(cfg.batch_size, adim);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const std::size_t i = rng.index(dataset.size());
      std::copy(dataset.state(i).begin(), dataset.state(i).end(), states.row(b).begin());
      std::copy(dataset.action(i).begin(), dataset.action(i).end(), actions.row(b).begin());
    }
    Tape tape(static_cast<std::int64_t>(step));
    const Var lp = pi.log_prob(tape, tape.constant_ref(states), pi.bounds().clip_inward(actions));
    const Var loss = ad::neg(ad::mean(lp));
    result.trace.push_back(-loss.value().item());
    tape.backward(loss);
    opt.step(pi.trunk(), tape);
  }

  double total = 0.0;
  constexpr std::size_t kChunk = 4096;
  for (std::size_t start = 0; start < dataset.size(); start += kChunk) {
    const std::size_t rows = std::min(kChunk, dataset.size() - start);
    Tensor s = Tensor::matrix(rows, sd), a = Tensor::matrix(rows, adim);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(dataset.state(start + r).begin(), dataset.state(start + r).end(), s.row(r).begin());
      std::copy(dataset.action(start + r).begin(), dataset.action(start + r).end(), a.row(r).begin());
    }
    const Tensor lp = pi.log_prob(s, pi.bounds().clip_inward(a));
    for (double v : lp.values()) total += v;
  }
  result.final_log_likelihood = total / static_cast<double>(dataset.size());
  return result;
}

}  // namespace brac
