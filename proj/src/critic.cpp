#include "brac/critic.hpp"

#include <algorithm>
#include <fstream>

#include "brac/adam.hpp"
#include "brac/binary_io.hpp"
#include "brac/errors.hpp"

namespace brac {

namespace {

constexpr char kCriticMagic[8] = {'B', 'R', 'A', 'C', 'Q', 'E', 'N', '1'};

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw ConfigError("q_values: states and actions have different row counts");
  Tensor out = Tensor::matrix(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy(a.row(i).begin(), a.row(i).end(), out.row(i).begin());
    std::copy(b.row(i).begin(), b.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

void write_mlp(std::ostream& os, const Mlp& net) {
  io::put_u64(os, net.layer_sizes().size());
  for (std::size_t s : net.layer_sizes()) io::put_u64(os, s);
  for (double v : net.flat()) io::put_f64(os, v);
}

Mlp read_mlp(std::istream& is) {
  const std::uint64_t layers = io::get_u64(is, "layer count");
  if (layers < 2 || layers > 64) throw FormatError("implausible layer count in critic checkpoint");
  std::vector<std::size_t> sizes(layers);
  for (auto& s : sizes) {
    s = io::get_u64(is, "layer size");
    if (s == 0 || s > (1u << 20)) throw FormatError("implausible layer size in critic checkpoint");
  }
  std::vector<double> flat(Mlp::parameter_count(sizes));
  for (auto& v : flat) v = io::get_f64(is, "parameters");
  Mlp net = Mlp::zeros(sizes);
  net.set_flat(flat);
  return net;
}

}  // namespace

void TargetCombiner::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("combiner lambda must be in [0, 1]");
}

Tensor combine(const Tensor& values, const TargetCombiner& c) {
  c.validate();
  const std::size_t b = values.rows(), k = values.cols();
  if (k == 0) throw ConfigError("combine: need at least one ensemble member");
  Tensor out(std::vector<std::size_t>{b});
  for (std::size_t i = 0; i < b; ++i) {
    const auto row = values.row(i);
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    // lo == hi for k = 1; skip the blend so the single value passes through unrounded.
    out[i] = c.mode == TargetCombiner::Mode::kMin || *lo == *hi ? *lo : c.lambda * *lo + (1.0 - c.lambda) * *hi;
  }
  return out;
}

QEnsemble::QEnsemble(std::size_t state_dim, std::size_t action_dim, std::size_t k,
                     const std::vector<std::size_t>& hidden, Rng& rng, double tau)
    : state_dim_(state_dim), tau_(tau) {
  if (k == 0) throw ConfigError("ensemble size k must be at least 1");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must be in (0, 1]");
  std::vector<std::size_t> sizes{state_dim + action_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  for (std::size_t j = 0; j < k; ++j) source_.emplace_back(sizes, rng);
  target_ = source_;
}

QEnsemble::QEnsemble(std::vector<Mlp> members, std::size_t state_dim, double tau)
    : state_dim_(state_dim), tau_(tau), source_(std::move(members)) {
  if (source_.empty()) throw ConfigError("ensemble size k must be at least 1");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must be in (0, 1]");
  for (const Mlp& m : source_) {
    if (m.layer_sizes() != source_.front().layer_sizes() || m.output_dim() != 1 || m.input_dim() <= state_dim) {
      throw ConfigError("ensemble members must share a shape with scalar output over (state, action)");
    }
  }
  target_ = source_;
}

Tensor QEnsemble::q_values(const Tensor& states, const Tensor& actions, Which which) const {
  const Tensor sa = concat(states, actions);
  const std::vector<Mlp>& nets = which == Which::kSource ? source_ : target_;
  Tensor out = Tensor::matrix(sa.rows(), k());
  for (std::size_t j = 0; j < k(); ++j) {
    const Tensor q = nets[j].predict(sa);
    for (std::size_t i = 0; i < sa.rows(); ++i) out.at(i, j) = q[i];
  }
  return out;
}

Var QEnsemble::q_values(Tape& tape, Var states, Var actions, bool trainable) const {
  const Var sa = ad::concat_cols(states, actions);
  Var out = source_[0].forward(tape, sa, trainable);
  for (std::size_t j = 1; j < k(); ++j) out = ad::concat_cols(out, source_[j].forward(tape, sa, trainable));
  return out;
}

Var QEnsemble::min_q(Tape& tape, Var states, Var actions, bool trainable) const {
  const Var q = q_values(tape, states, actions, trainable);
  return k() == 1 ? q : ad::row_min(q);
}

void QEnsemble::soft_update_targets() {
  for (std::size_t j = 0; j < k(); ++j) soft_update(target_[j], source_[j], tau_);
}

void QEnsemble::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(kCriticMagic, 8);
  io::put_u64(os, k());
  io::put_u64(os, state_dim_);
  io::put_f64(os, tau_);
  for (const Mlp& m : source_) write_mlp(os, m);
  for (const Mlp& m : target_) write_mlp(os, m);
  if (!os) throw FormatError("write failed for " + path.string());
}

QEnsemble QEnsemble::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open critic checkpoint " + path.string());
  char magic[8];
  io::read_exact(is, magic, 8, "critic magic");
  if (!std::equal(magic, magic + 8, kCriticMagic)) throw FormatError(path.string() + " is not a critic checkpoint");
  const std::uint64_t k = io::get_u64(is, "ensemble size");
  if (k == 0 || k > 64) throw FormatError("implausible ensemble size in critic checkpoint");
  const std::uint64_t state_dim = io::get_u64(is, "state dim");
  const double tau = io::get_f64(is, "tau");
  std::vector<Mlp> source, target;
  for (std::uint64_t j = 0; j < k; ++j) source.push_back(read_mlp(is));
  for (std::uint64_t j = 0; j < k; ++j) target.push_back(read_mlp(is));
  QEnsemble ens(std::move(source), state_dim, tau);
  for (std::uint64_t j = 0; j < k; ++j) {
    if (target[j].layer_sizes() != ens.source_[j].layer_sizes()) {
      throw FormatError("critic checkpoint target shape differs from source");
    }
  }
  ens.target_ = std::move(target);
  return ens;
}

Tensor td_target(const QEnsemble& ens, const TargetCombiner& c, const TransitionBatch& batch,
                 const Tensor& next_actions, const Tensor& penalty, double alpha, double gamma) {
  const std::size_t b = batch.size();
  if (penalty.size() != b || next_actions.rows() != b) throw ConfigError("td_target: batch sizes disagree");
  const Tensor q_bar = combine(ens.q_values(batch.next_states, next_actions, QEnsemble::Which::kTarget), c);
  Tensor y(std::vector<std::size_t>{b});
  for (std::size_t i = 0; i < b; ++i) {
    const double r = batch.rewards[i];
    y[i] = batch.dones[i] != 0.0 ? r : r + gamma * (q_bar[i] - alpha * penalty[i]);
  }
  return y;
}

}  // namespace brac
