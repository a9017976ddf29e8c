#include "brac/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "brac/errors.hpp"

namespace brac {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MutMap as_matrix(Tensor& t) {
  return MutMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }

const Tensor& Tape::value(int id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

Tensor& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    const Tensor& v = value(id);
    n.grad = Tensor(v.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant_ref(const Tensor& value) {
  Node n;
  n.external = &value;
  return push(std::move(n));
}

Var Tape::parameter(const Tensor& param) {
  if (auto it = params_.find(&param); it != params_.end()) return Var(this, it->second);
  Node n;
  n.external = &param;
  n.requires_grad = true;
  Var v = push(std::move(n));
  params_.emplace(&param, v.id());
  return v;
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> parents, Backward fn) {
  if (!value.all_finite()) {
    throw TrainingError("non-finite value produced by op '" + std::string(op) + "' at step " +
                        std::to_string(step_index_));
  }
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    if (p.tape() != this) throw ContractError("op '" + std::string(op) + "' mixes tapes");
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("backward: loss recorded on a different tape");
  const Tensor& lv = value(loss.id());
  if (lv.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + lv.shape_string());
  }
  grad_buffer(loss.id())[0] += 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    // Closures only write to parents, which always have smaller ids.
    Tensor g = std::move(n.grad);
    n.backward(*this, g);
    nodes_[id].grad = std::move(g);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.has_grad) return n.grad;
  return Tensor(value(v.id()).shape(), 0.0);
}

Tensor Tape::gradient_of(const Tensor& param) const {
  auto it = params_.find(&param);
  if (it == params_.end()) return Tensor(param.shape(), 0.0);
  return grad(Var(const_cast<Tape*>(this), it->second));
}

std::vector<Tensor> Tape::gradients(std::span<const Tensor* const> params) const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Tensor* p : params) out.push_back(gradient_of(*p));
  return out;
}

namespace ad {

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("operation on an unbound Var");
  return *a.tape();
}

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
}

std::vector<std::size_t> broadcast_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  const std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  auto dim = [&](std::size_t x, std::size_t y) -> std::size_t {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ConfigError(std::string(op) + ": cannot broadcast " + a.shape_string() + " with " +
                      b.shape_string());
  };
  return {dim(ar, br), dim(ac, bc)};
}

// Index of operand element feeding output element (i, j) under broadcasting.
inline std::size_t bidx(const Tensor& t, std::size_t i, std::size_t j) {
  const std::size_t r = t.rows() == 1 ? 0 : i;
  const std::size_t c = t.cols() == 1 ? 0 : j;
  return r * t.cols() + c;
}

// Reduces an output-shaped gradient onto an operand's (possibly broadcast) shape.
void accumulate_broadcast(Tape& tape, int id, const Tensor& g, const std::vector<double>& factor) {
  Tensor& dst = tape.grad_buffer(id);
  const std::size_t rows = g.rows(), cols = g.cols();
  if (dst.size() == g.size()) {
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += factor.empty() ? g[k] : g[k] * factor[k];
    return;
  }
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t k = i * cols + j;
      dst[bidx(dst, i, j)] += factor.empty() ? g[k] : g[k] * factor[k];
    }
  }
}

template <typename F, typename DF>
Var unary(std::string_view op, Var a, F f, DF df) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) y[k] = f(x[k]);
  const int aid = a.id();
  return tape.record(op, std::move(y), {a}, [aid, df](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(aid);
    Tensor& dst = t.grad_buffer(aid);
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k] * df(xv[k]);
  });
}

enum class BinOp { kAdd, kSub, kMul };

Var binary(std::string_view op, BinOp kind, Var a, Var b) {
  require_same_tape(a, b);
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const auto shape = broadcast_shape(op, av, bv);
  Tensor y(shape);
  const std::size_t rows = shape[0], cols = shape[1];
  const bool same = av.same_shape(bv) && av.size() == y.size();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t k = i * cols + j;
      const double x = same ? av[k] : av[bidx(av, i, j)];
      const double z = same ? bv[k] : bv[bidx(bv, i, j)];
      switch (kind) {
        case BinOp::kAdd: y[k] = x + z; break;
        case BinOp::kSub: y[k] = x - z; break;
        case BinOp::kMul: y[k] = x * z; break;
      }
    }
  }
  const int aid = a.id(), bid = b.id();
  const bool ag = tape.requires_grad(a), bg = tape.requires_grad(b);
  return tape.record(op, std::move(y), {a, b}, [=](Tape& t, const Tensor& g) {
    const std::size_t n = g.size();
    if (kind == BinOp::kMul) {
      const Tensor& A = t.value(aid);
      const Tensor& B = t.value(bid);
      std::vector<double> fa, fb;
      if (ag) {
        fb.resize(n);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) fb[i * cols + j] = B[bidx(B, i, j)];
        accumulate_broadcast(t, aid, g, fb);
      }
      if (bg) {
        fa.resize(n);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) fa[i * cols + j] = A[bidx(A, i, j)];
        accumulate_broadcast(t, bid, g, fa);
      }
      return;
    }
    if (ag) accumulate_broadcast(t, aid, g, {});
    if (bg) {
      if (kind == BinOp::kSub) {
        std::vector<double> minus(n, -1.0);
        accumulate_broadcast(t, bid, g, minus);
      } else {
        accumulate_broadcast(t, bid, g, {});
      }
    }
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ConfigError("matmul: shape mismatch " + av.shape_string() + " x " + bv.shape_string());
  }
  Tensor y = Tensor::matrix(av.rows(), bv.cols());
  as_matrix(y).noalias() = as_matrix(av) * as_matrix(bv);
  const int aid = a.id(), bid = b.id();
  const bool ag = tape.requires_grad(a), bg = tape.requires_grad(b);
  return tape.record("matmul", std::move(y), {a, b}, [=](Tape& t, const Tensor& g) {
    if (ag) as_matrix(t.grad_buffer(aid)).noalias() += as_matrix(g) * as_matrix(t.value(bid)).transpose();
    if (bg) as_matrix(t.grad_buffer(bid)).noalias() += as_matrix(t.value(aid)).transpose() * as_matrix(g);
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw ConfigError("matmul_nt: shape mismatch " + av.shape_string() + " x " + bv.shape_string() + "^T");
  }
  Tensor y = Tensor::matrix(av.rows(), bv.rows());
  as_matrix(y).noalias() = as_matrix(av) * as_matrix(bv).transpose();
  const int aid = a.id(), bid = b.id();
  const bool ag = tape.requires_grad(a), bg = tape.requires_grad(b);
  return tape.record("matmul_nt", std::move(y), {a, b}, [=](Tape& t, const Tensor& g) {
    if (ag) as_matrix(t.grad_buffer(aid)).noalias() += as_matrix(g) * as_matrix(t.value(bid));
    if (bg) as_matrix(t.grad_buffer(bid)).noalias() += as_matrix(g).transpose() * as_matrix(t.value(aid));
  });
}

Var linear(Var x, Var w, Var b) {
  require_same_tape(x, w);
  require_same_tape(x, b);
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw ConfigError("linear: shape mismatch x" + xv.shape_string() + " w" + wv.shape_string() + " b" +
                      bv.shape_string());
  }
  Tensor y = Tensor::matrix(xv.rows(), wv.cols());
  auto ym = as_matrix(y);
  ym.noalias() = as_matrix(xv) * as_matrix(wv);
  ym.rowwise() += as_matrix(bv).row(0);
  const int xid = x.id(), wid = w.id(), bid = b.id();
  const bool xg = tape.requires_grad(x), wg = tape.requires_grad(w), bg = tape.requires_grad(b);
  return tape.record("linear", std::move(y), {x, w, b}, [=](Tape& t, const Tensor& g) {
    const auto gm = as_matrix(g);
    if (xg) as_matrix(t.grad_buffer(xid)).noalias() += gm * as_matrix(t.value(wid)).transpose();
    if (wg) as_matrix(t.grad_buffer(wid)).noalias() += as_matrix(t.value(xid)).transpose() * gm;
    if (bg) as_matrix(t.grad_buffer(bid)).row(0) += gm.colwise().sum();
  });
}

Var add(Var a, Var b) { return binary("add", BinOp::kAdd, a, b); }
Var sub(Var a, Var b) { return binary("sub", BinOp::kSub, a, b); }
Var mul(Var a, Var b) { return binary("mul", BinOp::kMul, a, b); }

Var neg(Var a) {
  return unary("neg", a, [](double x) { return -x; }, [](double) { return -1.0; });
}

Var scale(Var a, double c) {
  return unary("scale", a, [c](double x) { return c * x; }, [c](double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary("add_scalar", a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Var relu(Var a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double x) {
                 const double t = std::tanh(x);
                 return 1.0 - t * t;
               });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(Var a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary("sqrt", a, [](double x) { return std::sqrt(x); },
               [](double x) { return 0.5 / std::sqrt(x); });
}

Var square(Var a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

namespace {

double softplus_value(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var softplus(Var a) { return unary("softplus", a, softplus_value, sigmoid); }

Var log1m_tanh_sq(Var a) {
  static const double kLog2 = std::log(2.0);
  return unary(
      "log1m_tanh_sq", a, [](double x) { return 2.0 * (kLog2 - x - softplus_value(-2.0 * x)); },
      [](double x) { return -2.0 * std::tanh(x); });
}

Var clamp(Var a, double lo, double hi) {
  return unary("clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
  Tape& tape = tape_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const int aid = a.id();
  return tape.record("sum", Tensor::scalar(s), {a}, [aid](Tape& t, const Tensor& g) {
    for (double& d : t.grad_buffer(aid).storage()) d += g[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  Tensor y = Tensor::matrix(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += x[i * c + j];
    y[i] = s;
  }
  const int aid = a.id();
  return tape.record("row_sum", std::move(y), {a}, [aid, r, c](Tape& t, const Tensor& g) {
    Tensor& dst = t.grad_buffer(aid);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += g[i];
  });
}

namespace {

Var row_extreme(std::string_view op, Var a, bool take_min) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  if (c == 0) throw ConfigError(std::string(op) + ": empty rows");
  Tensor y = Tensor::matrix(r, 1);
  std::vector<std::size_t> arg(r, 0);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      const double v = x[i * c + j];
      const double b = x[i * c + best];
      if (take_min ? v < b : v > b) best = j;
    }
    arg[i] = best;
    y[i] = x[i * c + best];
  }
  const int aid = a.id();
  return tape.record(op, std::move(y), {a}, [aid, c, arg = std::move(arg)](Tape& t, const Tensor& g) {
    Tensor& dst = t.grad_buffer(aid);
    for (std::size_t i = 0; i < arg.size(); ++i) dst[i * c + arg[i]] += g[i];
  });
}

}  // namespace

Var row_min(Var a) { return row_extreme("row_min", a, true); }
Var row_max(Var a) { return row_extreme("row_max", a, false); }

Var group_mean(Var a, std::size_t n) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  if (n == 0 || r % n != 0) {
    throw ConfigError("group_mean: " + std::to_string(r) + " rows not divisible by " + std::to_string(n));
  }
  const std::size_t groups = r / n;
  Tensor y = Tensor::matrix(groups, c);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    for (std::size_t k = 0; k < n; ++k) {
      const double* src = x.data() + (gi * n + k) * c;
      for (std::size_t j = 0; j < c; ++j) y[gi * c + j] += src[j];
    }
    for (std::size_t j = 0; j < c; ++j) y[gi * c + j] *= inv;
  }
  const int aid = a.id();
  return tape.record("group_mean", std::move(y), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& dst = t.grad_buffer(aid);
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < c; ++j) dst[(gi * n + k) * c + j] += g[gi * c + j] * inv;
  });
}

Var repeat_rows(Var a, std::size_t n) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  Tensor y = Tensor::matrix(r * n, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t k = 0; k < n; ++k)
      std::copy_n(x.data() + i * c, c, y.data() + (i * n + k) * c);
  const int aid = a.id();
  return tape.record("repeat_rows", std::move(y), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& dst = t.grad_buffer(aid);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += g[(i * n + k) * c + j];
  });
}

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b);
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw ConfigError("concat_cols: row mismatch " + av.shape_string() + " vs " + bv.shape_string());
  }
  const std::size_t r = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor y = Tensor::matrix(r, ca + cb);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(av.data() + i * ca, ca, y.data() + i * (ca + cb));
    std::copy_n(bv.data() + i * cb, cb, y.data() + i * (ca + cb) + ca);
  }
  const int aid = a.id(), bid = b.id();
  const bool ag = tape.requires_grad(a), bg = tape.requires_grad(b);
  return tape.record("concat_cols", std::move(y), {a, b}, [=](Tape& t, const Tensor& g) {
    const std::size_t w = ca + cb;
    if (ag) {
      Tensor& da = t.grad_buffer(aid);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < ca; ++j) da[i * ca + j] += g[i * w + j];
    }
    if (bg) {
      Tensor& db = t.grad_buffer(bid);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cb; ++j) db[i * cb + j] += g[i * w + ca + j];
    }
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  if (start + count > c) throw ConfigError("slice_cols: range exceeds " + x.shape_string());
  Tensor y = Tensor::matrix(r, count);
  for (std::size_t i = 0; i < r; ++i) std::copy_n(x.data() + i * c + start, count, y.data() + i * count);
  const int aid = a.id();
  return tape.record("slice_cols", std::move(y), {a}, [=](Tape& t, const Tensor& g) {
    Tensor& dst = t.grad_buffer(aid);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) dst[i * c + start + j] += g[i * count + j];
  });
}

Var stop_gradient(Var a) { return tape_of(a).constant(a.value()); }

namespace {

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double laplace(const double* p, const double* q, std::size_t d, double inv_sigma) {
  double l1 = 0.0;
  for (std::size_t k = 0; k < d; ++k) l1 += std::abs(p[k] - q[k]);
  return std::exp(-l1 * inv_sigma);
}

double pair_sum(const double* p, std::size_t np, const double* q, std::size_t nq, std::size_t d,
                double inv_sigma) {
  double s = 0.0;
  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t j = 0; j < nq; ++j) s += laplace(p + i * d, q + j * d, d, inv_sigma);
  return s;
}

// d/dp of w * sum_j K(p, q_j), accumulated into out[0..d).
void pull(const double* p, const double* q, std::size_t nq, std::size_t d, double inv_sigma, double w,
          double* out) {
  for (std::size_t j = 0; j < nq; ++j) {
    const double* qj = q + j * d;
    const double k = laplace(p, qj, d, inv_sigma);
    for (std::size_t c = 0; c < d; ++c) out[c] -= w * k * inv_sigma * sgn(p[c] - qj[c]);
  }
}

}  // namespace

Var mmd_laplacian(Var x, Var y, std::size_t n, std::size_t m, double sigma) {
  require_same_tape(x, y);
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  if (sigma <= 0.0) throw ConfigError("mmd_laplacian: sigma must be positive");
  if (n == 0 || m == 0 || xv.rows() % n != 0 || yv.rows() % m != 0 || xv.cols() != yv.cols() ||
      xv.rows() / n != yv.rows() / m) {
    throw ConfigError("mmd_laplacian: incompatible sample sets " + xv.shape_string() + " / " +
                      yv.shape_string());
  }
  const std::size_t groups = xv.rows() / n, d = xv.cols();
  const double inv_sigma = 1.0 / sigma;
  const double nn = static_cast<double>(n * n), mm = static_cast<double>(m * m),
               nm = static_cast<double>(n * m);
  Tensor out = Tensor::matrix(groups, 1);
  for (std::size_t g = 0; g < groups; ++g) {
    const double* X = xv.data() + g * n * d;
    const double* Y = yv.data() + g * m * d;
    const double kxx = pair_sum(X, n, X, n, d, inv_sigma) / nn;
    const double kxy = pair_sum(X, n, Y, m, d, inv_sigma) / nm;
    const double kyy = pair_sum(Y, m, Y, m, d, inv_sigma) / mm;
    out[g] = kxx - 2.0 * kxy + kyy;
  }
  const int xid = x.id(), yid = y.id();
  const bool xg = tape.requires_grad(x), yg = tape.requires_grad(y);
  return tape.record("mmd_laplacian", std::move(out), {x, y}, [=](Tape& t, const Tensor& go) {
    const Tensor& X = t.value(xid);
    const Tensor& Y = t.value(yid);
    for (std::size_t g = 0; g < groups; ++g) {
      const double* xs = X.data() + g * n * d;
      const double* ys = Y.data() + g * m * d;
      if (xg) {
        double* dx = t.grad_buffer(xid).data() + g * n * d;
        for (std::size_t i = 0; i < n; ++i) {
          pull(xs + i * d, xs, n, d, inv_sigma, 2.0 * go[g] / nn, dx + i * d);
          pull(xs + i * d, ys, m, d, inv_sigma, -2.0 * go[g] / nm, dx + i * d);
        }
      }
      if (yg) {
        double* dy = t.grad_buffer(yid).data() + g * m * d;
        for (std::size_t j = 0; j < m; ++j) {
          pull(ys + j * d, ys, m, d, inv_sigma, 2.0 * go[g] / mm, dy + j * d);
          pull(ys + j * d, xs, n, d, inv_sigma, -2.0 * go[g] / nm, dy + j * d);
        }
      }
    }
  });
}

}  // namespace ad
}  // namespace brac
