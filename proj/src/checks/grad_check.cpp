#include <algorithm>
#include <cmath>
#include <sstream>

#include "brac/checks.hpp"
#include "brac/errors.hpp"
#include "brac/rng.hpp"

namespace brac::checks {

Tensor reference_forward(const Mlp& net, const Tensor& x, std::vector<bool>* pattern) {
  if (pattern) pattern->clear();
  const std::size_t batch = x.rows();
  std::vector<double> h(x.values().begin(), x.values().end());
  std::size_t width = x.cols();
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const Tensor& w = net.weight(l);
    const Tensor& b = net.bias(l);
    const std::size_t out = w.cols();
    std::vector<double> z(batch * out, 0.0);
    for (std::size_t r = 0; r < batch; ++r) {
      for (std::size_t o = 0; o < out; ++o) {
        double acc = b[o];
        for (std::size_t i = 0; i < width; ++i) acc += h[r * width + i] * w[i * out + o];
        z[r * out + o] = acc;
      }
    }
    if (l + 1 < net.num_layers()) {
      for (double& v : z) {
        if (pattern) pattern->push_back(v > 0.0);
        v = v > 0.0 ? v : 0.0;
      }
    }
    h = std::move(z);
    width = out;
  }
  return Tensor({batch, width}, std::move(h));
}

namespace {

double squared_loss(const Mlp& net, const Tensor& x, const Tensor& y, std::vector<bool>* pattern) {
  const Tensor out = reference_forward(net, x, pattern);
  double s = 0.0;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double d = out[k] - y[k];
    s += d * d;
  }
  return 0.5 * s / static_cast<double>(out.size());
}

}  // namespace

GradCheck finite_difference_mlp(const Mlp& net, const Tensor& x, const Tensor& y, double h, std::size_t probes,
                                std::uint64_t seed, double floor) {
  Tape tape;
  Var out = net.forward(tape, tape.constant_ref(x));
  Var diff = ad::sub(out, tape.constant_ref(y));
  Var loss = ad::scale(ad::mean(ad::square(diff)), 0.5);
  tape.backward(loss);
  const auto params = net.parameters();
  const auto grads = tape.gradients(params);

  std::vector<bool> base_pattern;
  squared_loss(net, x, y, &base_pattern);

  Mlp probe = net;
  auto probe_params = probe.parameters();
  const std::size_t total = net.parameter_count();
  Rng rng(seed);
  GradCheck report;
  for (std::size_t p = 0; p < std::min(probes, total); ++p) {
    std::size_t flat = rng.index(total);
    std::size_t which = 0;
    while (flat >= params[which]->size()) flat -= params[which++]->size();
    double& theta = (*probe_params[which])[flat];
    const double saved = theta;
    std::vector<bool> plus_pattern, minus_pattern;
    theta = saved + h;
    const double lp = squared_loss(probe, x, y, &plus_pattern);
    theta = saved - h;
    const double lm = squared_loss(probe, x, y, &minus_pattern);
    theta = saved;
    if (plus_pattern != base_pattern || minus_pattern != base_pattern) {
      ++report.entries_skipped;
      continue;
    }
    const double numeric = (lp - lm) / (2.0 * h);
    const double analytic = grads[which][flat];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), floor});
    report.max_relative_error = std::max(report.max_relative_error, std::abs(numeric - analytic) / denom);
    ++report.entries_checked;
  }
  return report;
}

SuiteResult run_grad_suite(std::size_t trials, std::uint64_t seed) {
  SuiteResult result{"grad", true, {}};
  Rng rng(seed);
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t in = 1 + rng.index(8);
    const std::size_t out = 1 + rng.index(3);
    const std::size_t depth = 1 + rng.index(2);
    std::vector<std::size_t> sizes{in};
    for (std::size_t d = 0; d < depth; ++d) sizes.push_back(1 + rng.index(300));
    sizes.push_back(out);
    Mlp net(sizes, rng);
    const std::size_t batch = 1 + rng.index(4);
    const Tensor x = rng.normal_matrix(batch, in);
    const Tensor y = rng.normal_matrix(batch, out);
    const GradCheck g = finite_difference_mlp(net, x, y, 1e-5, 24, rng.next_u64());
    worst = std::max(worst, g.max_relative_error);
    checked += g.entries_checked;
    skipped += g.entries_skipped;
  }
  std::ostringstream os;
  os << "trials=" << trials << " entries=" << checked << " kink_skips=" << skipped
     << " max_relative_error=" << worst;
  result.lines.push_back(os.str());
  result.passed = worst < 1e-4 && checked > 0;
  return result;
}

double mmd_squared_bruteforce(const Tensor& x, const Tensor& y, double sigma) {
  const std::size_t n = x.rows(), m = y.rows(), d = x.cols();
  auto k = [&](const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double l1 = 0.0;
    for (std::size_t c = 0; c < d; ++c) l1 += std::abs(a.at(i, c) - b.at(j, c));
    return std::exp(-l1 / sigma);
  };
  double xx = 0.0, xy = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) xx += k(x, i, x, j);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) xy += k(x, i, y, j);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) yy += k(y, i, y, j);
  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  return xx / (dn * dn) - 2.0 * xy / (dn * dm) + yy / (dm * dm);
}

}  // namespace brac::checks
