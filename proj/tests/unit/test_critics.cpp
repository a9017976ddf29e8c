#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "brac/checks.hpp"
#include "brac/critic.hpp"
#include "brac/errors.hpp"

using namespace brac;

namespace {

Tensor row_values(std::vector<double> v) {
  const std::size_t k = v.size();
  return Tensor({1, k}, std::move(v));
}

TransitionBatch one_row_batch(double reward, bool done) {
  TransitionBatch b;
  b.states = Tensor::matrix(1, 2);
  b.actions = Tensor::matrix(1, 1);
  b.rewards = Tensor({1, 1}, std::vector<double>{reward});
  b.next_states = Tensor::matrix(1, 2);
  b.dones = Tensor({1, 1}, std::vector<double>{done ? 1.0 : 0.0});
  b.next_actions = Tensor::matrix(1, 1);
  b.indices = {0};
  return b;
}

// Ensemble whose members output constant values through the last bias.
QEnsemble constant_ensemble(const std::vector<double>& outputs) {
  std::vector<Mlp> members;
  for (double q : outputs) {
    Mlp m = Mlp::zeros({3, 4, 1});
    m.bias(1)[0] = q;
    members.push_back(std::move(m));
  }
  return QEnsemble(std::move(members), 2);
}

}  // namespace

TEST_CASE("combine: weighted and min examples are exact") {
  CHECK(combine(row_values({1.0, 3.0}), TargetCombiner::weighted(0.75))[0] == 1.5);
  CHECK(combine(row_values({1.0, 3.0}), TargetCombiner::min())[0] == 1.0);
  CHECK(combine(row_values({-2.0, 5.0, 0.5, 4.0}), TargetCombiner::weighted(0.75))[0] == 0.75 * -2.0 + 0.25 * 5.0);
  CHECK(combine(row_values({7.25}), TargetCombiner::min())[0] == 7.25);
  CHECK(combine(row_values({7.25}), TargetCombiner::weighted())[0] == 7.25);
  CHECK_THROWS_AS(combine(row_values({1.0}), TargetCombiner::weighted(1.5)), ConfigError);
}

TEST_CASE("combine: lies between min and max; lambda=1 equals min") {
  Rng rng(1);
  const Tensor v = rng.normal_matrix(500, 5);
  const Tensor w = combine(v, TargetCombiner::weighted(rng.uniform()));
  const Tensor m = combine(v, TargetCombiner::min());
  const Tensor l1 = combine(v, TargetCombiner::weighted(1.0));
  for (std::size_t i = 0; i < v.rows(); ++i) {
    const auto row = v.row(i);
    const double lo = *std::min_element(row.begin(), row.end()), hi = *std::max_element(row.begin(), row.end());
    CHECK(w[i] >= lo);
    CHECK(w[i] <= hi);
    CHECK(m[i] == lo);
    CHECK(l1[i] == lo);
  }
}

TEST_CASE("td_target: terminal rows return the reward; arithmetic example") {
  const QEnsemble ens = constant_ensemble({5.0, 5.0});
  const Tensor pen = Tensor({1}, std::vector<double>{2.0});
  CHECK(td_target(ens, TargetCombiner::min(), one_row_batch(0.0, false), Tensor::matrix(1, 1), pen, 1.0, 0.99)[0] ==
        doctest::Approx(2.97).epsilon(1e-15));
  CHECK(td_target(ens, TargetCombiner::min(), one_row_batch(-3.5, true), Tensor::matrix(1, 1), pen, 7.0, 0.99)[0] ==
        -3.5);
  const QEnsemble mixed = constant_ensemble({1.0, 3.0});
  CHECK(td_target(mixed, TargetCombiner::weighted(), one_row_batch(1.0, false), Tensor::matrix(1, 1),
                  Tensor({1}, std::vector<double>{0.0}), 0.0, 0.5)[0] == 1.75);
}

TEST_CASE("td_target: all-zero networks with r=0 give 0 regardless of combiner") {
  std::vector<Mlp> zeros(3, Mlp::zeros({3, 8, 1}));
  const QEnsemble ens(zeros, 2);
  Rng rng(2);
  TransitionBatch b;
  b.states = rng.normal_matrix(16, 2);
  b.actions = rng.normal_matrix(16, 1);
  b.rewards = Tensor::matrix(16, 1);
  b.next_states = rng.normal_matrix(16, 2);
  b.dones = Tensor::matrix(16, 1);
  b.next_actions = rng.normal_matrix(16, 1);
  b.indices.assign(16, 0);
  for (const TargetCombiner c : {TargetCombiner::min(), TargetCombiner::weighted()}) {
    const Tensor y = td_target(ens, c, b, b.next_actions, Tensor::matrix(16, 1), 0.0, 0.99);
    for (std::size_t i = 0; i < 16; ++i) CHECK(y[i] == 0.0);
  }
}

TEST_CASE("ensemble: targets start as exact copies; forward matches a plain-loop oracle") {
  Rng rng(3);
  const QEnsemble ens(4, 2, 3, {32, 32}, rng);
  CHECK(ens.k() == 3);
  CHECK(ens.action_dim() == 2);
  for (std::size_t j = 0; j < 3; ++j) CHECK(ens.member(j) == ens.target(j));
  CHECK(!(ens.member(0) == ens.member(1)));

  const Tensor s = rng.normal_matrix(10, 4), a = rng.normal_matrix(10, 2);
  const Tensor q = ens.q_values(s, a);
  Tensor sa = Tensor::matrix(10, 6);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t c = 0; c < 6; ++c) sa.at(i, c) = c < 4 ? s.at(i, c) : a.at(i, c - 4);
  for (std::size_t j = 0; j < 3; ++j) {
    const Tensor ref = checks::reference_forward(ens.member(j), sa);
    for (std::size_t i = 0; i < 10; ++i) CHECK(std::abs(q.at(i, j) - ref[i]) <= 1e-12);
  }

  Tape tape;
  const Var taped = ens.q_values(tape, tape.constant_ref(s), tape.constant_ref(a), false);
  const Var mn = ens.min_q(tape, tape.constant_ref(s), tape.constant_ref(a), false);
  for (std::size_t i = 0; i < 10; ++i) {
    double lo = q.at(i, 0);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(std::abs(taped.value().at(i, j) - q.at(i, j)) <= 1e-12);
      lo = std::min(lo, q.at(i, j));
    }
    CHECK(std::abs(mn.value()[i] - lo) <= 1e-12);
  }
}

TEST_CASE("ensemble: soft update moves targets by tau toward the source") {
  Rng rng(4);
  QEnsemble ens(2, 1, 2, {8}, rng, 0.1);
  const std::vector<double> before = ens.target(0).flat();
  for (double& w : ens.member(0).weight(0).storage()) w += 1.0;
  const std::vector<double> src = ens.member(0).flat();
  ens.soft_update_targets();
  const std::vector<double> after = ens.target(0).flat();
  for (std::size_t p = 0; p < after.size(); ++p) {
    CHECK(after[p] == doctest::Approx(0.1 * src[p] + 0.9 * before[p]).epsilon(1e-14));
  }
  // Unchanged members stay put up to rounding of tau * x + (1 - tau) * x.
  const std::vector<double> t1 = ens.target(1).flat(), s1 = ens.member(1).flat();
  for (std::size_t p = 0; p < t1.size(); ++p) CHECK(t1[p] == doctest::Approx(s1[p]).epsilon(1e-15));
}

TEST_CASE("ensemble: checkpoint round trip and rejection of foreign files") {
  const auto dir = std::filesystem::temp_directory_path() / ("brac_critic_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  Rng rng(5);
  QEnsemble ens(3, 2, 2, {16, 16}, rng);
  for (double& w : ens.member(1).bias(0).storage()) w = 0.25;
  ens.save(dir / "q.bin");
  CHECK(QEnsemble::load(dir / "q.bin") == ens);
  {
    std::ofstream f(dir / "junk.bin", std::ios::binary);
    f << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(QEnsemble::load(dir / "junk.bin"), FormatError);
  CHECK_THROWS_AS(QEnsemble::load(dir / "missing.bin"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("ensemble: invalid construction") {
  Rng rng(6);
  CHECK_THROWS_AS(QEnsemble(2, 1, 0, {8}, rng), ConfigError);
  CHECK_THROWS_AS(QEnsemble(2, 1, 2, {8}, rng, 0.0), ConfigError);
  CHECK_THROWS_AS(QEnsemble(std::vector<Mlp>{Mlp::zeros({3, 4, 2})}, 2), ConfigError);
}
