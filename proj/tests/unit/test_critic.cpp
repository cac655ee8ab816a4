#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>

#include "ma2ml/critic.hpp"
#include "ma2ml/error.hpp"
#include "ma2ml/optimizer.hpp"
#include "reference.hpp"

using namespace ma2ml;

namespace {

JointSpace small_space() {
  return JointSpace({{"a", {{"x", 3, {}}}}, {"b", {{"y", 2, {}}, {"z", 2, {}}}}});
}

Experience exp_at(std::size_t x, double r, std::uint64_t it = 0) {
  return {JointAction{{{x}, {0, 1}}}, r, it};
}

}  // namespace

TEST_CASE("replay buffer is FIFO with optional capacity") {
  ReplayBuffer b(3);
  CHECK(b.size() == 0);
  for (int k = 0; k < 4; ++k) b.push(exp_at(k % 3, k));
  REQUIRE(b.size() == 3);
  CHECK(b[0].reward == 1.0);
  CHECK(b[2].reward == 3.0);
  Rng rng(1);
  CHECK_THROWS(ReplayBuffer().sample(1, rng));
}

TEST_CASE("replay buffer sampling") {
  Rng rng(2);
  ReplayBuffer single;
  single.push(exp_at(1, 0.5));
  for (const auto& e : single.sample(5, rng)) CHECK(e == single[0]);

  ReplayBuffer b;
  for (int k = 0; k < 8; ++k) b.push(exp_at(k % 3, k, k / 2));
  const int n = 100000;
  std::vector<int> counts(8, 0);
  for (const auto& e : b.sample(n, rng)) ++counts[static_cast<int>(e.reward)];
  for (int c : counts) CHECK(std::abs(c - n / 8.0) < 3 * std::sqrt(n * (1.0 / 8) * (7.0 / 8)));

  Rng r1(5), r2(5);
  CHECK(b.sample(20, r1) == b.sample(20, r2));

  b.reset_audit();
  for (const auto& e : b.sample_since(50, 3, rng)) CHECK(e.iteration >= 3);
  CHECK(b.audit().draws == 50);
  CHECK(b.audit().min_iteration == 3);
  CHECK_THROWS(b.sample_since(1, 9, rng));
}

TEST_CASE("buffer checkpoint round-trip") {
  ReplayBuffer b(5);
  for (int k = 0; k < 4; ++k) b.push(exp_at(k % 3, 0.1 * k, k));
  const auto back = ReplayBuffer::from_json(b.to_json(), small_space());
  CHECK(back.entries() == b.entries());
  CHECK(back.capacity() == 5);
}

TEST_CASE("TabularQ running means") {
  TabularQ q(small_space());
  const auto a = exp_at(2, 0.3).action;
  CHECK_THROWS_AS(q.q_eval(a), UnknownCellError);
  CHECK(q.predict(a) == 0.0);
  q.fit(std::vector<Experience>{exp_at(2, 0.3)});
  CHECK(q.q_eval(a) == 0.3);
  q.fit(std::vector<Experience>{exp_at(2, 0.5)});
  CHECK(q.q_eval(a) == doctest::Approx(0.4));
  CHECK(q.count(a) == 2);
  q.fit(std::vector<Experience>{exp_at(0, 1.0)});
  // unseen cells fall back to the mean of every fitted reward
  CHECK(q.predict(exp_at(1, 0).action) == doctest::Approx(0.6));
  CHECK(q.lookup(exp_at(1, 0).action) == std::nullopt);
}

TEST_CASE("TabularQ equals per-cell regression by enumeration") {
  const auto s = small_space();
  Rng rng(3);
  const auto all = ref::all_actions(s);
  std::vector<Experience> data;
  for (int k = 0; k < 200; ++k) data.push_back({all[rng.uniform_index(all.size())], rng.uniform(), 0});
  TabularQ q(s);
  for (std::size_t k = 0; k < data.size(); k += 7)
    q.fit(std::span(data).subspan(k, std::min<std::size_t>(7, data.size() - k)));
  std::map<JointAction, std::pair<double, int>> sums;
  for (const auto& e : data) {
    sums[e.action].first += e.reward;
    ++sums[e.action].second;
  }
  for (const auto& [a, sc] : sums) CHECK(q.q_eval(a) == doctest::Approx(sc.first / sc.second).epsilon(1e-12));
  TabularQ back(s);
  back.load_json(q.to_json());
  for (const auto& a : all) CHECK(back.predict(a) == q.predict(a));
}

TEST_CASE("NeuralQ") {
  const auto s = small_space();
  const auto zero = NeuralQ::zeros(s);
  for (const auto& a : ref::all_actions(s)) CHECK(zero.predict(a) == 0.0);

  Rng rng(4);
  NeuralQ q(s, 16, rng, OptimizerKind::Adam);
  const auto all = ref::all_actions(s);
  std::vector<Experience> batch;
  for (int k = 0; k < 50; ++k) batch.push_back({all[rng.uniform_index(all.size())], rng.uniform(), 0});

  SUBCASE("analytic gradient matches finite differences") {
    const std::vector<double> theta(q.parameters().begin(), q.parameters().end());
    NeuralQ probe = q;
    const auto fd = ref::central_difference(
        [&](const std::vector<double>& x) {
          probe.set_parameters(x);
          return probe.loss(batch);
        },
        theta);
    CHECK(ref::relative_error(q.gradient(batch), fd) < 1e-4);
  }

  SUBCASE("loss decreases on a frozen batch") {
    const double before = q.loss(batch);
    for (int k = 0; k < 200; ++k) q.train(batch, 0.005);
    CHECK(q.loss(batch) < before);
  }

  SUBCASE("alternatives agree with predict") {
    std::vector<std::vector<std::size_t>> alts{{0}, {1}, {2}};
    const auto base = all[5];
    const auto v = q.predict_alternatives(base, 0, alts);
    for (std::size_t k = 0; k < 3; ++k) {
      JointAction a = base;
      a.choices[0] = alts[k];
      CHECK(v[k] == doctest::Approx(q.predict(a)).epsilon(1e-12));
    }
  }

  SUBCASE("checkpoint round-trip") {
    q.train(batch, 0.005);
    NeuralQ back = NeuralQ::zeros(s, 16);
    back.load_json(q.to_json());
    for (const auto& a : all) CHECK(back.predict(a) == q.predict(a));
  }

  SUBCASE("non-finite loss is reported") {
    batch[0].reward = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(q.train(batch, 0.005), NumericError);
  }
}

TEST_CASE("optimizers") {
  ParamOptimizer sgd(OptimizerKind::Sgd);
  std::vector<double> x{1.0, -2.0};
  sgd.descend(x, std::vector<double>{0.5, -1.0}, 0.1);
  CHECK(x[0] == doctest::Approx(0.95));
  CHECK(x[1] == doctest::Approx(-1.9));
  // Adam's first bias-corrected step has magnitude lr in every coordinate.
  ParamOptimizer adam(OptimizerKind::Adam);
  std::vector<double> y{0.0, 0.0};
  adam.descend(y, std::vector<double>{3.0, -1e-3}, 0.01);
  CHECK(y[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(y[1] == doctest::Approx(0.01).epsilon(1e-4));
  CHECK(parse_optimizer("adam") == OptimizerKind::Adam);
  CHECK_THROWS(parse_optimizer("rmsprop"));
}
