#include <doctest.h>

#include <cmath>
#include <functional>

#include "ma2ml/error.hpp"
#include "ma2ml/oracle.hpp"
#include "ma2ml/trainer.hpp"
#include "reference.hpp"

using namespace ma2ml;

namespace {

class FunctionOracle final : public RewardOracle {
 public:
  explicit FunctionOracle(std::function<double(const JointAction&)> f) : f_(std::move(f)) {}
  OracleResult evaluate(const JointAction& a) const override {
    OracleResult r;
    r.accuracy = f_(a);
    return r;
  }
  std::string describe() const override { return "function"; }

 private:
  std::function<double(const JointAction&)> f_;
};

class FailingOracle final : public RewardOracle {
 public:
  OracleResult evaluate(const JointAction&) const override { return OracleResult::failure("down"); }
  std::string describe() const override { return "failing"; }
};

JointSpace grid(std::vector<std::size_t> cards) {
  std::vector<AgentSpace> agents;
  for (std::size_t i = 0; i < cards.size(); ++i) agents.push_back({"agent" + std::to_string(i), {{"c", cards[i], {}}}});
  return JointSpace(agents);
}

TabularQ exact_q(const JointSpace& s, const std::function<double(const JointAction&)>& f) {
  TabularQ q(s);
  std::vector<Experience> all;
  for (const auto& a : ref::all_actions(s)) all.push_back({a, f(a), 0});
  q.fit(all);
  return q;
}

PolicyParams random_params(const JointSpace& s, Rng& rng) {
  PolicyParams p = init_uniform(s);
  for (auto& a : p.logits)
    for (auto& d : a)
      for (double& x : d) x = rng.normal();
  return p;
}

}  // namespace

TEST_CASE("hyper-parameter defaults and validation") {
  const Hyperparams h;
  CHECK(h.lambda == 0.2);
  CHECK(h.policy_lr == 0.0004);
  CHECK(h.critic_lr == 0.005);
  CHECK(h.tau == 0.004);
  CHECK(h.batch_size == 24);
  CHECK(h.max_iter * h.batch_size == 1992);
  CHECK(Hyperparams::from_json(h.to_json()).to_json() == h.to_json());
  CHECK_THROWS_AS(Hyperparams::from_json({{"learning_rate", 0.1}}), ConfigError);
  Hyperparams bad;
  bad.tau = 0.0;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("tau"), ValidationError);
  bad = Hyperparams{};
  bad.lambda = -1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK(BaselineMode::parse("exact") == BaselineMode::exact_mode());
  CHECK(BaselineMode::parse(16) == BaselineMode::monte_carlo(16));
  CHECK_THROWS(BaselineMode::parse(0));
  CHECK(parse_variant("onpolicy") == Variant::OnPolicy);
  CHECK_THROWS(parse_variant("coma"));
}

TEST_CASE("counterfactual baseline") {
  const auto s = grid({2, 3});
  Rng rng(1);
  const auto f = [](const JointAction& a) { return a.choices[0][0] == 0 ? 0.2 : 0.6; };
  const auto q = exact_q(s, f);
  const auto uni = init_uniform(s);
  const JointAction a{{{1}, {2}}};
  CHECK(counterfactual_baseline(q, s, uni, uni, a, 0, 0.0, BaselineMode::exact_mode(), rng) ==
        doctest::Approx(0.4));
  PolicyParams det = uni;
  det.logits[0][0] = {0.0, 60.0};
  CHECK(counterfactual_baseline(q, s, det, det, a, 0, 0.0, BaselineMode::exact_mode(), rng) ==
        doctest::Approx(0.6));
  // one Monte Carlo draw from a point mass is exact too
  CHECK(counterfactual_baseline(q, s, det, det, a, 0, 0.0, BaselineMode::monte_carlo(1), rng) ==
        doctest::Approx(0.6));
}

TEST_CASE("advantage identities") {
  const auto s = grid({3, 4});
  Rng rng(2);
  std::vector<double> table(12);
  for (double& r : table) r = rng.uniform();
  const auto f = [&](const JointAction& a) { return table[s.joint_flatten(a)]; };
  const auto q = exact_q(s, f);
  const auto p = random_params(s, rng);
  const auto target = random_params(s, rng);
  const auto exact = BaselineMode::exact_mode();

  SUBCASE("pi = rho: Q minus the mean over the agent's actions") {
    const JointAction a{{{2}, {1}}};
    double mean = 0.0;
    for (std::size_t k = 0; k < 3; ++k) mean += ref::agent_prob(p, 0, {k}) * f(JointAction{{{k}, {1}}});
    CHECK(advantage(q, s, p, p, a, 0, 0.7, exact, rng) == doctest::Approx(f(a) - mean).epsilon(1e-12));
  }

  SUBCASE("expected advantage is zero at lambda = 0") {
    for (std::size_t other = 0; other < 4; ++other) {
      double e = 0.0;
      for (std::size_t k = 0; k < 3; ++k)
        e += ref::agent_prob(p, 0, {k}) * advantage(q, s, p, target, JointAction{{{k}, {other}}}, 0, 0.0, exact, rng);
      CHECK(std::abs(e) < 1e-12);
    }
  }

  SUBCASE("constant Q gives zero advantage and no update") {
    const auto c = exact_q(s, [](const JointAction&) { return 0.5; });
    for (const auto& a : ref::all_actions(s))
      for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(advantage(c, s, p, target, a, i, 0.0, exact, rng)) < 1e-15);
    std::vector<Experience> mb;
    for (const auto& a : ref::all_actions(s)) mb.push_back({a, 0.5, 1});
    CHECK(policy_update(c, s, p, target, mb, 0.0, 0.1, exact, rng) == p);
  }
}

TEST_CASE("policy gradient is unbiased with an exact critic") {
  const auto s = grid({2, 2});
  Rng rng(3);
  std::vector<double> table{0.1, 0.9, 0.4, 0.3};
  const auto f = [&](const JointAction& a) { return table[s.joint_flatten(a)]; };
  const auto q = exact_q(s, f);
  const auto p = random_params(s, rng);
  const auto truth = ref::flatten(ref::analytic_grad_j(s, p, f));
  std::vector<double> ma2ml(truth.size(), 0.0), lite(truth.size(), 0.0);
  double j = 0.0;
  for (const auto& a : ref::all_actions(s)) j += ref::prob(p, a) * f(a);
  for (const auto& a : ref::all_actions(s)) {
    const Experience e{a, f(a), 0};
    const auto g = ref::flatten(policy_gradient(q, s, p, p, std::span(&e, 1), 0.0, BaselineMode::exact_mode(), rng).values);
    const auto l = ref::flatten(lite_gradient(p, std::span(&e, 1), j).values);
    for (std::size_t k = 0; k < g.size(); ++k) {
      ma2ml[k] += ref::prob(p, a) * g[k];
      lite[k] += ref::prob(p, a) * l[k];
    }
  }
  CHECK(ref::relative_error(ma2ml, truth) < 1e-10);
  CHECK(ref::relative_error(lite, truth) < 1e-10);
}

TEST_CASE("lite update") {
  const auto s = grid({3});
  const auto p = init_uniform(s);
  std::vector<Experience> batch{{JointAction{{{0}}}, 0.5, 1}, {JointAction{{{2}}}, 0.5, 1}};
  CHECK(ref::norm(ref::flatten(lite_gradient(p, batch, 0.5).values)) == 0.0);

  EmaBaseline ema;
  ema.value = 1.0;
  ema.initialized = true;
  ema.observe(1.0);
  ema.observe(0.0);
  CHECK(ema.value == doctest::Approx(0.95));

  EmaBaseline fresh;
  const auto after = lite_update(p, batch, fresh, 0.1);
  CHECK(after == p);  // baseline starts at the batch mean
  CHECK(fresh.initialized);
  CHECK(fresh.value == 0.5);
}

TEST_CASE("two-action bandit converges to the better arm") {
  const auto s = grid({2});
  const auto f = [](const JointAction& a) { return a.choices[0][0] == 1 ? 1.0 : 0.0; };
  const auto q = exact_q(s, f);
  PolicyParams p = init_uniform(s);
  Rng rng(4);
  double prev = 0.5;
  int step = 0;
  for (; step < 5000 && prev <= 0.99; ++step) {
    std::vector<Experience> mb;
    for (int k = 0; k < 16; ++k) {
      const auto a = sample(p, rng).action;
      mb.push_back({a, f(a), 0});
    }
    p = policy_update(q, s, p, p, mb, 0.0, 0.1, BaselineMode::exact_mode(), rng);
    const double now = agent_probabilities(p, 0)[1];
    CHECK(now >= prev - 1e-12);  // every sample moves toward arm 1 or not at all
    prev = now;
  }
  CHECK(prev > 0.99);
}

TEST_CASE("trainer finds the optimum of a 2x2 problem") {
  const auto s = grid({2, 2});
  std::vector<double> table{0.2, 0.5, 0.4, 0.9};
  auto oracle = std::make_shared<FunctionOracle>([&](const JointAction& a) { return table[s.joint_flatten(a)]; });
  TrainerOptions o;
  o.hyper.lambda = 0.0;
  o.hyper.baseline = BaselineMode::exact_mode();
  o.hyper.critic = CriticKind::Tabular;
  o.hyper.max_iter = 200;
  Trainer t(s, oracle, o);
  t.run();
  CHECK(t.greedy_action() == JointAction{{{1}, {1}}});
  CHECK(t.record().pipelines.size() == 200 * 24);
  CHECK(t.record().topk.front().reward == 0.9);
}

TEST_CASE("trainer bookkeeping") {
  const auto s = grid({4, 3, 5});
  auto oracle = std::shared_ptr<const RewardOracle>(coupled_oracle(s, 8, 0.7));

  SUBCASE("max_iter = 0 leaves the initial policy") {
    TrainerOptions o;
    o.hyper.max_iter = 0;
    const auto rec = run_search(s, oracle, o);
    CHECK(rec.pipelines.empty());
    Trainer t(s, oracle, o);
    t.run();
    CHECK(t.policy() == init_uniform(s));
  }

  SUBCASE("runs are deterministic and resume exactly") {
    TrainerOptions o;
    o.hyper.max_iter = 12;
    o.hyper.seed = 5;
    Trainer straight(s, oracle, o);
    straight.run();
    Trainer first(s, oracle, o);
    first.run(5);
    const auto cp = nlohmann::json::parse(first.checkpoint().dump());
    Trainer second(s, oracle, o);
    second.restore(cp);
    second.run();
    CHECK(second.record() == straight.record());
    CHECK(second.policy() == straight.policy());
    CHECK(run_search(s, oracle, o) == run_search(s, oracle, o));

    TrainerOptions other = o;
    other.hyper.lambda = 0.3;
    Trainer mismatched(s, oracle, other);
    CHECK_THROWS(mismatched.restore(cp));
  }

  SUBCASE("on-policy updates only read the newest batch") {
    TrainerOptions o;
    o.variant = Variant::OnPolicy;
    o.hyper.max_iter = 6;
    Trainer t(s, oracle, o);
    for (int k = 1; k <= 6; ++k) {
      t.run_iteration();
      CHECK(t.buffer().audit().min_iteration == static_cast<std::uint64_t>(k));
      CHECK(t.buffer().audit().draws == o.hyper.minibatch_size);
    }
    TrainerOptions off = o;
    off.variant = Variant::Ma2ml;
    Trainer u(s, oracle, off);
    u.run();
    CHECK(u.buffer().audit().min_iteration < 6);
  }

  SUBCASE("lite has no critic") {
    TrainerOptions o;
    o.variant = Variant::Lite;
    o.hyper.max_iter = 3;
    Trainer t(s, oracle, o);
    t.run();
    CHECK(t.critic() == nullptr);
    CHECK(t.ema().initialized);
    CHECK(std::isnan(t.record().iterations.back().critic_loss));
  }

  SUBCASE("summary bookkeeping") {
    TrainerOptions o;
    o.hyper.max_iter = 4;
    o.hyper.parallelism = 4;
    Trainer t(s, oracle, o);
    t.run();
    const auto& it = t.record().iterations;
    REQUIRE(it.size() == 4);
    CHECK(it[0].iteration == 1);
    CHECK(it[3].evaluated == 24);
    CHECK(it[3].entropy.size() == 3);
    CHECK(t.record().topk.size() == 20);
    const auto best = t.record().best_so_far();
    CHECK(best.size() == 96);
    CHECK(evaluations_to_reach(t.record(), best.back(), 96) <= 96);
    CHECK(evaluations_to_reach(t.record(), 2.0, 96) == 97);
    CHECK(record_from_json(record_to_json(t.record())) == t.record());
  }
}

TEST_CASE("failed evaluations are skipped and persistent failure aborts") {
  const auto s = grid({3, 3});
  TrainerOptions o;
  o.hyper.max_iter = 10;
  Trainer t(s, std::make_shared<FailingOracle>(), o);
  t.run_iteration();
  CHECK(t.record().iterations[0].evaluated == 0);
  CHECK(t.record().iterations[0].failed == 24);
  CHECK(t.buffer().empty());
  CHECK(t.record().topk.empty());
  CHECK(t.policy() == init_uniform(s));
  t.run_iteration();
  CHECK_THROWS_AS(t.run_iteration(), SearchAborted);
}
