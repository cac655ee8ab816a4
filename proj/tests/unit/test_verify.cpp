#include <doctest.h>

#include <cmath>

#include "ma2ml/commands.hpp"
#include "ma2ml/error.hpp"
#include "ma2ml/verify.hpp"

using namespace ma2ml;
using namespace ma2ml::verify;

TEST_CASE("j_init") {
  const auto t = RewardTable::random({3, 4}, 1);
  TabularJointPolicy det{{{0, 1, 0}, {0, 0, 0, 1}}};
  CHECK(j_init(det, t) == t.at({1, 3}));
  double mean = 0.0;
  for (double v : t.values()) mean += v;
  CHECK(j_init(TabularJointPolicy::uniform(t.shape()), t) == doctest::Approx(mean / 12));

  TabularJointPolicy p{{{0.2, 0.5, 0.3}, {0.1, 0.2, 0.3, 0.4}}};
  Rng rng(2);
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  for (int k = 0; k < n; ++k) {
    std::vector<std::size_t> a(2);
    for (std::size_t i = 0; i < 2; ++i) {
      double u = rng.uniform(), c = 0.0;
      a[i] = p.agents[i].size() - 1;
      for (std::size_t j = 0; j < p.agents[i].size(); ++j)
        if (u < (c += p.agents[i][j])) {
          a[i] = j;
          break;
        }
    }
    sum += t.at(a);
    sq += t.at(a) * t.at(a);
  }
  const double m = sum / n, sd = std::sqrt((sq / n - m * m) / n);
  CHECK(std::abs(m - j_init(p, t)) < 4 * sd);
}

TEST_CASE("j_reg") {
  const RewardTable t({2}, {1.0, 0.0});
  TabularJointPolicy p{{{0.75, 0.25}}}, u{{{0.5, 0.5}}};
  CHECK(j_reg(p, p, t, 0.3) == j_init(p, t));
  CHECK(j_reg(p, u, t, 0.0) == j_init(p, t));
  const double kl = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  CHECK(j_reg(p, u, t, 0.5) == doctest::Approx(0.75 - 0.5 * kl));
}

TEST_CASE("tilt_best_response") {
  const auto r = tilt_best_response({0.5, 0.5}, {1.0, 0.0}, 1.0);
  CHECK(r[0] == doctest::Approx(0.731059).epsilon(1e-6));
  CHECK(r[1] == doctest::Approx(0.268941).epsilon(1e-6));
  const auto hot = tilt_best_response({0.2, 0.3, 0.5}, {1.0, 0.4, 0.0}, 1e6);
  CHECK(std::abs(hot[0] - 0.2) < 1e-5);
  CHECK(std::abs(hot[2] - 0.5) < 1e-5);
  CHECK_THROWS_AS(tilt_best_response({0.5, 0.5}, {1.0, 0.0}, 0.0), ValidationError);

  Rng rng(3);
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t n = 2 + rng.uniform_index(6);
    std::vector<double> rho(n), q(n);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      z += (rho[k] = 0.05 + rng.uniform());
      q[k] = rng.uniform();
    }
    for (double& x : rho) x /= z;
    const double lambda = 0.05 + rng.uniform();
    auto objective = [&](const std::vector<double>& p) {
      double v = 0.0;
      for (std::size_t k = 0; k < n; ++k) v += p[k] * q[k] - (p[k] > 0 ? lambda * p[k] * std::log(p[k] / rho[k]) : 0.0);
      return v;
    };
    const auto best = tilt_best_response(rho, q, lambda);
    const double top = objective(best);
    for (int probe = 0; probe < 1000; ++probe) {
      std::vector<double> p(best);
      double s = 0.0;
      for (double& x : p) s += (x = std::max(0.0, x + 0.05 * rng.normal()));
      if (s <= 0.0) continue;
      for (double& x : p) x /= s;
      CHECK(objective(p) <= top + 1e-12);
    }
  }
}

TEST_CASE("divergence iteration step") {
  SUBCASE("a single agent reaches the exact regularized maximum in one sweep") {
    const auto t = RewardTable::random({7}, 4);
    const auto start = TabularJointPolicy::uniform(t.shape());
    const auto next = divergence_iteration_step(start, t, 0.3, 1);
    const auto expected = tilt_best_response(start.agents[0], t.values(), 0.3);
    for (std::size_t k = 0; k < 7; ++k) CHECK(next.agents[0][k] == doctest::Approx(expected[k]).epsilon(1e-12));
  }

  SUBCASE("a constant table leaves the policy unchanged") {
    const RewardTable t({3, 2}, std::vector<double>(6, 0.4));
    TabularJointPolicy p{{{0.2, 0.3, 0.5}, {0.6, 0.4}}};
    const auto next = divergence_iteration_step(p, t, 0.2, 3);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t k = 0; k < p.agents[i].size(); ++k)
        CHECK(next.agents[i][k] == doctest::Approx(p.agents[i][k]).epsilon(1e-12));
  }

  SUBCASE("J_init never decreases") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto t = RewardTable::random({6, 6, 6}, seed);
      auto p = TabularJointPolicy::uniform(t.shape());
      double prev = j_init(p, t);
      for (int k = 0; k < 50; ++k) {
        p = divergence_iteration_step(p, t, 0.2, 3);
        const double now = j_init(p, t);
        CHECK(now >= prev - 1e-12);
        prev = now;
      }
    }
  }
}

TEST_CASE("brute_force_best") {
  const RewardTable t({2, 3}, {0.1, 0.7, 0.2, 0.3, 0.4, 0.5});
  CHECK(brute_force_best(t).action == std::vector<std::size_t>{0, 1});
  CHECK(brute_force_best(t).value == 0.7);
  const RewardTable flat({2, 2}, {0.3, 0.3, 0.3, 0.3});
  CHECK(brute_force_best(flat).action == std::vector<std::size_t>{0, 0});
  const auto r = RewardTable::random({5, 5, 5}, 9);
  Rng rng(1);
  for (int k = 0; k < 200; ++k) CHECK(r.at({rng.uniform_index(5), rng.uniform_index(5), rng.uniform_index(5)}) <= brute_force_best(r).value);
}

TEST_CASE("certification") {
  SUBCASE("monotone at lambda = 0.2") {
    CertifyConfig c;
    c.seeds = 10;
    const auto s = certify_random_tables(c);
    CHECK(s.monotone == 10);
    for (const auto& r : s.results) {
      CHECK(r.report.rows.size() == 201);
      CHECK(r.report.rows[0].k == 0);
    }
  }

  SUBCASE("lambda = 10^6 stays near uniform") {
    const auto t = RewardTable::random({6, 6, 6}, 2);
    CertifyOptions o;
    o.lambda = 1e6;
    o.iterations = 20;
    const auto r = certify_monotone(t, o);
    CHECK(r.monotone);
    double mean = 0.0;
    for (double v : t.values()) mean += v;
    CHECK(r.final_j == doctest::Approx(mean / t.size()).epsilon(1e-3));
  }

  CertifyConfig zero;
  zero.lambda = 0.0;
  CHECK_THROWS_AS(certify_random_tables(zero), ValidationError);
  CHECK_THROWS(RewardTable({2, 2}, {0.1, 0.2, 0.3}));
  CHECK_THROWS(RewardTable({2}, {0.1, NAN}));
}
