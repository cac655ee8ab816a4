// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "ma2ml/commands.hpp"
#include "ma2ml/config.hpp"
#include "ma2ml/critic.hpp"
#include "ma2ml/oracle.hpp"
#include "ma2ml/policy.hpp"
#include "ma2ml/trainer.hpp"
#include "ma2ml/verify.hpp"
#include "reference.hpp"

using namespace ma2ml;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* title, double budget_seconds, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (secs > budget_seconds) {
    o.pass = false;
    o.detail += "; over time budget";
  }
  if (!o.pass) ++failures;
  std::printf("%s criterion %d: %s | %s | %.2fs (budget %.0fs)\n", o.pass ? "PASS" : "FAIL", id, title,
              o.detail.c_str(), secs, budget_seconds);
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

JointSpace single_dim_space(const std::vector<std::size_t>& cards) {
  std::vector<AgentSpace> agents;
  for (std::size_t i = 0; i < cards.size(); ++i)
    agents.push_back({"agent" + std::to_string(i), {{"choice", cards[i], {}}}});
  return JointSpace(agents);
}

PolicyParams random_policy(const JointSpace& space, Rng& rng, double scale) {
  PolicyParams p = init_uniform(space);
  for (auto& a : p.logits)
    for (auto& d : a)
      for (double& x : d) x = scale * rng.normal();
  return p;
}

// Tabular critic holding exactly one observation of R(A) per cell.
TabularQ exact_q(const JointSpace& space, const std::function<double(const JointAction&)>& reward) {
  TabularQ q(space);
  std::vector<Experience> all;
  for (const auto& a : ref::all_actions(space)) all.push_back({a, reward(a), 0});
  q.fit(all);
  return q;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome certification(double lambda, bool near_optimal) {
  CertifyConfig c;
  c.lambda = lambda;
  const CertifySummary s = certify_random_tables(c);
  const std::size_t n = s.results.size();
  if (near_optimal)
    return {s.near_optimal >= 45,
            fmt("near-optimal %zu/%zu (need >= 45), max normalized gap %.4g", s.near_optimal, n, s.max_normalized_gap)};
  return {s.monotone == n && s.converged == n,
          fmt("monotone %zu/%zu, converged %zu/%zu (need 50/50 each)", s.monotone, n, s.converged, n)};
}

Outcome gradient_correctness() {
  Rng rng(derive_seed(3, "acceptance"));
  double worst_policy = 0.0, worst_critic = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    std::vector<AgentSpace> agents;
    const std::size_t na = 1 + rng.uniform_index(3);
    for (std::size_t i = 0; i < na; ++i) {
      AgentSpace a{"a" + std::to_string(i), {}};
      const std::size_t nd = 1 + rng.uniform_index(3);
      for (std::size_t d = 0; d < nd; ++d) a.dimensions.push_back({"d" + std::to_string(d), 2 + rng.uniform_index(5), {}});
      agents.push_back(a);
    }
    const JointSpace space(agents);
    const PolicyParams p = random_policy(space, rng, 1.5);
    const JointAction action = sample(p, rng).action;
    const auto analytic = ref::flatten(grad_log_prob(p, action).values);
    const auto fd = ref::central_difference(
        [&](const std::vector<double>& x) {
          return log_prob(PolicyParams{ref::unflatten_like(p.logits, x)}, action);
        },
        ref::flatten(p.logits));
    worst_policy = std::max(worst_policy, ref::relative_error(analytic, fd));

    NeuralQ q(space, 8, rng);
    std::vector<Experience> batch;
    for (int k = 0; k < 10; ++k) batch.push_back({sample(p, rng).action, rng.uniform(), 0});
    const std::vector<double> theta(q.parameters().begin(), q.parameters().end());
    const auto g = q.gradient(batch);
    NeuralQ probe = q;
    const auto fdq = ref::central_difference(
        [&](const std::vector<double>& x) {
          probe.set_parameters(x);
          return probe.loss(batch);
        },
        theta);
    worst_critic = std::max(worst_critic, ref::relative_error(g, fdq));
  }
  return {worst_policy < 1e-4 && worst_critic < 1e-4,
          fmt("worst relative error: grad_log_prob %.3g, NeuralQ %.3g (need < 1e-4)", worst_policy, worst_critic)};
}

Outcome unbiasedness() {
  Rng rng(derive_seed(4, "acceptance"));
  const JointSpace space = single_dim_space({4, 4});
  const auto actions = ref::all_actions(space);
  double worst_bias = 0.0, worst_shift = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    std::vector<double> table(16);
    for (double& r : table) r = rng.uniform();
    auto reward = [&](const JointAction& a) { return table[a.choices[0][0] * 4 + a.choices[1][0]]; };
    const TabularQ q = exact_q(space, reward);
    const PolicyParams p = random_policy(space, rng, 1.0);
    const PolicyParams target = random_policy(space, rng, 1.0);
    std::vector<double> with(ref::flatten(p.logits).size(), 0.0), without(with.size(), 0.0);
    for (const auto& a : actions) {
      const double w = ref::prob(p, a);
      const Experience e{a, reward(a), 0};
      const auto g = ref::flatten(
          policy_gradient(q, space, p, target, std::span(&e, 1), 0.0, BaselineMode::exact_mode(), rng).values);
      const auto score = ref::flatten(grad_log_prob(p, a).values);
      for (std::size_t k = 0; k < g.size(); ++k) {
        with[k] += w * g[k];
        without[k] += w * score[k] * q.predict(a);
      }
    }
    const auto truth = ref::flatten(ref::analytic_grad_j(space, p, reward));
    worst_bias = std::max(worst_bias, ref::relative_error(with, truth));
    worst_shift = std::max(worst_shift, ref::relative_error(with, without));
  }
  return {worst_bias < 1e-8 && worst_shift < 1e-10,
          fmt("20 instances: worst relative error vs analytic grad J %.3g (need < 1e-8), "
              "with vs without baseline %.3g (need < 1e-10)",
              worst_bias, worst_shift)};
}

// Total variance (trace of the covariance) of the per-sample gradient, exact.
double gradient_variance(const std::vector<std::vector<double>>& samples, const std::vector<double>& weights) {
  std::vector<double> mean(samples[0].size(), 0.0);
  double second = 0.0;
  for (std::size_t s = 0; s < samples.size(); ++s)
    for (std::size_t k = 0; k < mean.size(); ++k) {
      mean[k] += weights[s] * samples[s][k];
      second += weights[s] * samples[s][k] * samples[s][k];
    }
  double m2 = 0.0;
  for (double m : mean) m2 += m * m;
  return second - m2;
}

Outcome variance_reduction() {
  Rng rng(derive_seed(5, "acceptance"));
  const double lambda = 0.2;
  int wins = 0;
  double worst_ratio = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    std::vector<std::size_t> cards;
    const std::size_t na = 2 + rng.uniform_index(2);
    for (std::size_t i = 0; i < na; ++i) cards.push_back(3 + rng.uniform_index(3));
    const JointSpace space = single_dim_space(cards);
    const auto actions = ref::all_actions(space);
    std::vector<double> table(actions.size());
    for (double& r : table) r = rng.uniform();
    auto reward = [&](const JointAction& a) { return table[space.joint_flatten(a)]; };
    const TabularQ q = exact_q(space, reward);
    const PolicyParams p = random_policy(space, rng, 1.0);
    PolicyParams target = p;
    for (auto& a : target.logits)
      for (auto& d : a)
        for (double& x : d) x += 0.3 * rng.normal();
    std::vector<std::vector<double>> with, without;
    std::vector<double> weights;
    for (const auto& a : actions) {
      weights.push_back(ref::prob(p, a));
      const auto score = grad_log_prob(p, a).values;
      std::vector<double> gw, go;
      for (std::size_t i = 0; i < na; ++i) {
        const double adv = advantage(q, space, p, target, a, i, lambda, BaselineMode::exact_mode(), rng);
        const double raw = q.predict(a) - lambda * agent_log_ratio(p, target, i, a.choices[i]);
        for (double s : score[i][0]) {
          gw.push_back(s * adv);
          go.push_back(s * raw);
        }
      }
      with.push_back(gw);
      without.push_back(go);
    }
    const double vw = gradient_variance(with, weights);
    const double vo = gradient_variance(without, weights);
    if (vw <= vo) ++wins;
    worst_ratio = std::max(worst_ratio, vw / vo);
  }
  return {wins >= 95, fmt("baseline variance <= plain on %d/100 (need >= 95); worst ratio %.3f", wins, worst_ratio)};
}

Outcome ablation() {
  const RunConfig base = load_run_config(fs::path(MA2ML_SOURCE_DIR) / "configs/runs/ablation_coupled.json");
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 20; ++s) seeds.push_back(s);
  const CompareResult r = compare_variants(base, {Variant::Ma2ml, Variant::Lite, Variant::OnPolicy}, seeds, 0.95);
  const std::size_t a = r.summary[1].reference_topk_wins;
  const std::size_t b = r.summary[2].reference_evals_wins;
  return {a >= 14 && b >= 14,
          fmt("(a) top-20 >= Lite in %zu/20, (b) fewer evals to 95%% than ONPOLICY in %zu/20 (need >= 14 each); "
              "median evals ma2ml %.0f lite %.0f onpolicy %.0f, budget %zu",
              a, b, r.summary[0].median_evals_to_threshold, r.summary[1].median_evals_to_threshold,
              r.summary[2].median_evals_to_threshold, r.budget)};
}

Outcome multi_objective() {
  auto mo = [](double acc, double cost, double w) {
    OracleResult r;
    r.accuracy = acc;
    r.cost = cost;
    return multi_objective_reward(r, MultiObjectiveSpec{w, 600e6});
  };
  const double v1 = mo(0.8, 600e6, -0.07), v2 = mo(0.8, 1200e6, -0.07), v3 = mo(0.797, 596e6, -0.07);
  // Closed forms to 1e-6; the quoted five-decimal values must match after rounding.
  auto five = [](double v) { return std::round(v * 1e5) / 1e5; };
  const bool ok = std::abs(v1 - 0.8) < 1e-6 && std::abs(v2 - 0.8 * std::pow(2.0, -0.07)) < 1e-6 &&
                  std::abs(v3 - 0.797 * std::pow(596.0 / 600.0, -0.07)) < 1e-6 &&
                  std::abs(five(v2) - 0.76211) < 1e-12 && std::abs(five(v3) - 0.79737) < 1e-12;
  return {ok, fmt("%.8f %.8f %.8f (expected 0.8, 0.76211, 0.79737)", v1, v2, v3)};
}

Outcome mc_convergence() {
  Rng rng(derive_seed(8, "acceptance"));
  const double lambda = 0.2;
  const std::vector<std::size_t> ms{64, 256, 1024, 4096};
  const int instances = 20, reps = 200;
  std::vector<double> mse_sum(ms.size(), 0.0), expected_sum(ms.size(), 0.0), abs_sum(ms.size(), 0.0);
  for (int inst = 0; inst < instances; ++inst) {
    std::vector<std::size_t> cards;
    const std::size_t na = 2 + rng.uniform_index(2);
    for (std::size_t i = 0; i < na; ++i) cards.push_back(4 + rng.uniform_index(5));
    const JointSpace space = single_dim_space(cards);
    std::vector<double> table(*space.joint_action_count());
    for (double& r : table) r = rng.uniform();
    auto reward = [&](const JointAction& a) { return table[space.joint_flatten(a)]; };
    const TabularQ q = exact_q(space, reward);
    const PolicyParams p = random_policy(space, rng, 1.0);
    const PolicyParams target = random_policy(space, rng, 1.0);
    const JointAction action = sample(p, rng).action;
    const std::size_t agent = rng.uniform_index(na);
    // Variance of a single draw of Q(a, A_-i) - lambda * log(pi_i(a) / rho_i(a)), a ~ pi_i.
    double mean = 0.0, second = 0.0;
    for (std::size_t k = 0; k < cards[agent]; ++k) {
      JointAction alt = action;
      alt.choices[agent][0] = k;
      const double pk = ref::agent_prob(p, agent, {k});
      const double v = reward(alt) - lambda * std::log(pk / ref::agent_prob(target, agent, {k}));
      mean += pk * v;
      second += pk * v * v;
    }
    const double sigma2 = second - mean * mean;
    const double exact =
        counterfactual_baseline(q, space, p, target, action, agent, lambda, BaselineMode::exact_mode(), rng);
    for (std::size_t m = 0; m < ms.size(); ++m) {
      for (int r = 0; r < reps; ++r) {
        const double est = counterfactual_baseline(q, space, p, target, action, agent, lambda,
                                                   BaselineMode::monte_carlo(ms[m]), rng);
        mse_sum[m] += (est - exact) * (est - exact);
        abs_sum[m] += std::abs(est - exact);
      }
      expected_sum[m] += reps * sigma2 / static_cast<double>(ms[m]);
    }
  }
  bool ok = abs_sum[3] < abs_sum[0] / 5.0;
  std::string detail = "RMSE / (sigma/sqrt(M)):";
  for (std::size_t m = 0; m < ms.size(); ++m) {
    const double ratio = std::sqrt(mse_sum[m] / expected_sum[m]);
    ok = ok && ratio >= 0.8 && ratio <= 1.2;
    detail += fmt(" M=%zu %.3f", ms[m], ratio);
  }
  detail += fmt("; mean |err| M=4096 / M=64 = %.3f (need < 0.2)", abs_sum[3] / abs_sum[0]);
  return {ok, detail};
}

Outcome reproducibility() {
  const fs::path root = fs::temp_directory_path() / fs::path("ma2ml-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(root);
  nlohmann::json doc = {{"space_ref", (fs::path(MA2ML_SOURCE_DIR) / "configs/spaces/toy3.json").string()},
                        {"oracle", "coupled"},
                        {"hyperparams", {{"seed", 11}, {"max_iter", 20}}}};
  RunConfig c = parse_run_config(doc, root);
  std::ostringstream log;
  SearchOptions quiet;
  quiet.quiet = true;
  c.out_dir = root / "a";
  const int ea = run_search_command(c, quiet, log);
  c.out_dir = root / "b";
  const int eb = run_search_command(c, quiet, log);
  c.out_dir = root / "c";
  SearchOptions partial = quiet;
  partial.stop_after = 7;
  const int ec = run_search_command(c, partial, log);
  const int er = resume_command(root / "c" / "manifest.json", quiet, log);
  bool ok = ea == 0 && eb == 0 && ec == 0 && er == 0;
  std::string detail = fmt("exit codes %d %d %d %d", ea, eb, ec, er);
  for (const char* f : {"pipelines.csv", "summary.csv", "topk.json"}) {
    const std::string a = slurp(root / "a" / f);
    const bool same = !a.empty() && a == slurp(root / "b" / f);
    const bool resumed = a == slurp(root / "c" / f);
    ok = ok && same && resumed;
    detail += fmt("; %s rerun %s, resume %s", f, same ? "identical" : "DIFFERS", resumed ? "identical" : "DIFFERS");
  }
  fs::remove_all(root);
  return {ok, detail};
}

}  // namespace

int main() {
  criterion(1, "monotone improvement certification (lambda=0.2)", 60, [] { return certification(0.2, false); });
  criterion(2, "near-optimality at lambda=0.01", 60, [] { return certification(0.01, true); });
  criterion(3, "gradient correctness vs finite differences", 30, gradient_correctness);
  criterion(4, "estimator unbiasedness and baseline invariance", 30, unbiasedness);
  criterion(5, "variance reduction by the counterfactual baseline", 60, variance_reduction);
  criterion(6, "ablation on the coupled oracle (20 paired seeds)", 600, ablation);
  criterion(7, "multi-objective transform", 1, multi_objective);
  criterion(8, "Monte Carlo baseline convergence", 60, mc_convergence);
  criterion(9, "reproducibility and resume", 60, reproducibility);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
