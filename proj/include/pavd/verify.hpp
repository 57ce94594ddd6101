#pragma once

// Verification checks shared by the `verify` subcommand and the acceptance run.
// Every check returns its statistics alongside a pass flag.

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pavd/analysis.hpp"
#include "pavd/cmj.hpp"
#include "pavd/discrete.hpp"
#include "pavd/malthus.hpp"
#include "pavd/rates.hpp"
#include "pavd/stats.hpp"

namespace pavd::verify {

struct Check {
  std::string name;
  bool pass = false;
  nlohmann::json stats = nlohmann::json::object();
  double seconds = 0.0;  // wall time, not serialized
};

struct Suite {
  std::string name;
  std::vector<Check> checks;

  bool pass() const {
    for (const auto& c : checks) {
      if (!c.pass) return false;
    }
    return true;
  }
};

inline nlohmann::json to_json(const Check& c) { return {{"name", c.name}, {"pass", c.pass}, {"stats", c.stats}}; }

inline nlohmann::json to_json(const Suite& s) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : s.checks) checks.push_back(to_json(c));
  return {{"suite", s.name}, {"pass", s.pass()}, {"checks", checks}};
}

// Runs f, recording its wall time.
template <class F>
Check timed(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  Check c = f();
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

inline std::vector<std::pair<std::string, RateModel>> builtin_fixtures() {
  return {{"constant_2_1", models::constant(2.0, 1.0)},
          {"rich_are_old", models::rich_are_old()},
          {"rich_die_young_1", models::rich_die_young_1()},
          {"rich_die_young_2", models::rich_die_young_2()}};
}

inline RateModel linear_unit_death() {
  return RateModel(RateSequence(AffineFamily{1.0, 1.0}), RateSequence(ConstantFamily{1.0}));
}

inline RateModel sublinear_no_death() {
  return RateModel(RateSequence(PowerFamily{1.0, 0.4}), RateSequence(ConstantFamily{0.0}));
}

// Smallest k with phi2(k) >= target.
inline std::size_t k_with_phi2(const RateModel& m, double target) {
  long double s = 0.0L;
  std::size_t k = 0;
  while (s < target) {
    const long double f = m.total(k);
    s += 1.0L / (f * f);
    ++k;
  }
  return k;
}

// ---------------------------------------------------------------------------
// Malthusian parameter and offspring

inline Check malthus_constant_rates(double c, double tol = 1e-9) {
  return timed([&] {
    Check ch;
    ch.name = "lambda_star_constant_b" + std::to_string(static_cast<int>(c));
    const auto sol = solve_malthusian(models::constant(c, 1.0));
    ch.stats = {{"lambda_star", sol.lambda_star}, {"expected", c - 1.0}, {"residual", sol.residual},
                {"tolerance", tol}};
    ch.pass = std::abs(sol.lambda_star - (c - 1.0)) <= tol;
    return ch;
  });
}

// E[sum_{k<=D} e^{-lambda S_k}] against the analytic series.
inline Check mu_hat_identity(const std::string& name, const RateModel& m, double lambda, std::uint64_t samples,
                             std::uint64_t seed) {
  return timed([&] {
    Check ch;
    ch.name = "mu_hat_monte_carlo_" + name;
    auto rng = Rng::for_stream(seed, 0);
    std::vector<double> v;
    v.reserve(samples);
    for (std::uint64_t i = 0; i < samples; ++i) {
      const auto s = sample_offspring_process(m, std::size_t{1} << 20, rng);
      double acc = 0.0;
      for (double x : s.S) acc += std::exp(-lambda * x);
      v.push_back(acc);
    }
    const auto mu = mu_hat(m, lambda, 1e-12);
    const double est = stats::mean(v), se = stats::standard_error(v);
    ch.stats = {{"lambda", lambda}, {"analytic", mu.value}, {"monte_carlo", est}, {"standard_error", se},
                {"z", (est - mu.value) / se}};
    ch.pass = mu.finite() && std::abs(est - mu.value) <= 3.0 * se;
    return ch;
  });
}

// Chi-square of sampled D over the bins {0}, ..., {k_max - 1}, [k_max, inf].
inline Check offspring_law(const std::string& name, const RateModel& m, std::size_t k_max, std::uint64_t samples,
                           std::uint64_t seed, double alpha = 0.01) {
  return timed([&] {
    Check ch;
    ch.name = "offspring_tail_" + name;
    const OffspringDistribution dist(m);
    auto rng = Rng::for_stream(seed, 1);
    std::vector<double> counts(k_max + 1, 0.0), probs(k_max + 1, 0.0);
    for (std::uint64_t i = 0; i < samples; ++i) {
      const auto s = sample_offspring_process(m, 1, rng);
      const std::size_t d = s.D ? std::min<std::uint64_t>(*s.D, k_max) : k_max;
      counts[d] += 1.0;
    }
    for (std::size_t k = 0; k < k_max; ++k) probs[k] = dist.pmf(k);
    probs[k_max] = dist.tail(k_max);
    const auto r = stats::chi_square_test(counts, probs);
    nlohmann::json emp = nlohmann::json::array(), exact = nlohmann::json::array();
    double acc = 0.0;
    for (std::size_t k = k_max + 1; k-- > 0;) {
      acc += counts[k];
      emp.insert(emp.begin(), acc / samples);
      exact.insert(exact.begin(), dist.tail(k));
    }
    ch.stats = {{"empirical_tail", emp}, {"exact_tail", exact}, {"chi_square", r.statistic}, {"dof", r.dof},
                {"p_value", r.p_value}, {"alpha", alpha}};
    ch.pass = r.p_value > alpha;
    return ch;
  });
}

// sum_{j<k} P(D = j) + P(D >= k) = 1, and P(D = k) = P(D >= k) - P(D >= k+1).
inline Check telescoping(const std::string& name, const RateModel& m, std::size_t k_max, double tol = 1e-12) {
  Check ch;
  ch.name = "telescoping_" + name;
  const OffspringDistribution dist(m);
  long double acc = 0.0L;
  double worst_mass = 0.0, worst_diff = 0.0;
  for (std::size_t k = 0; k <= k_max; ++k) {
    worst_mass = std::max(worst_mass, std::abs(static_cast<double>(acc + dist.tail(k) - 1.0L)));
    worst_diff = std::max(worst_diff, std::abs(dist.pmf(k) - dist.pmf_by_difference(k)));
    acc += dist.pmf(k);
  }
  ch.stats = {{"k_max", k_max}, {"max_mass_error", worst_mass}, {"max_difference_error", worst_diff},
              {"tolerance", tol}};
  ch.pass = worst_mass <= tol && worst_diff <= tol;
  return ch;
}

inline Check dtail_bound(const std::string& name, const RateModel& m, std::size_t k_max) {
  Check ch;
  ch.name = "dtail_bound_" + name;
  try {
    const auto rep = dtail_bound_check(OffspringDistribution(m), DerivedSequences(m), k_max);
    ch.stats = {{"k_max", k_max}, {"min_slack", rep.min_slack}, {"argmin", rep.argmin}};
    ch.pass = true;
  } catch (const Error& e) {
    ch.stats = {{"k_max", k_max}, {"error", e.what()}};
  }
  return ch;
}

// ---------------------------------------------------------------------------
// Lifetimes

inline Check lifetime_exponential(const std::string& name, const RateModel& m, double rate, std::uint64_t samples,
                                  std::uint64_t seed, double alpha = 0.01) {
  return timed([&] {
    Check ch;
    ch.name = "lifetime_ks_" + name;
    auto rng = Rng::for_stream(seed, 2);
    std::vector<double> life;
    life.reserve(samples);
    for (std::uint64_t i = 0; i < samples; ++i) life.push_back(sample_offspring_process(m, 1, rng).L);
    const auto r = stats::ks_test(life, [rate](double x) { return x <= 0.0 ? 0.0 : -std::expm1(-rate * x); });
    ch.stats = {{"rate", rate}, {"samples", samples}, {"ks_statistic", r.statistic}, {"p_value", r.p_value},
                {"alpha", alpha}};
    ch.pass = r.p_value > alpha;
    return ch;
  });
}

inline nlohmann::json tail_points_json(const LifetimeTailReport& rep) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : rep.points) {
    pts.push_back({{"t", p.t},
                   {"survival", p.survival},
                   {"rate", p.rate},
                   {"rate_lo", p.rate_lo},
                   {"rate_hi", p.rate_hi},
                   {"stages", p.stages}});
  }
  return pts;
}

inline Check lifetime_rate_near(const std::string& name, const RateModel& m, double t, double target, double tol,
                                std::uint64_t particles, std::uint64_t seed) {
  return timed([&] {
    Check ch;
    ch.name = "lifetime_rate_" + name;
    auto rng = Rng::for_stream(seed, 3);
    const auto rep = lifetime_tail_rate(m, {t}, particles, rng);
    ch.stats = {{"points", tail_points_json(rep)}, {"target", target}, {"tolerance", tol}};
    ch.pass = std::abs(rep.points.back().rate - target) <= tol;
    return ch;
  });
}

// Estimates on an increasing time grid must move monotonically closer to `target`;
// with `require_decreasing` they must also decrease.
inline Check lifetime_rate_trend(const std::string& name, const RateModel& m, const std::vector<double>& t_grid,
                                 double target, bool require_decreasing, std::uint64_t particles,
                                 std::uint64_t seed) {
  return timed([&] {
    Check ch;
    ch.name = "lifetime_rate_trend_" + name;
    auto rng = Rng::for_stream(seed, 4);
    const auto rep = lifetime_tail_rate(m, t_grid, particles, rng);
    bool decreasing = true, closer = true;
    for (std::size_t i = 1; i < rep.points.size(); ++i) {
      decreasing = decreasing && rep.points[i].rate < rep.points[i - 1].rate;
      closer = closer && std::abs(rep.points[i].rate - target) < std::abs(rep.points[i - 1].rate - target);
    }
    ch.stats = {{"points", tail_points_json(rep)}, {"target", target}, {"decreasing", decreasing},
                {"approaches_target", closer}, {"require_decreasing", require_decreasing}};
    ch.pass = closer && (decreasing || !require_decreasing);
    return ch;
  });
}

// ---------------------------------------------------------------------------
// Moderate deviations

inline Check erlang_cross_check(double z, std::size_t k, std::uint64_t samples, std::uint64_t seed) {
  Check ch;
  ch.name = "erlang_cross_check_z" + std::to_string(z).substr(0, 3);
  auto rng = Rng::for_stream(seed, 5);
  const auto est = mdp_estimate(models::constant(2.0, 1.0), k, z, samples, rng);
  const double exact = std::log(erlang_cdf(k, 3.0, est.phi1 - z * est.phi2)) / est.phi2;
  ch.stats = {{"k", k}, {"z", z}, {"estimate", est.estimate}, {"standard_error", est.standard_error},
              {"exact", exact}, {"tilt", est.tilt}};
  ch.pass = std::abs(est.estimate - exact) <= 3.0 * est.standard_error;
  return ch;
}

inline Check mdp_value(double z, double target, double tol, std::uint64_t samples, std::uint64_t seed) {
  Check ch;
  ch.name = "mdp_power_0.4_z" + std::to_string(z).substr(0, 3);
  const auto m = sublinear_no_death();
  const std::size_t k = k_with_phi2(m, 40.0);
  auto rng = Rng::for_stream(seed, 6);
  const auto est = mdp_estimate(m, k, z, samples, rng);
  ch.stats = {{"k", k}, {"phi2", est.phi2}, {"z", z}, {"estimate", est.estimate},
              {"standard_error", est.standard_error}, {"target", target}, {"tolerance", tol}};
  ch.pass = std::abs(est.estimate - target) <= tol;
  return ch;
}

inline Check tilted_value(double theta, double y, double z, double target, double tol, std::uint64_t samples,
                          std::uint64_t seed) {
  Check ch;
  ch.name = "tilted_mdp_power_0.4";
  const auto m = sublinear_no_death();
  const std::size_t k = k_with_phi2(m, 40.0);
  auto rng = Rng::for_stream(seed, 7);
  const auto est = tilted_expectation_estimate(m, k, z, y, theta, samples, rng);
  ch.stats = {{"k", k}, {"theta", theta}, {"y", y}, {"z", z}, {"estimate", est.estimate},
              {"standard_error", est.standard_error}, {"target", target}, {"tolerance", tol}};
  ch.pass = std::abs(est.estimate - target) <= tol;
  return ch;
}

// ---------------------------------------------------------------------------
// Embedding

// Law of the tree state after n steps, exact versus the continuous-time
// process stopped at its n-th event.
inline Check embedding(int n, std::uint64_t runs, std::uint64_t seed, double tv_tol) {
  return timed([&] {
    Check ch;
    ch.name = "embedding_n" + std::to_string(n);
    const auto m = std::make_shared<const RateModel>(models::constant(2.0, 1.0));
    const auto exact = state_law(enumerate_small_chain(*m, n));
    auto rng = Rng::for_stream(seed, 100 + n);
    std::map<OutcomeSequence, double> counts;
    for (std::uint64_t i = 0; i < runs; ++i) {
      BPState s(m);
      s.record_tau(false);
      s.init(rng);
      s.run_until_events(static_cast<std::uint64_t>(n), rng);
      counts[state_key(s)] += 1.0;
    }
    ChainLaw empirical;
    for (const auto& [k, c] : counts) empirical[k] = c / static_cast<double>(runs);
    const double tv = stats::tv_distance(exact, empirical);
    // expected TV from multinomial noise alone
    double floor = 0.0;
    for (const auto& [k, p] : exact) floor += 0.5 * std::sqrt(2.0 * p * (1.0 - p) / (M_PI * runs));
    const auto chi = law_chi_square(exact, counts);
    ch.stats = {{"n", n}, {"runs", runs}, {"outcomes", exact.size()}, {"tv", tv}, {"tv_tolerance", tv_tol},
                {"expected_tv_from_sampling", floor}, {"chi_square_p", chi.p_value}};
    ch.pass = tv < tv_tol;
    return ch;
  });
}

inline Check embedding_chi_square(int n, std::uint64_t runs, std::uint64_t seed, double alpha = 0.001) {
  return timed([&] {
    Check ch;
    ch.name = "embedding_chi_square_n" + std::to_string(n);
    const auto m = std::make_shared<const RateModel>(models::constant(2.0, 1.0));
    const auto exact = state_law(enumerate_small_chain(*m, n));
    auto rng = Rng::for_stream(seed, 200 + n);
    std::map<OutcomeSequence, double> counts;
    for (std::uint64_t i = 0; i < runs; ++i) {
      BPState s(m);
      s.record_tau(false);
      s.init(rng);
      s.run_until_events(static_cast<std::uint64_t>(n), rng);
      counts[state_key(s)] += 1.0;
    }
    const auto chi = law_chi_square(exact, counts);
    ch.stats = {{"n", n}, {"runs", runs}, {"chi_square", chi.statistic}, {"dof", chi.dof},
                {"p_value", chi.p_value}, {"alpha", alpha}};
    ch.pass = chi.p_value > alpha;
    return ch;
  });
}

// ---------------------------------------------------------------------------
// Survival with a high degree

inline Check survdeg_consistent(const std::string& name, const RateModel& m, std::size_t k, double t, double t_prime,
                                double x, std::uint64_t samples, std::uint64_t seed) {
  Check ch;
  ch.name = "survdeg_" + name;
  auto rng = Rng::for_stream(seed, 8);
  const auto r = survdeg_probability(m, k, t, t_prime, x, samples, rng);
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  ch.stats = {{"k", k}, {"t", t}, {"t_prime", t_prime}, {"x", x}, {"estimate", r.estimate},
              {"standard_error", r.standard_error}, {"upper", opt(r.upper)}, {"lower", opt(r.lower)}};
  ch.pass = r.consistent;
  return ch;
}

// ---------------------------------------------------------------------------
// Degree distribution

// Unnormalized alive characteristic E int e^{-lambda t} 1{alive at t} dt.
inline double alive_characteristic(const RateModel& m, double lambda, double tol = 1e-13) {
  long double sum = 0.0L, log_term = 0.0L;
  for (std::size_t k = 0; k < (std::size_t{1} << 26); ++k) {
    const double s = m.total(k);
    const long double term = std::exp(log_term) / (lambda + s);
    sum += term;
    if (term < tol * sum && k > 64) break;
    log_term += std::log(static_cast<long double>(m.b(k))) - std::log(static_cast<long double>(lambda) + s);
  }
  return static_cast<double>(sum);
}

// Alive fraction and alive-degree histogram of surviving trees at step n
// against the limiting distribution.
inline Check degree_distribution(const std::string& name, const RateModel& model, std::uint64_t n,
                                 std::size_t survivors, int k_max, std::uint64_t seed) {
  return timed([&] {
    Check ch;
    ch.name = "degree_distribution_" + name;
    const auto m = std::make_shared<const RateModel>(model);
    const auto sol = solve_malthusian(*m);
    const auto pa = limiting_degree_distribution(sol, *m, Population::alive, k_max);
    std::vector<double> fractions;
    std::vector<std::vector<double>> hist(k_max + 1);
    for (std::uint64_t rep = 0; fractions.size() < survivors; ++rep) {
      auto rng = Rng::for_stream(seed, rep);
      TreeState s(m);
      s.advance_to(n, rng);
      if (s.extinct()) continue;
      fractions.push_back(static_cast<double>(s.alive_count()) / static_cast<double>(n));
      for (int k = 0; k <= k_max; ++k) {
        hist[k].push_back(static_cast<double>(s.classes().count(k)) / static_cast<double>(s.alive_count()));
      }
    }
    const double chi_a = alive_characteristic(*m, sol.lambda_star), chi_b = 1.0 / sol.lambda_star;
    const double frac = chi_a / (2.0 * chi_b - chi_a);
    bool ok = std::abs(stats::mean(fractions) - frac) <= 3.0 * stats::standard_error(fractions) + 0.005;
    nlohmann::json rows = nlohmann::json::array();
    for (int k = 0; k <= k_max; ++k) {
      const double mean = stats::mean(hist[k]), se = stats::standard_error(hist[k]);
      const bool pass = std::abs(mean - pa.p[k]) <= 3.0 * se + 1e-3;
      ok = ok && pass;
      rows.push_back({{"k", k}, {"limit", pa.p[k]}, {"mean", mean}, {"standard_error", se}, {"pass", pass}});
    }
    ch.stats = {{"n", n}, {"survivors", survivors}, {"lambda_star", sol.lambda_star},
                {"alive_fraction", stats::mean(fractions)}, {"alive_fraction_limit", frac}, {"degrees", rows}};
    ch.pass = ok;
    return ch;
  });
}

// ---------------------------------------------------------------------------
// Suites

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"embedding", "mdp", "lifetime", "bounds", "degree-dist"};
  return names;
}

inline Suite run_suite(const std::string& name, std::uint64_t seed) {
  Suite s;
  s.name = name;
  if (name == "embedding") {
    for (int n = 1; n <= 4; ++n) s.checks.push_back(embedding(n, 100000, seed, 0.015));
    for (int n = 1; n <= 6; ++n) s.checks.push_back(embedding_chi_square(n, 100000, seed));
  } else if (name == "mdp") {
    for (double z : {0.5, 1.0, 2.0}) s.checks.push_back(erlang_cross_check(z, 400, 20000, seed));
    s.checks.push_back(mdp_value(1.0, -0.5, 0.15, 2000, seed));
    s.checks.push_back(tilted_value(1.0, 2.0, 1.0, 0.5, 0.2, 2000, seed));
  } else if (name == "lifetime") {
    s.checks.push_back(lifetime_exponential("constant_2_1", models::constant(2.0, 1.0), 1.0, 100000, seed));
    s.checks.push_back(lifetime_exponential("affine_unit_death", linear_unit_death(), 1.0, 100000, seed));
    s.checks.push_back(lifetime_rate_near("rich_die_young_1", models::rich_die_young_1(), 8.0, 1.25, 0.2, 20000, seed));
    s.checks.push_back(lifetime_rate_trend("rich_are_old", models::rich_are_old(), {4.0, 6.0, 8.0}, 1.5, false, 20000, seed));
  } else if (name == "bounds") {
    for (const auto& [fname, m] : builtin_fixtures()) {
      s.checks.push_back(telescoping(fname, m, 10000));
      s.checks.push_back(dtail_bound(fname, m, 10000));
      s.checks.push_back(offspring_law(fname, m, 10, 100000, seed));
    }
    s.checks.push_back(mu_hat_identity("rich_are_old", models::rich_are_old(), 2.0, 100000, seed));
    s.checks.push_back(survdeg_consistent("constant_2_1", models::constant(2.0, 1.0), 3, 2.0, 3.0, 1.0, 200000, seed));
    s.checks.push_back(survdeg_consistent("rich_are_old", models::rich_are_old(), 4, 3.0, 5.0, 1.2, 200000, seed));
    s.checks.push_back(survdeg_consistent(
        "affine_no_death",
        RateModel(RateSequence(AffineFamily{1.0, 1.0}), RateSequence(ConstantFamily{0.0})), 5, 1.5, 4.0, 0.0,
        200000, seed));
  } else if (name == "degree-dist") {
    s.checks.push_back(degree_distribution("constant_2_1", models::constant(2.0, 1.0), 200000, 30, 8, seed));
    s.checks.push_back(degree_distribution("rich_are_old", models::rich_are_old(), 200000, 30, 8, seed));
  } else {
    throw Error(Errc::parse_error, "unknown suite '" + name + "'");
  }
  return s;
}

}  // namespace pavd::verify
