#pragma once

// Oracles and estimators used to check the simulators against the analytic
// side: exact enumeration of short runs of the chain, exponentially tilted
// importance sampling for sums of independent exponentials, multilevel
// splitting for lifetime tails, and the survival-with-degree envelopes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "pavd/cmj.hpp"
#include "pavd/discrete.hpp"
#include "pavd/error.hpp"
#include "pavd/malthus.hpp"
#include "pavd/random.hpp"
#include "pavd/rates.hpp"
#include "pavd/stats.hpp"

namespace pavd {

// ---------------------------------------------------------------------------
// Exact law of the first steps

// One step outcome: +p for a birth attached to p, -v for the death of v.
using Outcome = std::int32_t;
using OutcomeSequence = std::vector<Outcome>;
using ChainLaw = std::map<OutcomeSequence, double>;

inline Outcome birth_outcome(Label parent) { return static_cast<Outcome>(parent); }
inline Outcome death_outcome(Label v) { return -static_cast<Outcome>(v); }

inline Outcome encode(const StepResult& r) {
  return r.kind == StepResult::Kind::birth ? birth_outcome(r.vertex) : death_outcome(r.vertex);
}

namespace detail {

struct SmallTree {
  std::vector<std::uint32_t> degree;  // by label; index 0 unused
  std::vector<Label> alive;
  std::uint32_t n = 1;
};

inline std::uint64_t count_leaves(const SmallTree& s, int steps_left, std::uint64_t limit) {
  if (steps_left == 0 || s.alive.empty()) return 1;
  std::uint64_t total = 0;
  for (std::size_t j = 0; j < s.alive.size() && total <= limit; ++j) {
    SmallTree born = s;
    const Label v = s.alive[j];
    ++born.degree[v];
    born.degree.push_back(0);
    born.alive.push_back(s.n + 1);
    ++born.n;
    total += count_leaves(born, steps_left - 1, limit);
    SmallTree dead = s;
    dead.alive.erase(dead.alive.begin() + static_cast<std::ptrdiff_t>(j));
    dead.degree.push_back(0);
    ++dead.n;
    total += count_leaves(dead, steps_left - 1, limit);
  }
  return total;
}

inline void expand(const RateModel& m, const SmallTree& s, int steps_left, long double prob,
                   OutcomeSequence& path, ChainLaw& law) {
  if (steps_left == 0 || s.alive.empty()) {
    law[path] += static_cast<double>(prob);
    return;
  }
  long double total = 0.0L;
  for (Label v : s.alive) total += m.total(s.degree[v]);
  for (std::size_t j = 0; j < s.alive.size(); ++j) {
    const Label v = s.alive[j];
    const std::uint32_t c = s.degree[v];
    const long double pick = m.total(c) / total;
    const long double pd = m.d(c) / static_cast<long double>(m.total(c));
    if (pd < 1.0L) {
      SmallTree born = s;
      ++born.degree[v];
      born.degree.push_back(0);
      born.alive.push_back(s.n + 1);
      ++born.n;
      path.push_back(birth_outcome(v));
      expand(m, born, steps_left - 1, prob * pick * (1.0L - pd), path, law);
      path.pop_back();
    }
    if (pd > 0.0L) {
      SmallTree dead = s;
      dead.alive.erase(dead.alive.begin() + static_cast<std::ptrdiff_t>(j));
      dead.degree.push_back(0);
      ++dead.n;
      path.push_back(death_outcome(v));
      expand(m, dead, steps_left - 1, prob * pick * pd, path, law);
      path.pop_back();
    }
  }
}

}  // namespace detail

// Exact law of the outcome sequence of the first n_max steps (shorter when the tree dies).
inline ChainLaw enumerate_small_chain(const RateModel& model, int n_max,
                                      std::uint64_t max_leaves = 4'000'000) {
  if (n_max < 0 || n_max > 8) throw Error(Errc::too_large, "n_max must be in [0, 8]");
  detail::SmallTree root;
  root.degree = {0, 0};
  root.alive = {1};
  if (detail::count_leaves(root, n_max, max_leaves) > max_leaves) {
    throw Error(Errc::too_large, "outcome tree exceeds " + std::to_string(max_leaves) + " leaves");
  }
  ChainLaw law;
  OutcomeSequence path;
  detail::expand(model, root, n_max, 1.0L, path, law);
  return law;
}

inline ChainLaw empirical_law(const std::vector<OutcomeSequence>& runs) {
  if (runs.empty()) throw Error(Errc::empty_input, "no runs");
  ChainLaw law;
  const double w = 1.0 / static_cast<double>(runs.size());
  for (const auto& r : runs) law[r] += w;
  return law;
}

// The pair (T_n, A_n) reached by an outcome sequence, flattened as
// (label, parent, alive) triples in label order.
using StateKey = std::vector<std::int32_t>;

inline StateKey state_key(const OutcomeSequence& seq) {
  std::map<std::int32_t, std::pair<std::int32_t, std::int32_t>> v{{1, {0, 1}}};
  std::int32_t n = 1;
  for (Outcome o : seq) {
    if (o > 0) {
      v[n + 1] = {o, 1};
    } else {
      v.at(-o).second = 0;
    }
    ++n;
  }
  StateKey k;
  for (const auto& [label, pa] : v) k.insert(k.end(), {label, pa.first, pa.second});
  return k;
}

inline StateKey state_key(const BPState& s) {
  std::vector<std::array<std::int32_t, 3>> rows;
  for (BPState::Id v = 0; v < s.size(); ++v) {
    const auto parent = v == 0 ? 0 : static_cast<std::int32_t>(s.label(s.parent(v)));
    rows.push_back({static_cast<std::int32_t>(s.label(v)), parent, s.alive(v) ? 1 : 0});
  }
  std::sort(rows.begin(), rows.end());
  StateKey k;
  for (const auto& r : rows) k.insert(k.end(), r.begin(), r.end());
  return k;
}

// Push-forward of a sequence law onto states.
inline ChainLaw state_law(const ChainLaw& law) {
  ChainLaw out;
  for (const auto& [seq, p] : law) out[state_key(seq)] += p;
  return out;
}

// Pearson test of an empirical law (counts) against an exact one. Outcomes the
// exact law gives probability zero make the p-value 0.
inline stats::TestResult law_chi_square(const ChainLaw& exact, const std::map<OutcomeSequence, double>& counts) {
  std::vector<double> obs, prob;
  for (const auto& [k, c] : counts) {
    if (!exact.count(k)) return {kInf, 0.0, 0};
  }
  for (const auto& [k, p] : exact) {
    const auto it = counts.find(k);
    obs.push_back(it == counts.end() ? 0.0 : it->second);
    prob.push_back(p);
  }
  // decreasing probability, so that pooling from the right merges the sparse outcomes
  std::vector<std::size_t> idx(obs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return prob[a] > prob[b]; });
  std::vector<double> o2, p2;
  for (auto i : idx) {
    o2.push_back(obs[i]);
    p2.push_back(prob[i]);
  }
  return stats::chi_square_test(o2, p2, 20.0);
}

// Outcome sequence of the discrete chain over n steps.
inline OutcomeSequence discrete_outcomes(const std::shared_ptr<const RateModel>& model, int n, Rng& rng) {
  TreeState s(model);
  OutcomeSequence out;
  for (int i = 0; i < n && !s.extinct(); ++i) out.push_back(encode(s.step(rng)));
  return out;
}

// Outcome sequence of the CMJ process up to tau_n, read off the event log.
inline OutcomeSequence cmj_outcomes(const std::shared_ptr<const RateModel>& model, int n, Rng& rng) {
  BPState s(model);
  s.record_tau(false);
  s.init(rng);
  OutcomeSequence out;
  std::uint64_t deaths = 0, births = 0;
  while (static_cast<int>(s.N()) < n && !s.extinct()) {
    s.run_until_events(s.N() + 1, rng);
    if (s.deaths() > deaths) {
      // the individual that just died is the only one whose death time equals t
      for (BPState::Id v = 0; v < s.size(); ++v) {
        if (!s.alive(v) && *s.death_time(v) == s.t()) {
          out.push_back(death_outcome(s.label(v)));
          break;
        }
      }
      deaths = s.deaths();
    } else {
      const BPState::Id child = static_cast<BPState::Id>(s.size() - 1);
      out.push_back(birth_outcome(s.label(s.parent(child))));
      births = s.births();
    }
  }
  (void)births;
  return out;
}

// ---------------------------------------------------------------------------
// Tilted importance sampling for S_k = sum_{i<k} E_i, E_i ~ Exp(f(i)), f = b + d

struct TiltedEstimate {
  double estimate = 0.0;        // normalized log-probability or log-expectation
  double standard_error = 0.0;  // of `estimate`
  double log_value = 0.0;       // unnormalized log of the estimated quantity
  double tilt = 0.0;            // eta: proposal rates f(i) + eta
  std::uint64_t samples = 0;
  double phi1 = 0.0, phi2 = 0.0;
};

namespace detail {

// eta >= 0 with sum 1/(f_i + eta) = a; eta = 0 when a >= sum 1/f_i.
inline double solve_tilt(const std::vector<double>& f, double a) {
  auto mean = [&](double eta) {
    long double s = 0.0L;
    for (double x : f) s += 1.0L / (x + eta);
    return static_cast<double>(s);
  };
  if (!(a > 0.0)) throw Error(Errc::no_tilt, "target mean must be positive");
  if (mean(0.0) <= a) return 0.0;
  double lo = 0.0, hi = 1.0;
  while (mean(hi) > a) {
    hi *= 2.0;
    if (hi > 1e300) throw Error(Errc::no_tilt, "tilt diverges");
  }
  while (hi - lo > 1e-10 * std::max(1.0, hi)) {
    const double mid = 0.5 * (lo + hi);
    (mean(mid) > a ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// log E[1{S <= c} e^{theta (S - c2)}] by sampling gaps from Exp(f + eta).
inline TiltedEstimate tilted_log_mean(const std::vector<double>& f, double c, double theta, double c2,
                                      std::uint64_t samples, Rng& rng) {
  if (samples < 2) throw Error(Errc::out_of_range, "need at least 2 samples");
  const double eta = solve_tilt(f, c);
  long double log_ratio = 0.0L;  // sum log(f/(f+eta))
  for (double x : f) log_ratio += std::log(static_cast<long double>(x)) - std::log(static_cast<long double>(x) + eta);
  // weights w_j = exp(log_ratio + eta S + theta (S - c2)) 1{S <= c}, kept as logs
  std::vector<double> lw;
  lw.reserve(samples);
  for (std::uint64_t j = 0; j < samples; ++j) {
    long double s = 0.0L;
    for (double x : f) s += rng.exponential(x + eta);
    if (s <= c) lw.push_back(static_cast<double>(log_ratio + eta * s + theta * (s - c2)));
  }
  TiltedEstimate out;
  out.tilt = eta;
  out.samples = samples;
  if (lw.empty()) {
    out.log_value = -kInf;
    out.estimate = -kInf;
    out.standard_error = kInf;
    return out;
  }
  const double mx = *std::max_element(lw.begin(), lw.end());
  long double s1 = 0.0L, s2 = 0.0L;
  for (double v : lw) {
    const long double e = std::exp(static_cast<long double>(v - mx));
    s1 += e;
    s2 += e * e;
  }
  const long double n = static_cast<long double>(samples);
  const long double m1 = s1 / n;
  const long double var = std::max(0.0L, s2 / n - m1 * m1) * n / (n - 1.0L);
  out.log_value = mx + static_cast<double>(std::log(m1));
  // delta method: se(log mean) = se(mean) / mean
  out.standard_error = static_cast<double>(std::sqrt(var / n) / m1);
  return out;
}

inline std::vector<double> gap_rates(const RateModel& m, std::size_t k) {
  std::vector<double> f(k);
  for (std::size_t i = 0; i < k; ++i) f[i] = m.total(i);
  return f;
}

}  // namespace detail

// phi2(k)^{-1} log P(S_k - phi1(k) <= -z phi2(k)).
inline TiltedEstimate mdp_estimate(const RateModel& model, std::size_t k, double z, std::uint64_t samples,
                                   Rng& rng) {
  const auto f = detail::gap_rates(model, k);
  long double p1 = 0.0L, p2 = 0.0L;
  for (double x : f) {
    p1 += 1.0L / x;
    p2 += 1.0L / (static_cast<long double>(x) * x);
  }
  const double phi1 = static_cast<double>(p1), phi2 = static_cast<double>(p2);
  const double c = phi1 - z * phi2;
  if (!(c > 0.0)) throw Error(Errc::no_tilt, "target phi1 - z phi2 is not positive");
  auto out = detail::tilted_log_mean(f, c, 0.0, 0.0, samples, rng);
  out.phi1 = phi1;
  out.phi2 = phi2;
  out.estimate = out.log_value / phi2;
  out.standard_error /= phi2;
  return out;
}

// phi2(k)^{-1} log E[1{S_k <= phi1 - z phi2} exp(theta (S_k - (phi1 - y phi2)))].
inline TiltedEstimate tilted_expectation_estimate(const RateModel& model, std::size_t k, double z, double y,
                                                  double theta, std::uint64_t samples, Rng& rng) {
  if (!std::isfinite(theta)) throw Error(Errc::no_tilt, "theta must be finite");
  const auto f = detail::gap_rates(model, k);
  long double p1 = 0.0L, p2 = 0.0L;
  for (double x : f) {
    p1 += 1.0L / x;
    p2 += 1.0L / (static_cast<long double>(x) * x);
  }
  const double phi1 = static_cast<double>(p1), phi2 = static_cast<double>(p2);
  const double c = phi1 - z * phi2;
  if (!(c > 0.0)) throw Error(Errc::no_tilt, "target phi1 - z phi2 is not positive");
  auto out = detail::tilted_log_mean(f, c, theta, phi1 - y * phi2, samples, rng);
  out.phi1 = phi1;
  out.phi2 = phi2;
  out.estimate = out.log_value / phi2;
  out.standard_error /= phi2;
  return out;
}

// Exact Erlang tail for constant gap rate f: P(S_k <= c) = P(Gamma(k, f) <= c).
inline double erlang_cdf(std::size_t k, double rate, double c) {
  return boost::math::gamma_p(static_cast<double>(k), rate * c);
}

// ---------------------------------------------------------------------------
// Lifetime tail by multilevel splitting in time

struct LifetimeTailPoint {
  double t = 0.0;
  double survival = 0.0;  // estimate of P(L > t)
  double survival_lo = 0.0, survival_hi = 0.0;
  double rate = 0.0;      // -(1/t) log P(L > t)
  double rate_lo = 0.0, rate_hi = 0.0;
  std::uint64_t stages = 0;
};

struct LifetimeTailReport {
  std::vector<LifetimeTailPoint> points;
  std::optional<double> predicted_rate;  // d* (rich are old) or R (rich die young)
};

// The state carried across a time level is the current child count only:
// the pending exponential restarts by memorylessness. Each stage keeps a fixed
// number of particles, resampled uniformly from the survivors of the previous one.
inline LifetimeTailReport lifetime_tail_rate(const RateModel& model, const std::vector<double>& t_grid,
                                             std::uint64_t samples, Rng& rng, double level_step = 0.5) {
  if (t_grid.empty()) throw Error(Errc::empty_input, "empty time grid");
  if (samples < 10) throw Error(Errc::insufficient_tail, "need at least 10 particles");
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    if (!(t_grid[i] > 0.0) || (i > 0 && !(t_grid[i] > t_grid[i - 1]))) {
      throw Error(Errc::out_of_range, "t_grid must be positive and strictly increasing");
    }
  }
  LifetimeTailReport rep;
  const auto r = assumption_report(model);
  if (r.regime == Regime::rich_die_young) {
    rep.predicted_rate = r.R;
  } else if (r.regime == Regime::rich_are_old) {
    rep.predicted_rate = r.finite_degree == Verdict::fails ? 0.0 : r.d_star.value_or(kInf);
  }

  std::vector<std::uint64_t> particles(samples, 0), next;
  double now = 0.0;
  long double log_p = 0.0L, log_lo = 0.0L, log_hi = 0.0L;
  std::uint64_t stages = 0;
  for (double target : t_grid) {
    while (now < target) {
      const double level = std::min(target, now + level_step);
      const double span = level - now;
      next.clear();
      for (std::uint64_t i : particles) {
        double t = 0.0;
        bool dead = false;
        for (;;) {
          const double rate = model.total(i);
          t += rng.exponential(rate);
          if (t > span) break;
          const double d = model.d(i);
          if (d > 0.0 && rng.uniform() * rate < d) {
            dead = true;
            break;
          }
          ++i;
        }
        if (!dead) next.push_back(i);
      }
      if (next.size() < 10) {
        throw Error(Errc::insufficient_tail,
                    "fewer than 10 survivors at t = " + std::to_string(level));
      }
      const auto ci = stats::wilson_interval(static_cast<double>(next.size()), static_cast<double>(samples));
      log_p += std::log(static_cast<long double>(next.size()) / samples);
      log_lo += std::log(static_cast<long double>(ci.lo));
      log_hi += std::log(static_cast<long double>(ci.hi));
      ++stages;
      particles.resize(samples);
      for (auto& p : particles) p = next[rng.below(next.size())];
      now = level;
    }
    LifetimeTailPoint pt;
    pt.t = target;
    pt.survival = std::exp(static_cast<double>(log_p));
    pt.survival_lo = std::exp(static_cast<double>(log_lo));
    pt.survival_hi = std::exp(static_cast<double>(log_hi));
    pt.rate = -static_cast<double>(log_p) / target;
    pt.rate_lo = -static_cast<double>(log_hi) / target;
    pt.rate_hi = -static_cast<double>(log_lo) / target;
    pt.stages = stages;
    rep.points.push_back(pt);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Survival with a high degree

struct SurvDegReport {
  double estimate = 0.0;  // P(D >= k, S_k <= t, S_{D+1} > t')
  double standard_error = 0.0;
  double x = 0.0;
  std::optional<double> upper, upper_se;
  std::optional<double> lower, lower_se;
  bool consistent = true;  // no envelope violated beyond 3 standard errors
};

// Direct Monte Carlo of the event, plus the envelope
// e^{-x(t'-t)} P(D >= k) E[1{S_k <= t} e^{x(S_k - t)}], which is an upper bound when
// x <= inf_{i>=k} d(i) and a lower bound when x >= sup_{i>=k} d(i). When the
// finite-degree series converges the envelope is [p_inf^2 P(S_k <= t), P(S_k <= t)].
inline SurvDegReport survdeg_probability(const RateModel& model, std::size_t k, double t, double t_prime,
                                         double x, std::uint64_t samples, Rng& rng) {
  if (!(t_prime >= t && t >= 0.0)) throw Error(Errc::out_of_range, "need t' >= t >= 0");
  if (samples < 2) throw Error(Errc::out_of_range, "need at least 2 samples");
  SurvDegReport rep;
  rep.x = x;
  std::uint64_t hits = 0;
  for (std::uint64_t j = 0; j < samples; ++j) {
    const auto s = sample_offspring_process(model, std::max<std::size_t>(k, 1), rng);
    const bool deg_ok = !s.D || *s.D >= k;
    if (!deg_ok) continue;
    const double sk = k == 0 ? 0.0 : s.S[k - 1];
    if (sk <= t && s.L > t_prime) ++hits;
  }
  const double n = static_cast<double>(samples);
  rep.estimate = hits / n;
  rep.standard_error = std::sqrt(rep.estimate * (1.0 - rep.estimate) / n);

  const auto f = detail::gap_rates(model, k);
  // Monte Carlo of P(S_k <= t) and of E[1{S_k <= t} e^{x(S_k - t)}]; the latter by
  // sampling gaps from Exp(f - x), which makes the integrand a constant times 1{S_k <= t}.
  auto mean_indicator = [&](double shift) {
    std::uint64_t c = 0;
    for (std::uint64_t j = 0; j < samples; ++j) {
      long double s = 0.0L;
      for (double r : f) s += rng.exponential(r - shift);
      c += s <= t;
    }
    const double p = c / n;
    return std::pair<double, double>{p, std::sqrt(p * (1.0 - p) / n)};
  };

  const Verdict fd = finite_degree(model);
  if (fd == Verdict::fails) {
    const double p_inf = OffspringDistribution(model).p_infinite();
    const auto [p, se] = mean_indicator(0.0);
    rep.upper = p;
    rep.upper_se = se;
    rep.lower = p_inf * p_inf * p;
    rep.lower_se = p_inf * p_inf * se;
  } else {
    const double min_f = f.empty() ? kInf : *std::min_element(f.begin(), f.end());
    if (x < min_f) {
      long double log_ratio = 0.0L;
      for (double r : f) log_ratio += std::log(static_cast<long double>(r)) - std::log(static_cast<long double>(r) - x);
      const auto [p, se] = mean_indicator(x);
      const double scale = static_cast<double>(std::exp(log_ratio)) * std::exp(-x * t);
      const double tail = OffspringDistribution(model).tail(k);
      const double env = std::exp(-x * (t_prime - t)) * tail * scale * p;
      const double env_se = std::exp(-x * (t_prime - t)) * tail * scale * se;
      const auto d_inf = model.death.inf_from(k);
      const auto d_sup = model.death.sup_from(k);
      if (d_inf && x <= *d_inf) {
        rep.upper = env;
        rep.upper_se = env_se;
      }
      if (d_sup && x >= *d_sup) {
        rep.lower = env;
        rep.lower_se = env_se;
      }
    }
  }
  if (rep.upper && rep.estimate - 3.0 * rep.standard_error > *rep.upper + 3.0 * *rep.upper_se) {
    rep.consistent = false;
  }
  if (rep.lower && rep.estimate + 3.0 * rep.standard_error < *rep.lower - 3.0 * *rep.lower_se) {
    rep.consistent = false;
  }
  return rep;
}

}  // namespace pavd
