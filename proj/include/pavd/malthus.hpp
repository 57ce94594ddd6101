#pragma once

// Laplace transform of the offspring point process, the Malthusian parameter,
// the offspring law D and the limiting degree distributions.
//
// All products are accumulated as sums of logarithms. Infinite series are
// truncated only against a certified remainder interval: for indices past the
// explicit prefix of the model, the ratio of consecutive terms
// r(i) = b(i) / (lambda + b(i) + d(i)) is bounded by either a geometric ratio
// (bounded b) or a hypergeometric ratio (i + a) / (i + a + p) (affine or
// sublinear b), both of which have closed-form sums.

#include <cmath>
#include <cstddef>
#include <functional>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "pavd/error.hpp"
#include "pavd/rates.hpp"

namespace pavd {

// Bounds on sum_{k > K} term(k) / term(K) where term(k) = prod_{i<k} r(i).
struct RemainderBounds {
  double lo = 0.0;
  double hi = kInf;
  bool diverges = false;
};

namespace detail {

// Certificate for the remainder after index K. Requires K >= model.explicit_prefix().
inline RemainderBounds product_series_remainder(const RateModel& model, double lambda, std::size_t K) {
  RemainderBounds out;
  const auto d_inf = model.death.inf_from(K);
  const auto d_sup = model.death.sup_from(K);
  if (!d_inf || !d_sup) return out;
  const TailShape shape = model.birth.tail_shape();
  switch (shape.kind) {
    case TailShape::Kind::bounded: {
      const double b_inf = *model.birth.inf_from(K);
      const double b_sup = *model.birth.sup_from(K);
      const double q_hi = b_sup / (lambda + b_sup + *d_inf);
      const double q_lo = std::isinf(*d_sup) ? 0.0 : b_inf / (lambda + b_inf + *d_sup);
      if (q_lo >= 1.0) {
        out.diverges = true;
        return out;
      }
      out.lo = q_lo / (1.0 - q_lo);
      if (q_hi < 1.0) out.hi = q_hi / (1.0 - q_hi);
      return out;
    }
    case TailShape::Kind::affine: {
      if (shape.slope <= 0.0) return out;
      const double a = shape.intercept / shape.slope;
      const double x = static_cast<double>(K) + a;
      const double p_hi = (lambda + *d_inf) / shape.slope;  // smallest p -> largest terms
      if (p_hi > 1.0) out.hi = x / (p_hi - 1.0);
      if (std::isfinite(*d_sup)) {
        const double p_lo = (lambda + *d_sup) / shape.slope;
        if (p_lo <= 1.0) {
          out.diverges = true;
          return out;
        }
        out.lo = x / (p_lo - 1.0);
      }
      return out;
    }
    case TailShape::Kind::sublinear: {
      if (K < shape.from) return out;
      const double x = static_cast<double>(K) + 1.0;
      const double p = (lambda + *d_inf) * x / model.b(K);
      if (p > 1.0) out.hi = x / (p - 1.0);
      return out;
    }
    default:
      return out;
  }
}

// Terms of the series stay bounded away from zero iff sum (lambda + d)/(lambda + b + d) < inf.
inline bool terms_bounded_below(const RateModel& model, double lambda) {
  const auto gb = model.birth.growth();
  const auto gd = model.death.growth();
  if (!gb || !gd) return false;
  Growth num = *gd;
  Growth den = dominant(*gb, *gd);
  if (lambda > 0.0) {
    num = dominant(num, Growth::constant());
    den = dominant(den, Growth::constant());
  }
  const auto div = ratio_series_diverges(num, den);
  return div.has_value() && !*div;
}

inline std::size_t certificate_start(const RateModel& model) {
  std::size_t start = std::max<std::size_t>(1, model.explicit_prefix());
  const TailShape shape = model.birth.tail_shape();
  if (shape.kind == TailShape::Kind::sublinear) start = std::max(start, shape.from);
  return start;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// mu_hat

struct MuHat {
  enum class Kind { finite, diverges, uncertain };
  Kind kind = Kind::uncertain;
  double value = kInf;        // finite: the estimate
  double error_bound = kInf;  // finite: |value - mu_hat| <= error_bound
  double partial_sum = 0.0;
  std::size_t terms = 0;

  bool finite() const { return kind == Kind::finite; }
};

// mu_hat(lambda) = sum_{k>=1} prod_{i<k} b(i) / (lambda + b(i) + d(i)).
inline MuHat mu_hat(const RateModel& model, double lambda, double tol,
                    std::size_t max_terms = std::size_t{1} << 26) {
  if (!(lambda >= 0.0)) throw Error(Errc::out_of_range, "mu_hat requires lambda >= 0");
  MuHat out;
  if (detail::terms_bounded_below(model, lambda)) {
    out.kind = MuHat::Kind::diverges;
    return out;
  }
  const std::size_t start = detail::certificate_start(model);
  long double sum = 0.0L;
  long double log_term = 0.0L;
  std::size_t checkpoint = start;
  for (std::size_t k = 0; k < max_terms;) {
    const double b = model.b(k);
    log_term += std::log(static_cast<long double>(b)) -
                std::log(static_cast<long double>(lambda) + b + model.d(k));
    ++k;
    const long double term = std::exp(log_term);
    sum += term;
    if (k < checkpoint) continue;
    checkpoint = std::max(k + 1, k + k / 8);
    const RemainderBounds rem = detail::product_series_remainder(model, lambda, k);
    if (rem.diverges) {
      out.kind = MuHat::Kind::diverges;
      out.partial_sum = static_cast<double>(sum);
      out.terms = k;
      return out;
    }
    if (!std::isfinite(rem.hi)) continue;
    const double lo = static_cast<double>(term) * rem.lo;
    const double hi = static_cast<double>(term) * rem.hi;
    // log_term carries ~k long-double roundings; the final conversion one double rounding.
    const double rounding =
        static_cast<double>(sum) * (std::numeric_limits<double>::epsilon() +
                                    8.0 * static_cast<double>(k) * std::numeric_limits<long double>::epsilon());
    const double err = 0.5 * (hi - lo) + rounding;
    if (err <= tol) {
      out.kind = MuHat::Kind::finite;
      out.value = static_cast<double>(sum) + 0.5 * (lo + hi);
      out.error_bound = err;
      out.partial_sum = static_cast<double>(sum);
      out.terms = k;
      return out;
    }
  }
  out.partial_sum = static_cast<double>(sum);
  out.terms = max_terms;
  return out;
}

// inf{lambda > 0 : mu_hat(lambda) < inf}, in closed form for the builtin families.
inline std::optional<double> lambda_underline(const RateModel& model) {
  if (!model.certified()) return std::nullopt;
  const TailShape shape = model.birth.tail_shape();
  switch (shape.kind) {
    case TailShape::Kind::bounded:
    case TailShape::Kind::sublinear:
      return 0.0;
    case TailShape::Kind::affine: {
      const double d_lim = *model.death.limit();
      if (std::isinf(d_lim)) return 0.0;
      return std::max(0.0, shape.slope - d_lim);
    }
    default:
      return std::nullopt;
  }
}

struct MalthusianSolution {
  double lambda_star = 0.0;
  double residual = kInf;
  std::optional<double> lambda_underline;
  std::size_t evaluations_used = 0;
};

// Root of mu_hat(lambda) = 1 by bracketing and bisection.
inline MalthusianSolution solve_malthusian(const RateModel& model, double tol = 1e-12) {
  MalthusianSolution sol;
  sol.lambda_underline = lambda_underline(model);
  if (!sol.lambda_underline) {
    std::cerr << "warning: no closed form for lambda_underline; skipping lambda* > lambda_underline check\n";
  }
  const double base = sol.lambda_underline.value_or(0.0);

  // mu_hat - 1, with divergence mapped to +inf.
  auto excess = [&](double lambda) -> double {
    ++sol.evaluations_used;
    const MuHat m = mu_hat(model, lambda, 0.25 * tol);
    if (m.kind == MuHat::Kind::diverges) return kInf;
    if (m.kind == MuHat::Kind::uncertain) {
      throw Error(Errc::no_bracket, "mu_hat(" + std::to_string(lambda) + ") could not be certified");
    }
    return m.value - 1.0;
  };

  double lo = base, hi = base;
  double lambda = base + 1.0;
  double f = excess(lambda);
  if (f > 0.0) {
    lo = lambda;
    int doublings = 0;
    while (f > 0.0) {
      if (++doublings > 64) throw Error(Errc::no_bracket, "mu_hat exceeds 1 for every tried lambda");
      lambda = base + 2.0 * (lambda - base);
      f = excess(lambda);
      (f > 0.0 ? lo : hi) = lambda;
    }
  } else if (f < 0.0) {
    hi = lambda;
    int halvings = 0;
    while (f < 0.0) {
      if (++halvings > 60) {
        throw Error(Errc::subcritical, "mu_hat stays below 1 above lambda_underline");
      }
      lambda = base + 0.5 * (lambda - base);
      f = excess(lambda);
      (f < 0.0 ? hi : lo) = lambda;
    }
  }
  if (f == 0.0) {
    sol.lambda_star = lambda;
    sol.residual = 0.0;
  } else {
    double best = lambda, best_res = std::abs(f);
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      const double fm = excess(mid);
      if (std::abs(fm) < best_res) {
        best = mid;
        best_res = std::abs(fm);
      }
      if (fm > 0.0) {
        lo = mid;
      } else {
        hi = mid;
      }
      if (best_res <= tol && (hi - lo) <= 1e-15 * hi) break;
    }
    sol.lambda_star = best;
    sol.residual = best_res;
  }
  if (sol.lambda_underline && !(sol.lambda_star > *sol.lambda_underline)) {
    throw Error(Errc::subcritical, "lambda* does not exceed lambda_underline");
  }
  return sol;
}

// ---------------------------------------------------------------------------
// Offspring law

// D = inf{i : B_i = 0}, an inhomogeneous geometric variable with
// P(D >= k) = prod_{i<k} b(i) / (b(i) + d(i)).
class OffspringDistribution {
 public:
  explicit OffspringDistribution(RateModel model) : model_(std::move(model)) {}
  OffspringDistribution(const OffspringDistribution& o) : model_(o.model_) {}
  OffspringDistribution& operator=(const OffspringDistribution&) = delete;

  const RateModel& model() const { return model_; }

  double log_tail(std::size_t k) const {
    ensure(k);
    std::shared_lock lock(mutex_);
    return log_tail_[k];
  }

  // P(D >= k)
  double tail(std::size_t k) const { return std::exp(log_tail(k)); }

  // P(D = k) from the closed form d(k)/(b(k)+d(k)) * P(D >= k).
  double pmf(std::size_t k) const { return model_.d(k) / model_.total(k) * tail(k); }

  double pmf_by_difference(std::size_t k) const { return tail(k) - tail(k + 1); }

  // P(D = inf); zero exactly when the finite-degree series diverges.
  double p_infinite() const {
    const Verdict fd = finite_degree(model_);
    if (fd == Verdict::holds) return 0.0;
    if (fd == Verdict::unknown) throw Error(Errc::uncertified, "finite-degree verdict unknown");
    if (model_.death.eventually_zero()) return tail(model_.death.explicit_prefix());
    constexpr std::size_t K = std::size_t{1} << 20;
    double log_p = log_tail(K);
    // Remainder of sum log(1 - x_i), x_i = d/(b+d), estimated from the tail growth.
    const double xK = model_.d(K) / model_.total(K);
    const auto gd = *model_.death.growth();
    const auto gs = dominant(*model_.birth.growth(), gd);
    if (gd.kind == Growth::Kind::poly && gs.kind == Growth::Kind::poly) {
      const double e = gs.exponent - gd.exponent;
      if (e > 1.0) log_p -= xK * static_cast<double>(K) / (e - 1.0);
    } else if (gd.kind == Growth::Kind::geometric_decay) {
      log_p -= xK;  // geometric remainder, bounded by xK / (1 - ratio)
    }
    return std::exp(log_p);
  }

 private:
  void ensure(std::size_t k) const {
    {
      std::shared_lock lock(mutex_);
      if (log_tail_.size() > k) return;
    }
    std::unique_lock lock(mutex_);
    const std::size_t have = log_tail_.size();
    if (have > k) return;
    const std::size_t target = std::max(k + 1, 2 * have);
    for (std::size_t i = have - 1; i + 1 < target; ++i) {
      acc_ += std::log1p(-static_cast<long double>(model_.d(i)) / model_.total(i));
      log_tail_.push_back(static_cast<double>(acc_));
    }
  }

  RateModel model_;
  mutable std::shared_mutex mutex_;
  mutable std::vector<double> log_tail_{0.0};
  mutable long double acc_ = 0.0L;
};

struct DTailReport {
  std::size_t k_max = 0;
  double min_slack = kInf;  // min over k of (bound - log P(D >= k))
  double max_slack = -kInf;
  std::size_t argmin = 0;
};

// Checks log P(D >= k) <= -rho1(k) - rho2(k)/2 for 1 <= k <= k_max.
inline DTailReport dtail_bound_check(const OffspringDistribution& dist, const DerivedSequences& seqs,
                                     std::size_t k_max) {
  if (k_max < 1) throw Error(Errc::out_of_range, "k_max must be >= 1");
  DTailReport rep;
  rep.k_max = k_max;
  for (std::size_t k = 1; k <= k_max; ++k) {
    const double lhs = dist.log_tail(k);
    const double rhs = -seqs.at_index(SequenceKind::rho1, k) - 0.5 * seqs.at_index(SequenceKind::rho2, k);
    const double slack = rhs - lhs;
    if (slack < -1e-12 * std::max(1.0, std::abs(rhs))) {
      throw Error(Errc::bound_violated, "P(D >= k) tail bound fails at k = " + std::to_string(k));
    }
    if (slack < rep.min_slack) {
      rep.min_slack = slack;
      rep.argmin = k;
    }
    rep.max_slack = std::max(rep.max_slack, slack);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Limiting degree distributions

enum class Population { alive, born };

struct DegreeDistribution {
  std::vector<double> p;    // p[k] for k <= k_max
  double tail_mass = 0.0;   // 1 - sum p
  std::size_t terms_used = 0;
};

// p_k^a (alive individuals) or p_k^b (all individuals) from the Laplace transforms of the
// characteristics at lambda*, with L_k(lambda) = prod_{i<k} (b+d)/(lambda+b+d):
//   chi_{k,a} = P(D>=k) L_k / (lambda + b(k) + d(k))
//   chi_{k,b} = P(D>=k) L_k [d(k)/(b+d) + b(k)/(b+d) * lambda/(lambda+b+d)] / lambda
inline DegreeDistribution limiting_degree_distribution(const MalthusianSolution& sol,
                                                       const RateModel& model, Population which,
                                                       std::size_t k_max, double tol = 1e-12,
                                                       std::size_t max_terms = std::size_t{1} << 26) {
  const double lambda = sol.lambda_star;
  if (!(lambda > 0.0)) throw Error(Errc::out_of_range, "lambda* must be positive");
  const std::size_t start = detail::certificate_start(model);
  std::vector<long double> chi;
  long double log_term = 0.0L;  // log of P(D>=k) L_k = prod_{i<k} b/(lambda+b+d)
  long double total = 0.0L;
  long double remainder = 0.0L;
  std::size_t checkpoint = 0;
  std::size_t k = 0;
  for (; k < max_terms; ++k) {
    const double b = model.b(k), d = model.d(k), s = b + d;
    const long double term = std::exp(log_term);
    long double c;
    if (which == Population::alive) {
      c = term / (lambda + s);
    } else {
      c = term * (d / s + (b / s) * (lambda / (lambda + s))) / lambda;
    }
    chi.push_back(c);
    total += c;
    log_term += std::log(static_cast<long double>(b)) - std::log(static_cast<long double>(lambda) + s);
    if (k < k_max) continue;
    if (which == Population::born) break;  // normalized exactly by 1/lambda
    if (k < start || k < checkpoint) continue;
    checkpoint = k + 1 + k / 16;
    // sum_{j>k} chi_j <= (sum_{j>k} term_j) / (lambda + inf_{j>k} s_j)
    const RemainderBounds rem = detail::product_series_remainder(model, lambda, k);
    const auto b_inf = model.birth.inf_from(k + 1);
    const auto d_inf = model.death.inf_from(k + 1);
    if (!std::isfinite(rem.hi) || !b_inf || !d_inf) continue;
    const long double bound = term * static_cast<long double>(rem.hi) / (lambda + *b_inf + *d_inf);
    if (bound <= 2.0L * tol * total) {
      remainder = 0.5L * bound;
      break;
    }
  }
  if (k == max_terms) throw Error(Errc::uncertified, "degree distribution tail not certified");
  DegreeDistribution out;
  out.terms_used = chi.size();
  const long double norm = which == Population::alive ? total + remainder : 1.0L / lambda;
  long double acc = 0.0L;
  for (std::size_t j = 0; j <= k_max; ++j) {
    const double v = j < chi.size() ? static_cast<double>(chi[j] / norm) : 0.0;
    out.p.push_back(v);
    acc += v;
  }
  out.tail_mass = static_cast<double>(1.0L - acc);
  return out;
}

// ---------------------------------------------------------------------------
// Predicted asymptotics

struct PredictedAsymptotics {
  enum class Case {
    none,
    converging_rates,        // b -> c, d -> d* > 0
    rich_die_young,          // liminf d > R
    infinite_degree,         // finite-degree series converges, b -> inf
    converging_death,        // d -> d* < R, b -> inf
  };
  Case which = Case::none;
  std::optional<double> O_exponent;       // lim log O_n / log n
  std::optional<double> I_exponent;       // lim log I_n / log n
  std::optional<double> maxdeg_over_log_n;
  // Second-order limits: (log X_n - centering(n)) / normalizer(n) -> limit.
  std::optional<double> log_O_limit;
  std::optional<double> log_I_limit;
  std::optional<double> maxdeg_phi1_limit;  // (phi1(maxdeg) - maxdeg_centering(n)) / normalizer(n)
  std::function<double(double)> normalizer;
  std::function<double(double)> centering;
  std::function<double(double)> maxdeg_centering;
};

inline std::string_view to_string(PredictedAsymptotics::Case c) {
  switch (c) {
    case PredictedAsymptotics::Case::none: return "none";
    case PredictedAsymptotics::Case::converging_rates: return "converging_rates";
    case PredictedAsymptotics::Case::rich_die_young: return "rich_die_young";
    case PredictedAsymptotics::Case::infinite_degree: return "infinite_degree";
    case PredictedAsymptotics::Case::converging_death: return "converging_death";
  }
  return "none";
}

// Whether sum (d(i) - d*)/(b(i) + d(i)) converges, from the death family.
inline bool alpha_converges(const RateModel& model) {
  if (!model.death.certified() || !model.d_star()) return false;
  const RateFamily& f = model.death.family().tail_family();
  if (std::holds_alternative<ConstantFamily>(f.variant())) return true;
  if (const auto* p = std::get_if<PowerFamily>(&f.variant())) return p->exponent == 0.0;
  if (const auto* g = std::get_if<GeometricFamily>(&f.variant())) return g->ratio <= 1.0;
  return false;
}

inline PredictedAsymptotics predicted_constants(
    const MalthusianSolution& sol, const std::shared_ptr<const DerivedSequences>& seqs,
    const RegimeReport& report, std::function<double(double)> r_func = {}) {
  PredictedAsymptotics out;
  const RateModel& model = seqs->model();
  const double lam = sol.lambda_star;
  const auto b_lim = model.birth.limit();
  const auto d_star = model.d_star();
  const auto b_inf = model.b_to_infinity();

  if (b_lim && std::isfinite(*b_lim) && d_star && *d_star > 0.0 && *b_lim > *d_star && report.R) {
    // Rescale time so that d -> 1; the discrete chain is unchanged.
    const double ls = lam / *d_star;
    const double M = std::min(1.0, *report.R / *d_star);
    out.which = PredictedAsymptotics::Case::converging_rates;
    out.O_exponent = M / (ls + M);
    out.I_exponent = 1.0 - ls / (2.0 * (ls + 1.0) * std::log(2.0));
    out.maxdeg_over_log_n = 1.0 / std::log(2.0);
    return out;
  }
  if (report.regime == Regime::rich_die_young && report.R) {
    out.which = PredictedAsymptotics::Case::rich_die_young;
    out.O_exponent = *report.R / (lam + *report.R);
    return out;
  }
  if (report.regime != Regime::rich_are_old || !b_inf || !*b_inf) return out;

  if (report.finite_degree == Verdict::fails) {
    out.which = PredictedAsymptotics::Case::infinite_degree;
    out.O_exponent = 0.0;
    if (report.diverging_variance == Verdict::holds) {
      out.log_I_limit = lam * lam / 2.0;
      out.maxdeg_phi1_limit = lam / 2.0;
      out.normalizer = [seqs, lam](double n) { return seqs->K(std::log(n) / lam); };
      out.centering = [](double) { return 0.0; };
      out.maxdeg_centering = [lam](double n) { return std::log(n) / lam; };
    }
    return out;
  }
  if (!d_star || !report.R || !(*d_star < *report.R)) return out;
  const double ds = *d_star;
  out.which = PredictedAsymptotics::Case::converging_death;
  out.O_exponent = ds / (lam + ds);
  out.I_exponent = ds / (lam + ds);
  if (report.diverging_variance != Verdict::holds) return out;
  if (!r_func) {
    if (!alpha_converges(model)) {
      throw Error(Errc::missing_r, "K_alpha is not certified convergent and no r(t) was supplied");
    }
    r_func = [lam, ds](double t) { return lam / (lam + ds) * t; };
  }
  out.log_O_limit = 0.0;
  out.log_I_limit = lam * (lam + ds) / 2.0;
  out.maxdeg_phi1_limit = (lam - ds) / 2.0;
  out.normalizer = [seqs, lam, ds](double n) { return seqs->K(std::log(n) / (lam + ds)); };
  out.centering = [seqs, lam, ds, r_func](double n) {
    return ds / (lam + ds) * std::log(n) + lam / (lam + ds) * seqs->K_alpha(r_func(std::log(n) / lam));
  };
  out.maxdeg_centering = [seqs, lam, ds, r_func](double n) {
    return std::log(n) / (lam + ds) - seqs->K_alpha(r_func(std::log(n) / lam)) / (lam + ds);
  };
  return out;
}

}  // namespace pavd
