#pragma once

// Birth/death rate sequences, their derived prefix sums and the symbolic
// classification of the standard assumptions (non-explosion, diverging
// variance, finite degree) and of the rich-are-old / rich-die-young regimes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "pavd/error.hpp"

namespace pavd {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Which { birth, death };

// Asymptotic size of a sequence: zero, geometric decay, c * i^exponent * (log i)^log_power,
// or geometric growth. Ordered by size.
struct Growth {
  enum class Kind { zero, geometric_decay, poly, geometric_growth };
  Kind kind = Kind::zero;
  double exponent = 0.0;
  double log_power = 0.0;

  static constexpr Growth zero() { return {Kind::zero, 0.0, 0.0}; }
  static constexpr Growth constant() { return {Kind::poly, 0.0, 0.0}; }
  static constexpr Growth poly(double e, double l = 0.0) { return {Kind::poly, e, l}; }
  static constexpr Growth decay() { return {Kind::geometric_decay, 0.0, 0.0}; }
  static constexpr Growth explode() { return {Kind::geometric_growth, 0.0, 0.0}; }

  friend bool operator==(const Growth&, const Growth&) = default;
  friend bool operator<(const Growth& a, const Growth& b) {
    if (a.kind != b.kind) return a.kind < b.kind;
    if (a.kind != Kind::poly) return false;
    if (a.exponent != b.exponent) return a.exponent < b.exponent;
    return a.log_power < b.log_power;
  }
};

// Growth of a sum of two non-negative sequences.
inline Growth dominant(const Growth& a, const Growth& b) { return a < b ? b : a; }

inline Growth squared(const Growth& g) {
  if (g.kind != Growth::Kind::poly) return g;
  return Growth::poly(2.0 * g.exponent, 2.0 * g.log_power);
}

// Whether sum_i num(i)/den(i) diverges, decided from growth classes alone.
// nullopt when the classes do not determine the answer.
inline std::optional<bool> ratio_series_diverges(const Growth& num, const Growth& den) {
  using K = Growth::Kind;
  if (num.kind == K::zero) return false;
  if (den.kind == K::zero) return std::nullopt;
  if (num.kind == K::geometric_growth) {
    if (den.kind == K::geometric_growth) return std::nullopt;
    return true;
  }
  if (num.kind == K::geometric_decay) {
    if (den.kind == K::geometric_decay) return std::nullopt;
    return false;
  }
  // num is poly
  if (den.kind == K::geometric_decay) return true;
  if (den.kind == K::geometric_growth) return false;
  const double de = den.exponent - num.exponent;
  const double dl = den.log_power - num.log_power;
  if (de < 1.0) return true;
  if (de > 1.0) return false;
  return dl <= 1.0;
}

// ---------------------------------------------------------------------------
// Parametric families

struct ConstantFamily {
  double value;
};
struct AffineFamily {  // slope * i + intercept
  double slope;
  double intercept;
};
struct PowerFamily {  // scale * (i + 1)^exponent
  double scale;
  double exponent;
};
struct LogFamily {  // scale * log(i + shift)
  double scale;
  double shift;
};
struct GeometricFamily {  // scale * ratio^i
  double scale;
  double ratio;
};

class RateFamily;

// Explicit prefix followed by a tail family evaluated at the absolute index.
// Without a tail the last prefix value repeats, and nothing about the tail is certified.
struct TableFamily {
  std::vector<double> prefix;
  std::shared_ptr<const RateFamily> tail;
};

class RateFamily {
 public:
  using Variant = std::variant<ConstantFamily, AffineFamily, PowerFamily, LogFamily,
                               GeometricFamily, TableFamily>;

  RateFamily(ConstantFamily f) : v_(f) {}
  RateFamily(AffineFamily f) : v_(f) {}
  RateFamily(PowerFamily f) : v_(f) {}
  RateFamily(LogFamily f) : v_(f) {}
  RateFamily(GeometricFamily f) : v_(f) {}
  RateFamily(TableFamily f) : v_(std::move(f)) {}

  const Variant& variant() const { return v_; }

  double value(std::size_t i) const {
    const double x = static_cast<double>(i);
    return std::visit(
        [&](const auto& f) -> double {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, ConstantFamily>) {
            return f.value;
          } else if constexpr (std::is_same_v<T, AffineFamily>) {
            return f.slope * x + f.intercept;
          } else if constexpr (std::is_same_v<T, PowerFamily>) {
            return f.exponent == 0.0 ? f.scale : f.scale * std::pow(x + 1.0, f.exponent);
          } else if constexpr (std::is_same_v<T, LogFamily>) {
            return f.scale * std::log(x + f.shift);
          } else if constexpr (std::is_same_v<T, GeometricFamily>) {
            return f.ratio == 1.0 ? f.scale : f.scale * std::pow(f.ratio, x);
          } else {
            if (i < f.prefix.size()) return f.prefix[i];
            if (f.tail) return f.tail->value(i);
            return f.prefix.back();
          }
        },
        v_);
  }

  // Length of the explicit (table) prefix; 0 for pure families.
  std::size_t prefix_length() const {
    if (const auto* t = std::get_if<TableFamily>(&v_)) {
      return std::max(t->prefix.size(), t->tail ? t->tail->prefix_length() : std::size_t{0});
    }
    return 0;
  }

  bool certified() const {
    if (const auto* t = std::get_if<TableFamily>(&v_)) return t->tail && t->tail->certified();
    return true;
  }

  std::optional<Growth> growth() const {
    return std::visit(
        [](const auto& f) -> std::optional<Growth> {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, ConstantFamily>) {
            return f.value == 0.0 ? Growth::zero() : Growth::constant();
          } else if constexpr (std::is_same_v<T, AffineFamily>) {
            if (f.slope > 0.0) return Growth::poly(1.0);
            return f.intercept == 0.0 ? Growth::zero() : Growth::constant();
          } else if constexpr (std::is_same_v<T, PowerFamily>) {
            return Growth::poly(f.exponent);
          } else if constexpr (std::is_same_v<T, LogFamily>) {
            return Growth::poly(0.0, 1.0);
          } else if constexpr (std::is_same_v<T, GeometricFamily>) {
            if (f.scale == 0.0) return Growth::zero();
            if (f.ratio < 1.0) return Growth::decay();
            if (f.ratio == 1.0) return Growth::constant();
            return Growth::explode();
          } else {
            if (!f.tail) return std::nullopt;
            return f.tail->growth();
          }
        },
        v_);
  }

  // Limit as i -> infinity (may be +inf); nullopt when uncertified.
  std::optional<double> limit() const {
    return std::visit(
        [](const auto& f) -> std::optional<double> {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, ConstantFamily>) {
            return f.value;
          } else if constexpr (std::is_same_v<T, AffineFamily>) {
            return f.slope > 0.0 ? kInf : f.intercept;
          } else if constexpr (std::is_same_v<T, PowerFamily>) {
            return f.exponent > 0.0 ? kInf : f.scale;
          } else if constexpr (std::is_same_v<T, LogFamily>) {
            return kInf;
          } else if constexpr (std::is_same_v<T, GeometricFamily>) {
            if (f.scale == 0.0 || f.ratio < 1.0) return 0.0;
            return f.ratio == 1.0 ? f.scale : kInf;
          } else {
            if (!f.tail) return std::nullopt;
            return f.tail->limit();
          }
        },
        v_);
  }

  // Monotonicity of the family for indices >= prefix_length().
  bool non_decreasing_tail() const {
    return std::visit(
        [](const auto& f) -> bool {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, GeometricFamily>) {
            return f.ratio >= 1.0 || f.scale == 0.0;
          } else if constexpr (std::is_same_v<T, TableFamily>) {
            return f.tail && f.tail->non_decreasing_tail();
          } else {
            return true;
          }
        },
        v_);
  }

  bool non_increasing_tail() const {
    return std::visit(
        [](const auto& f) -> bool {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, ConstantFamily>) {
            return true;
          } else if constexpr (std::is_same_v<T, AffineFamily>) {
            return f.slope == 0.0;
          } else if constexpr (std::is_same_v<T, PowerFamily>) {
            return f.exponent == 0.0;
          } else if constexpr (std::is_same_v<T, LogFamily>) {
            return false;
          } else if constexpr (std::is_same_v<T, GeometricFamily>) {
            return f.ratio <= 1.0;
          } else {
            return f.tail && f.tail->non_increasing_tail();
          }
        },
        v_);
  }

  // The innermost non-table family.
  const RateFamily& tail_family() const {
    if (const auto* t = std::get_if<TableFamily>(&v_); t && t->tail) return t->tail->tail_family();
    return *this;
  }

 private:
  Variant v_;
};

// Shape of b(i) for large i, used to certify remainders of product series.
struct TailShape {
  enum class Kind { bounded, affine, sublinear, superlinear, unknown };
  Kind kind = Kind::unknown;
  double slope = 0.0;      // affine: b(i) = slope * i + intercept
  double intercept = 0.0;
  std::size_t from = 0;    // sublinear: b(i)/(i+1) non-increasing for i >= from
};

// One rate sequence: a family plus finitely many overridden indices.
class RateSequence {
 public:
  RateSequence(RateFamily family, std::map<std::size_t, double> overrides = {})
      : family_(std::move(family)), overrides_(std::move(overrides)) {}

  double operator()(std::size_t i) const {
    if (!overrides_.empty()) {
      if (auto it = overrides_.find(i); it != overrides_.end()) return it->second;
    }
    return family_.value(i);
  }

  const RateFamily& family() const { return family_; }
  const std::map<std::size_t, double>& overrides() const { return overrides_; }

  // Indices at or beyond this follow the (certified) tail family exactly.
  std::size_t explicit_prefix() const {
    std::size_t n = family_.prefix_length();
    if (!overrides_.empty()) n = std::max(n, overrides_.rbegin()->first + 1);
    return n;
  }

  bool certified() const { return family_.certified(); }
  std::optional<Growth> growth() const { return family_.growth(); }
  std::optional<double> limit() const { return family_.limit(); }

  // Eventually identically zero (exactly, not just in the limit).
  bool eventually_zero() const {
    const auto g = growth();
    return g && g->kind == Growth::Kind::zero;
  }

  // inf / sup of the sequence over indices >= k; nullopt when the tail is uncertified.
  std::optional<double> inf_from(std::size_t k) const { return extremum_from(k, true); }
  std::optional<double> sup_from(std::size_t k) const { return extremum_from(k, false); }

  TailShape tail_shape() const {
    TailShape s;
    if (!certified()) return s;
    const auto lim = limit();
    if (lim && std::isfinite(*lim)) {
      s.kind = TailShape::Kind::bounded;
      return s;
    }
    const RateFamily& f = family_.tail_family();
    if (const auto* a = std::get_if<AffineFamily>(&f.variant())) {
      s.kind = TailShape::Kind::affine;
      s.slope = a->slope;
      s.intercept = a->intercept;
    } else if (const auto* p = std::get_if<PowerFamily>(&f.variant())) {
      if (p->exponent == 1.0) {
        s.kind = TailShape::Kind::affine;
        s.slope = p->scale;
        s.intercept = p->scale;
      } else if (p->exponent < 1.0) {
        s.kind = TailShape::Kind::sublinear;
      } else {
        s.kind = TailShape::Kind::superlinear;
      }
    } else if (const auto* l = std::get_if<LogFamily>(&f.variant())) {
      s.kind = TailShape::Kind::sublinear;
      // log(x + shift)/(x + 1) is non-increasing once x + shift >= e and shift >= 1.
      const double start = std::max(0.0, std::ceil(std::exp(1.0) - l->shift));
      s.from = static_cast<std::size_t>(start);
    } else {
      s.kind = TailShape::Kind::superlinear;
    }
    s.from = std::max(s.from, explicit_prefix());
    return s;
  }

 private:
  std::optional<double> extremum_from(std::size_t k, bool want_inf) const {
    if (!certified()) return std::nullopt;
    const std::size_t start = explicit_prefix();
    double best = want_inf ? kInf : -kInf;
    auto take = [&](double v) { best = want_inf ? std::min(best, v) : std::max(best, v); };
    for (std::size_t i = k; i < start; ++i) take((*this)(i));
    const std::size_t from = std::max(k, start);
    const double at = family_.value(from);
    const auto lim = *limit();
    if (family_.non_decreasing_tail()) {
      take(want_inf ? at : lim);
    } else if (family_.non_increasing_tail()) {
      take(want_inf ? lim : at);
    } else {
      return std::nullopt;
    }
    return best;
  }

  RateFamily family_;
  std::map<std::size_t, double> overrides_;
};

struct RateModel {
  RateSequence birth;
  RateSequence death;
  std::optional<double> declared_d_star;
  std::optional<bool> declared_b_to_infinity;

  RateModel(RateSequence b, RateSequence d, std::optional<double> d_star = std::nullopt,
            std::optional<bool> b_to_infinity = std::nullopt)
      : birth(std::move(b)),
        death(std::move(d)),
        declared_d_star(d_star),
        declared_b_to_infinity(b_to_infinity) {
    validate();
  }

  double rate_at(Which which, std::size_t i) const {
    return which == Which::birth ? birth(i) : death(i);
  }
  double b(std::size_t i) const { return birth(i); }
  double d(std::size_t i) const { return death(i); }
  double total(std::size_t i) const { return birth(i) + death(i); }

  // lim d(i) when finite: declared, or certified by the death family.
  std::optional<double> d_star() const {
    if (declared_d_star) return declared_d_star;
    const auto lim = death.limit();
    if (lim && std::isfinite(*lim)) return lim;
    return std::nullopt;
  }

  std::optional<bool> b_to_infinity() const {
    if (const auto lim = birth.limit()) return std::isinf(*lim);
    return declared_b_to_infinity;
  }

  // First index after which both sequences follow their tail families.
  std::size_t explicit_prefix() const {
    return std::max(birth.explicit_prefix(), death.explicit_prefix());
  }

  bool certified() const { return birth.certified() && death.certified(); }

 private:
  void validate() const;
};

namespace detail {

inline void validate_family(const RateFamily& family, Which which, const std::string& where) {
  const bool is_birth = which == Which::birth;
  auto fail = [&](const std::string& msg) { throw Error(Errc::invalid_model, where + ": " + msg); };
  auto check_value = [&](double v, const std::string& what) {
    if (!std::isfinite(v)) fail(what + " must be finite");
    if (is_birth ? !(v > 0.0) : !(v >= 0.0)) fail(what + (is_birth ? " must be > 0" : " must be >= 0"));
  };
  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ConstantFamily>) {
          check_value(f.value, "constant value");
        } else if constexpr (std::is_same_v<T, AffineFamily>) {
          if (!(f.slope >= 0.0) || !std::isfinite(f.slope)) fail("affine slope must be >= 0");
          check_value(f.intercept, "affine intercept");
        } else if constexpr (std::is_same_v<T, PowerFamily>) {
          if (!(f.scale > 0.0) || !std::isfinite(f.scale)) fail("power scale must be > 0");
          if (!(f.exponent >= 0.0) || !std::isfinite(f.exponent)) fail("power exponent must be >= 0");
        } else if constexpr (std::is_same_v<T, LogFamily>) {
          if (!(f.scale > 0.0) || !std::isfinite(f.scale)) fail("log scale must be > 0");
          if (is_birth ? !(f.shift > 1.0) : !(f.shift >= 1.0)) {
            fail(is_birth ? "log shift must be > 1" : "log shift must be >= 1");
          }
        } else if constexpr (std::is_same_v<T, GeometricFamily>) {
          check_value(f.scale, "geometric scale");
          if (!(f.ratio > 0.0) || !std::isfinite(f.ratio)) fail("geometric ratio must be > 0");
        } else {
          if (f.prefix.empty()) fail("table prefix must be nonempty");
          for (std::size_t i = 0; i < f.prefix.size(); ++i) {
            check_value(f.prefix[i], "table value " + std::to_string(i));
          }
          if (f.tail) validate_family(*f.tail, which, where + ".tail");
        }
      },
      family.variant());
}

}  // namespace detail

inline void RateModel::validate() const {
  detail::validate_family(birth.family(), Which::birth, "b");
  detail::validate_family(death.family(), Which::death, "d");
  for (const auto& [i, v] : birth.overrides()) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw Error(Errc::invalid_model, "b override at " + std::to_string(i) + " must be > 0");
    }
  }
  for (const auto& [i, v] : death.overrides()) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error(Errc::invalid_model, "d override at " + std::to_string(i) + " must be >= 0");
    }
  }
  if (declared_d_star) {
    const auto lim = death.limit();
    if (lim && !(std::abs(*lim - *declared_d_star) <= 1e-12 * std::max(1.0, std::abs(*lim)))) {
      throw Error(Errc::invalid_model, "declared d_star " + std::to_string(*declared_d_star) +
                                           " differs from the death family limit " +
                                           std::to_string(*lim));
    }
  }
  if (declared_b_to_infinity) {
    const auto lim = birth.limit();
    if (lim && std::isinf(*lim) != *declared_b_to_infinity) {
      throw Error(Errc::invalid_model, "declared b_to_infinity contradicts the birth family");
    }
  }
}

// ---------------------------------------------------------------------------
// Derived sequences

enum class SequenceKind { phi1, phi2, rho1, rho2, alpha };

struct InfimumRate {
  double value;
  std::optional<std::size_t> attained_at;
};

enum class Verdict { holds, fails, unknown };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::holds: return "holds";
    case Verdict::fails: return "fails";
    case Verdict::unknown: return "unknown";
  }
  return "unknown";
}

enum class Regime { rich_are_old, rich_die_young, boundary, unknown };

inline std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::rich_are_old: return "RichAreOld";
    case Regime::rich_die_young: return "RichDieYoung";
    case Regime::boundary: return "Boundary";
    case Regime::unknown: return "Unknown";
  }
  return "Unknown";
}

struct RegimeReport {
  Verdict non_explosion = Verdict::unknown;      // sum 1/(b+d) = inf
  Verdict diverging_variance = Verdict::unknown;  // sum 1/(b+d)^2 = inf
  Verdict finite_degree = Verdict::unknown;       // sum d/(b+d) = inf
  std::optional<double> R;
  std::optional<double> d_star;
  std::optional<double> liminf_d;
  Regime regime = Regime::unknown;
};

namespace detail {
inline Verdict to_verdict(std::optional<bool> v) {
  if (!v) return Verdict::unknown;
  return *v ? Verdict::holds : Verdict::fails;
}
}  // namespace detail

inline Verdict non_explosion(const RateModel& m) {
  const auto gb = m.birth.growth();
  const auto gd = m.death.growth();
  if (!gb || !gd) return Verdict::unknown;
  return detail::to_verdict(ratio_series_diverges(Growth::constant(), dominant(*gb, *gd)));
}

inline Verdict diverging_variance(const RateModel& m) {
  const auto gb = m.birth.growth();
  const auto gd = m.death.growth();
  if (!gb || !gd) return Verdict::unknown;
  return detail::to_verdict(ratio_series_diverges(Growth::constant(), squared(dominant(*gb, *gd))));
}

inline Verdict finite_degree(const RateModel& m) {
  const auto gb = m.birth.growth();
  const auto gd = m.death.growth();
  if (!gb || !gd) return Verdict::unknown;
  return detail::to_verdict(ratio_series_diverges(*gd, dominant(*gb, *gd)));
}

// Memoized prefix sums phi1, phi2, rho1, rho2, alpha and the running supremum of d.
// Safe for concurrent use: growth happens under an exclusive lock, reads under a shared one.
class DerivedSequences {
 public:
  static constexpr std::size_t kDefaultMaxIndex = std::size_t{1} << 24;
  static constexpr std::size_t kInfimumScan = 10000;

  explicit DerivedSequences(RateModel model, std::size_t max_index = kDefaultMaxIndex)
      : model_(std::move(model)), max_index_(max_index), memo_(std::make_unique<Memo>()) {
    finite_degree_ = finite_degree(model_);
    if (const auto ds = model_.d_star()) {
      alpha_shift_ = *ds;
    } else if (finite_degree_ == Verdict::fails) {
      alpha_shift_ = 0.0;  // rho1 converges, alpha := rho1
    }
  }

  DerivedSequences(const DerivedSequences& other)
      : DerivedSequences(other.model_, other.max_index_) {}
  DerivedSequences& operator=(const DerivedSequences&) = delete;

  const RateModel& model() const { return model_; }
  bool alpha_defined() const { return alpha_shift_.has_value(); }

  // Exact prefix sum over indices 0..k-1.
  double at_index(SequenceKind kind, std::size_t k) const {
    if (kind == SequenceKind::alpha && !alpha_shift_) {
      throw Error(Errc::alpha_undefined, "no limit d* and convergence of rho1 not certified");
    }
    ensure(k);
    std::shared_lock lock(memo_->mutex);
    return column(kind)[k];
  }

  // Piecewise-linear extension to real arguments.
  double operator()(SequenceKind kind, double t) const {
    if (!(t >= 0.0)) throw Error(Errc::out_of_range, "derived sequence argument must be >= 0");
    const double fl = std::floor(t);
    if (fl >= static_cast<double>(max_index_)) {
      throw Error(Errc::out_of_range, "argument beyond memoization capacity");
    }
    const auto k = static_cast<std::size_t>(fl);
    const double lo = at_index(kind, k);
    if (t == fl) return lo;
    const double hi = at_index(kind, k + 1);
    return lo + (t - fl) * (hi - lo);
  }

  double phi1(double t) const { return (*this)(SequenceKind::phi1, t); }
  double phi2(double t) const { return (*this)(SequenceKind::phi2, t); }
  double rho1(double t) const { return (*this)(SequenceKind::rho1, t); }
  double rho2(double t) const { return (*this)(SequenceKind::rho2, t); }
  double alpha(double t) const { return (*this)(SequenceKind::alpha, t); }

  // sup_{j <= i} d(j)
  double dbar(std::size_t i) const {
    ensure(i + 1);
    std::shared_lock lock(memo_->mutex);
    return memo_->dbar[i];
  }

  // Unique s with phi1(s) = t on the piecewise-linear extension.
  double phi1_inverse(double t) const {
    if (!(t >= 0.0)) throw Error(Errc::out_of_range, "phi1_inverse argument must be >= 0");
    if (t == 0.0) return 0.0;
    std::size_t hi = 64;
    while (at_index(SequenceKind::phi1, hi) < t) {
      if (hi >= max_index_) {
        throw Error(Errc::out_of_range,
                    "phi1 does not reach " + std::to_string(t) + " within the certified range");
      }
      hi = std::min(max_index_, hi * 2);
    }
    std::size_t lo = 0;  // invariant: phi1(lo) <= t <= phi1(hi)
    std::shared_lock lock(memo_->mutex);
    const auto& p = memo_->phi1;
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      (p[mid] <= t ? lo : hi) = mid;
    }
    const double slope = p[lo + 1] - p[lo];
    return static_cast<double>(lo) + std::min(1.0, (t - p[lo]) / slope);
  }

  double K(double t) const { return phi2(phi1_inverse(t)); }
  double K_alpha(double t) const {
    if (!alpha_shift_) throw Error(Errc::alpha_undefined, "K_alpha requires alpha");
    return alpha(phi1_inverse(t));
  }

  // R = inf_i (b(i) + d(i)) over a scanned prefix combined with a monotone tail certificate.
  InfimumRate infimum_rate() const {
    const std::size_t scan = std::max(kInfimumScan, model_.explicit_prefix() + 1);
    double best = kInf;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < scan; ++i) {
      const double v = model_.total(i);
      if (v < best) {
        best = v;
        arg = i;
      }
    }
    const auto bi = model_.birth.inf_from(scan);
    const auto di = model_.death.inf_from(scan);
    if (!bi || !di) throw Error(Errc::uncertified, "rate tail has no monotone certificate");
    const double tail_lb = *bi + *di;
    if (tail_lb >= best) return {best, arg};
    if (model_.birth.family().non_increasing_tail() && model_.death.family().non_increasing_tail()) {
      return {tail_lb, std::nullopt};
    }
    throw Error(Errc::uncertified, "tail lower bound below the scanned minimum");
  }

 private:
  struct Memo {
    mutable std::shared_mutex mutex;
    std::vector<double> phi1{0.0}, phi2{0.0}, rho1{0.0}, rho2{0.0}, alpha{0.0};
    std::vector<double> dbar;
    long double acc[5] = {0, 0, 0, 0, 0};
    double running_sup = -kInf;
  };

  const std::vector<double>& column(SequenceKind kind) const {
    switch (kind) {
      case SequenceKind::phi1: return memo_->phi1;
      case SequenceKind::phi2: return memo_->phi2;
      case SequenceKind::rho1: return memo_->rho1;
      case SequenceKind::rho2: return memo_->rho2;
      case SequenceKind::alpha: return memo_->alpha;
    }
    return memo_->phi1;
  }

  // Makes prefix sums available for indices 0..k.
  void ensure(std::size_t k) const {
    {
      std::shared_lock lock(memo_->mutex);
      if (memo_->phi1.size() > k) return;
    }
    if (k > max_index_) throw Error(Errc::out_of_range, "index beyond memoization capacity");
    std::unique_lock lock(memo_->mutex);
    Memo& m = *memo_;
    std::size_t have = m.phi1.size() - 1;  // sums known for 0..have
    if (have >= k) return;
    const std::size_t target = std::min(max_index_, std::max(k, 2 * have + 64));
    const double shift = alpha_shift_.value_or(0.0);
    for (std::size_t i = have; i < target; ++i) {
      const double b = model_.b(i);
      const double d = model_.d(i);
      const double inv = 1.0 / (b + d);
      const double q = d * inv;
      m.acc[0] += inv;
      m.acc[1] += inv * inv;
      m.acc[2] += q;
      m.acc[3] += q * q;
      m.acc[4] += (d - shift) * inv;
      m.phi1.push_back(static_cast<double>(m.acc[0]));
      m.phi2.push_back(static_cast<double>(m.acc[1]));
      m.rho1.push_back(static_cast<double>(m.acc[2]));
      m.rho2.push_back(static_cast<double>(m.acc[3]));
      m.alpha.push_back(static_cast<double>(m.acc[4]));
      m.running_sup = std::max(m.running_sup, d);
      m.dbar.push_back(m.running_sup);
    }
  }

  RateModel model_;
  std::size_t max_index_;
  std::unique_ptr<Memo> memo_;
  Verdict finite_degree_ = Verdict::unknown;
  std::optional<double> alpha_shift_;
};

inline RegimeReport assumption_report(const RateModel& m) {
  RegimeReport r;
  r.non_explosion = non_explosion(m);
  r.diverging_variance = diverging_variance(m);
  r.finite_degree = finite_degree(m);
  r.d_star = m.d_star();
  if (m.certified()) r.liminf_d = m.death.limit();
  try {
    r.R = DerivedSequences(m).infimum_rate().value;
  } catch (const Error&) {
    r.R.reset();
  }
  if (!r.R) return r;
  if (r.liminf_d && *r.liminf_d > *r.R) {
    r.regime = Regime::rich_die_young;
  } else if (r.finite_degree == Verdict::fails || (r.d_star && *r.d_star < *r.R)) {
    r.regime = Regime::rich_are_old;
  } else if (r.liminf_d && *r.liminf_d == *r.R) {
    r.regime = Regime::boundary;
  }
  return r;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) ==
        allowed.end()) {
      throw Error(Errc::parse_error, where + ": unknown key '" + key + "'");
    }
  }
}

inline double number_field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw Error(Errc::parse_error, where + ": missing '" + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number()) throw Error(Errc::parse_error, where + "." + key + ": expected a number");
  return v.get<double>();
}

inline RateFamily family_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw Error(Errc::parse_error, where + ": expected an object");
  if (!j.contains("family") || !j.at("family").is_string()) {
    throw Error(Errc::parse_error, where + ": missing string 'family'");
  }
  const auto name = j.at("family").get<std::string>();
  if (name == "constant") {
    reject_unknown_keys(j, {"family", "value", "overrides"}, where);
    return ConstantFamily{number_field(j, "value", where)};
  }
  if (name == "affine") {
    reject_unknown_keys(j, {"family", "slope", "intercept", "overrides"}, where);
    return AffineFamily{number_field(j, "slope", where), number_field(j, "intercept", where)};
  }
  if (name == "power") {
    reject_unknown_keys(j, {"family", "scale", "exponent", "overrides"}, where);
    return PowerFamily{number_field(j, "scale", where), number_field(j, "exponent", where)};
  }
  if (name == "log") {
    reject_unknown_keys(j, {"family", "scale", "shift", "overrides"}, where);
    return LogFamily{number_field(j, "scale", where), number_field(j, "shift", where)};
  }
  if (name == "geometric") {
    reject_unknown_keys(j, {"family", "scale", "ratio", "overrides"}, where);
    return GeometricFamily{number_field(j, "scale", where), number_field(j, "ratio", where)};
  }
  if (name == "table") {
    reject_unknown_keys(j, {"family", "values", "tail", "overrides"}, where);
    if (!j.contains("values") || !j.at("values").is_array()) {
      throw Error(Errc::parse_error, where + ": table needs an array 'values'");
    }
    TableFamily t;
    for (const auto& v : j.at("values")) {
      if (!v.is_number()) throw Error(Errc::parse_error, where + ".values: expected numbers");
      t.prefix.push_back(v.get<double>());
    }
    if (j.contains("tail")) {
      t.tail = std::make_shared<const RateFamily>(family_from_json(j.at("tail"), where + ".tail"));
    }
    return t;
  }
  throw Error(Errc::parse_error, where + ": unknown family '" + name + "'");
}

inline RateSequence sequence_from_json(const nlohmann::json& j, const std::string& where) {
  std::map<std::size_t, double> overrides;
  if (j.is_object() && j.contains("overrides")) {
    const auto& o = j.at("overrides");
    if (!o.is_object()) throw Error(Errc::parse_error, where + ".overrides: expected an object");
    for (const auto& [key, value] : o.items()) {
      std::size_t idx = 0;
      try {
        std::size_t used = 0;
        const long long parsed = std::stoll(key, &used);
        if (used != key.size() || parsed < 0) throw std::invalid_argument(key);
        idx = static_cast<std::size_t>(parsed);
      } catch (const std::exception&) {
        throw Error(Errc::parse_error, where + ".overrides: bad index '" + key + "'");
      }
      if (!value.is_number()) throw Error(Errc::parse_error, where + ".overrides: expected numbers");
      overrides[idx] = value.get<double>();
    }
  }
  return RateSequence(family_from_json(j, where), std::move(overrides));
}

inline nlohmann::json family_to_json(const RateFamily& family) {
  return std::visit(
      [](const auto& f) -> nlohmann::json {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ConstantFamily>) {
          return {{"family", "constant"}, {"value", f.value}};
        } else if constexpr (std::is_same_v<T, AffineFamily>) {
          return {{"family", "affine"}, {"slope", f.slope}, {"intercept", f.intercept}};
        } else if constexpr (std::is_same_v<T, PowerFamily>) {
          return {{"family", "power"}, {"scale", f.scale}, {"exponent", f.exponent}};
        } else if constexpr (std::is_same_v<T, LogFamily>) {
          return {{"family", "log"}, {"scale", f.scale}, {"shift", f.shift}};
        } else if constexpr (std::is_same_v<T, GeometricFamily>) {
          return {{"family", "geometric"}, {"scale", f.scale}, {"ratio", f.ratio}};
        } else {
          nlohmann::json j = {{"family", "table"}, {"values", f.prefix}};
          if (f.tail) j["tail"] = family_to_json(*f.tail);
          return j;
        }
      },
      family.variant());
}

inline nlohmann::json sequence_to_json(const RateSequence& s) {
  auto j = family_to_json(s.family());
  if (!s.overrides().empty()) {
    nlohmann::json o = nlohmann::json::object();
    for (const auto& [i, v] : s.overrides()) o[std::to_string(i)] = v;
    j["overrides"] = o;
  }
  return j;
}

}  // namespace detail

inline RateModel model_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::parse_error, "rate model: expected an object");
  detail::reject_unknown_keys(j, {"b", "d", "d_star", "b_to_infinity", "name"}, "rate model");
  if (!j.contains("b") || !j.contains("d")) {
    throw Error(Errc::parse_error, "rate model: both 'b' and 'd' are required");
  }
  std::optional<double> d_star;
  if (j.contains("d_star")) d_star = detail::number_field(j, "d_star", "rate model");
  std::optional<bool> b_inf;
  if (j.contains("b_to_infinity")) {
    if (!j.at("b_to_infinity").is_boolean()) {
      throw Error(Errc::parse_error, "rate model.b_to_infinity: expected a boolean");
    }
    b_inf = j.at("b_to_infinity").get<bool>();
  }
  return RateModel(detail::sequence_from_json(j.at("b"), "b"),
                   detail::sequence_from_json(j.at("d"), "d"), d_star, b_inf);
}

inline nlohmann::json model_to_json(const RateModel& m) {
  nlohmann::json j = {{"b", detail::sequence_to_json(m.birth)},
                      {"d", detail::sequence_to_json(m.death)}};
  if (m.declared_d_star) j["d_star"] = *m.declared_d_star;
  if (m.declared_b_to_infinity) j["b_to_infinity"] = *m.declared_b_to_infinity;
  return j;
}

// ---------------------------------------------------------------------------
// Named models used throughout the tests and the shipped configs.

namespace models {

inline RateModel constant(double b, double d) {
  return RateModel(RateSequence(ConstantFamily{b}), RateSequence(ConstantFamily{d}));
}

// b = (1, 2, 3, ...), d = (1, 2, 3/2, 3/2, ...)
inline RateModel rich_are_old() {
  return RateModel(RateSequence(AffineFamily{1.0, 1.0}),
                   RateSequence(TableFamily{{1.0, 2.0}, std::make_shared<const RateFamily>(
                                                            ConstantFamily{1.5})}),
                   1.5, true);
}

// As rich_are_old with d(0) = 1/4.
inline RateModel rich_die_young_1() {
  return RateModel(RateSequence(AffineFamily{1.0, 1.0}),
                   RateSequence(TableFamily{{1.0, 2.0}, std::make_shared<const RateFamily>(
                                                            ConstantFamily{1.5})},
                                {{0, 0.25}}),
                   1.5, true);
}

// As rich_are_old with b(0) = 1/4.
inline RateModel rich_die_young_2() {
  return RateModel(RateSequence(AffineFamily{1.0, 1.0}, {{0, 0.25}}),
                   RateSequence(TableFamily{{1.0, 2.0}, std::make_shared<const RateFamily>(
                                                            ConstantFamily{1.5})}),
                   1.5, true);
}

}  // namespace models

}  // namespace pavd
