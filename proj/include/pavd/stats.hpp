#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "pavd/error.hpp"

namespace pavd::stats {

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t dof = 0;
};

// Asymptotic Kolmogorov tail Q(x) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 x^2).
inline double kolmogorov_q(double x) {
  if (x < 1e-3) return 1.0;
  if (x < 1.18) {
    // small-x form via the theta-function identity
    const double y = std::exp(-1.2337005501361697 / (x * x));  // -pi^2/8
    const double s = y + std::pow(y, 9) + std::pow(y, 25) + std::pow(y, 49);
    return 1.0 - 2.5066282746310002 / x * s;  // sqrt(2 pi)
  }
  double sum = 0.0, sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    const double t = std::exp(-2.0 * j * j * x * x);
    sum += sign * t;
    if (t < 1e-18) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

// One-sample KS test; p-value with Stephens' correction sqrt(n) + 0.12 + 0.11/sqrt(n).
inline TestResult ks_test(std::vector<double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw Error(Errc::empty_input, "KS test needs samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  const double en = std::sqrt(n);
  return {d, kolmogorov_q((en + 0.12 + 0.11 / en) * d), 0};
}

inline double chi_square_sf(double x, double dof) {
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(dof / 2.0, x / 2.0);
}

// Pearson goodness of fit. Adjacent bins are pooled from the right until each
// expected count is at least min_expected.
inline TestResult chi_square_test(const std::vector<double>& observed, const std::vector<double>& expected_prob,
                                  double min_expected = 5.0) {
  if (observed.empty() || observed.size() != expected_prob.size()) {
    throw Error(Errc::empty_input, "chi-square test needs matching nonempty bins");
  }
  const double n = std::accumulate(observed.begin(), observed.end(), 0.0);
  std::vector<double> o, e;
  double acc_o = 0.0, acc_e = 0.0;
  for (std::size_t i = observed.size(); i-- > 0;) {
    acc_o += observed[i];
    acc_e += expected_prob[i] * n;
    if (acc_e >= min_expected) {
      o.push_back(acc_o);
      e.push_back(acc_e);
      acc_o = acc_e = 0.0;
    }
  }
  if (acc_e > 0.0 || acc_o > 0.0) {
    if (e.empty()) {
      o.push_back(acc_o);
      e.push_back(acc_e);
    } else {
      o.back() += acc_o;
      e.back() += acc_e;
    }
  }
  double stat = 0.0;
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (e[i] > 0.0) stat += (o[i] - e[i]) * (o[i] - e[i]) / e[i];
  }
  const std::size_t dof = o.size() > 1 ? o.size() - 1 : 1;
  return {stat, chi_square_sf(stat, static_cast<double>(dof)), dof};
}

// Total variation distance between two laws on a common discrete space.
template <class Key, class Cmp>
double tv_distance(const std::map<Key, double, Cmp>& p, const std::map<Key, double, Cmp>& q) {
  if (p.empty() && q.empty()) throw Error(Errc::empty_input, "TV distance of two empty laws");
  long double s = 0.0L;
  for (const auto& [k, v] : p) {
    const auto it = q.find(k);
    s += std::abs(v - (it == q.end() ? 0.0 : it->second));
  }
  for (const auto& [k, v] : q) {
    if (!p.count(k)) s += std::abs(v);
  }
  return static_cast<double>(0.5L * s);
}

struct Interval {
  double lo, hi;
};

inline Interval wilson_interval(double successes, double trials, double z = 1.959963984540054) {
  if (trials <= 0.0) return {0.0, 1.0};
  const double p = successes / trials;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / trials;
  const double centre = (p + z2 / (2.0 * trials)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

// Kendall's tau-b.
inline double kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(Errc::empty_input, "Kendall tau needs >= 2 pairs");
  long long conc = 0, disc = 0, tx = 0, ty = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0.0 && dy == 0.0) continue;
      if (dx == 0.0) {
        ++tx;
      } else if (dy == 0.0) {
        ++ty;
      } else if ((dx > 0.0) == (dy > 0.0)) {
        ++conc;
      } else {
        ++disc;
      }
    }
  }
  const double n0 = static_cast<double>(conc + disc);
  const double denom = std::sqrt((n0 + tx) * (n0 + ty));
  return denom > 0.0 ? static_cast<double>(conc - disc) / denom : 0.0;
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw Error(Errc::empty_input, "mean of nothing");
  return std::accumulate(v.begin(), v.end(), 0.0L) / static_cast<long double>(v.size());
}

// Sample standard deviation (n - 1).
inline double sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  long double s = 0.0L;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(static_cast<double>(s / (v.size() - 1)));
}

inline double standard_error(const std::vector<double>& v) {
  return v.empty() ? 0.0 : sd(v) / std::sqrt(static_cast<double>(v.size()));
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw Error(Errc::empty_input, "median of nothing");
  const std::size_t h = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + h, v.end());
  if (v.size() % 2) return v[h];
  const double hi = v[h];
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + h));
}

}  // namespace pavd::stats
