#pragma once

// Continuous-time embedding: every individual with i children carries one
// pending event at rate b(i) + d(i); when it fires, it is a birth with
// probability b(i)/(b(i)+d(i)) and a death otherwise. The n-th event happens at
// tau_n, and the alive population at tau_n has the law of the discrete chain at
// step n + 1.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <queue>
#include <vector>

#include "pavd/degree_classes.hpp"
#include "pavd/discrete.hpp"
#include "pavd/error.hpp"
#include "pavd/random.hpp"
#include "pavd/rates.hpp"

namespace pavd {

struct ContinuousObservables {
  double t = 0.0;
  double O_cont = 0.0;  // birth time of the oldest alive individual
  double I_cont = 0.0;  // smallest birth time among alive individuals of maximal degree
  std::uint32_t max_children = 0;
  std::uint64_t alive_count = 0;
  double W_hat = 0.0;   // alive_count * exp(-lambda* t)
};

class BPState {
 public:
  using Id = std::uint32_t;
  static constexpr std::uint64_t kDefaultCap = 100'000'000;

  explicit BPState(std::shared_ptr<const RateModel> model, std::uint64_t alive_cap = kDefaultCap)
      : model_(std::move(model)),
        alive_cap_(alive_cap),
        classes_([m = model_](std::size_t c) { return m->total(c); }) {}

  BPState(const RateModel& model, std::uint64_t alive_cap = kDefaultCap)
      : BPState(std::make_shared<const RateModel>(model), alive_cap) {}

  // Creates the root at time 0 and schedules its first event.
  void init(Rng& rng) {
    add_individual(0.0, 0, 1);
    schedule_next(0, rng);
  }

  const RateModel& model() const { return *model_; }
  double t() const { return t_; }
  std::uint64_t N() const { return births_ + deaths_; }
  std::uint64_t births() const { return births_; }
  std::uint64_t deaths() const { return deaths_; }
  std::size_t alive_count() const { return classes_.size(); }
  bool extinct() const { return classes_.empty(); }
  const std::vector<double>& tau() const { return tau_; }
  void record_tau(bool on) { record_tau_ = on; }

  std::size_t size() const { return birth_time_.size(); }
  double birth_time(Id v) const { return birth_time_[v]; }
  std::optional<double> death_time(Id v) const {
    if (alive_[v]) return std::nullopt;
    return death_time_[v];
  }
  Id parent(Id v) const { return parent_[v]; }
  Label label(Id v) const { return label_[v]; }
  std::uint32_t degree(Id v) const { return degree_[v]; }
  bool alive(Id v) const { return alive_[v]; }

  // Pushes the single pending event of v at t + Exp(b(i) + d(i)).
  double schedule_next(Id v, Rng& rng) {
    const double when = t_ + rng.exponential(model_->total(degree_[v]));
    queue_.push({when, v});
    return when;
  }

  // Pops events until N = n or extinction; returns whether the population survived.
  bool run_until_events(std::uint64_t n, Rng& rng) {
    if (n < 1) throw Error(Errc::out_of_range, "n must be >= 1");
    while (N() < n && !extinct()) pop(rng);
    return !extinct();
  }

  // Pops every event with time <= t_end.
  void run_until_time(double t_end, Rng& rng) {
    if (t_end < t_) throw Error(Errc::out_of_range, "t_end is behind the clock");
    while (!queue_.empty() && queue_.top().time <= t_end) pop(rng);
    t_ = t_end;
  }

  ContinuousObservables continuous_observables(double lambda_star) const {
    if (extinct()) throw Error(Errc::extinct, "no alive individuals");
    ContinuousObservables o;
    o.t = t_;
    o.alive_count = alive_count();
    o.O_cont = birth_time_[oldest_];
    const std::size_t top = classes_.max_class();
    const auto& m = classes_.members(top);
    o.I_cont = birth_time_[*std::min_element(m.begin(), m.end())];
    o.max_children = static_cast<std::uint32_t>(top);
    o.W_hat = static_cast<double>(o.alive_count) * std::exp(-lambda_star * t_);
    return o;
  }

  // The same observables as the discrete chain, in labels (step index n = N + 1).
  std::optional<Observables> discrete_observables() const {
    if (extinct()) return std::nullopt;
    Observables o;
    o.n = N() + 1;
    o.alive_count = alive_count();
    o.O = label_[oldest_];
    const std::size_t top = classes_.max_class();
    const auto& m = classes_.members(top);
    o.I = label_[*std::min_element(m.begin(), m.end())];
    o.max_deg_alive = static_cast<std::uint32_t>(top);
    o.max_deg_all = max_deg_all_;
    return o;
  }

 private:
  struct Event {
    double time;
    Id id;
    bool operator>(const Event& o) const { return time > o.time; }
  };

  Id add_individual(double when, Id parent, Label label) {
    const Id v = static_cast<Id>(birth_time_.size());
    birth_time_.push_back(when);
    death_time_.push_back(std::numeric_limits<double>::quiet_NaN());
    parent_.push_back(parent);
    label_.push_back(label);
    degree_.push_back(0);
    alive_.push_back(1);
    classes_.insert(v, 0);
    if (classes_.size() > alive_cap_) {
      throw Error(Errc::population_explosion, "alive population exceeded " + std::to_string(alive_cap_));
    }
    return v;
  }

  void pop(Rng& rng) {
    const Event e = queue_.top();
    queue_.pop();
    if (!(e.time > t_) && N() > 0) {
      throw Error(Errc::bound_violated, "event times must strictly increase");
    }
    t_ = e.time;
    const Id v = e.id;
    const std::uint32_t i = degree_[v];
    const double d = model_->d(i);
    const bool death = d > 0.0 && rng.uniform() * model_->total(i) < d;
    if (death) {
      ++deaths_;
      alive_[v] = 0;
      death_time_[v] = t_;
      classes_.erase(v, i);
      while (oldest_ < alive_.size() && !alive_[oldest_]) ++oldest_;
    } else {
      ++births_;
      degree_[v] = i + 1;
      max_deg_all_ = std::max(max_deg_all_, i + 1);
      classes_.move(v, i, i + 1);
      const Id child = add_individual(t_, v, static_cast<Label>(N() + 1));
      schedule_next(v, rng);
      schedule_next(child, rng);
    }
    if (record_tau_) tau_.push_back(t_);
  }

  std::shared_ptr<const RateModel> model_;
  std::uint64_t alive_cap_;
  DegreeClassSampler classes_;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue_;
  std::vector<double> birth_time_, death_time_;
  std::vector<Id> parent_;
  std::vector<Label> label_;
  std::vector<std::uint32_t> degree_;
  std::vector<std::uint8_t> alive_;
  std::vector<double> tau_;
  bool record_tau_ = true;
  double t_ = 0.0;
  std::uint64_t births_ = 0, deaths_ = 0;
  Id oldest_ = 0;
  std::uint32_t max_deg_all_ = 0;
};

// ---------------------------------------------------------------------------
// Standalone samplers for one individual's offspring process.

struct OffspringSample {
  std::optional<std::uint64_t> D;  // nullopt: infinitely many children
  std::vector<double> S;           // birth offsets S_1 < S_2 < ..., at most k_cap of them
  double L = std::numeric_limits<double>::infinity();
};

namespace detail {

// Index from which, at chain position i, no further death can occur (up to 1e-13).
class ImmortalityTest {
 public:
  explicit ImmortalityTest(const RateModel& m) : m_(m) {
    if (finite_degree(m) != Verdict::fails) return;
    active_ = true;
    if (m.death.eventually_zero()) zero_from_ = m.death.explicit_prefix();
    const RateFamily& f = m.death.family().tail_family();
    if (const auto* g = std::get_if<GeometricFamily>(&f.variant()); g && g->ratio < 1.0) ratio_ = g->ratio;
  }

  bool immortal(std::uint64_t i) const {
    if (!active_) return false;
    if (zero_from_ && i >= *zero_from_) return true;
    if (i >= kHardCap) return true;
    if (ratio_ > 0.0 && i >= m_.explicit_prefix() && (i & 15) == 0) {
      const auto b_inf = m_.birth.inf_from(i);
      if (b_inf && *b_inf > 0.0 && m_.d(i) / (*b_inf * (1.0 - ratio_)) < 1e-13) return true;
    }
    return false;
  }

  static constexpr std::uint64_t kHardCap = 10'000'000;

 private:
  const RateModel& m_;
  bool active_ = false;
  std::optional<std::uint64_t> zero_from_;
  double ratio_ = 0.0;  // geometric death tail ratio, 0 when absent
};

}  // namespace detail

inline OffspringSample sample_offspring_process(const RateModel& model, std::size_t k_cap, Rng& rng) {
  if (k_cap < 1) throw Error(Errc::out_of_range, "k_cap must be >= 1");
  const detail::ImmortalityTest immortal(model);
  OffspringSample out;
  double t = 0.0;
  for (std::uint64_t i = 0;; ++i) {
    if (immortal.immortal(i)) {
      // no further deaths: keep drawing births up to k_cap
      for (; out.S.size() < k_cap; ++i) {
        t += rng.exponential(model.total(i));
        out.S.push_back(t);
      }
      return out;
    }
    const double rate = model.total(i);
    t += rng.exponential(rate);
    const double d = model.d(i);
    if (d > 0.0 && rng.uniform() * rate < d) {
      out.D = i;
      out.L = t;
      return out;
    }
    if (out.S.size() < k_cap) out.S.push_back(t);
  }
}

// Lifetime remaining to an individual that currently has k children.
inline double sample_remaining_lifetime(const RateModel& model, std::uint64_t k, Rng& rng) {
  const detail::ImmortalityTest immortal(model);
  double t = 0.0;
  for (std::uint64_t i = k;; ++i) {
    if (immortal.immortal(i)) return std::numeric_limits<double>::infinity();
    const double rate = model.total(i);
    t += rng.exponential(rate);
    const double d = model.d(i);
    if (d > 0.0 && rng.uniform() * rate < d) return t;
  }
}

}  // namespace pavd
