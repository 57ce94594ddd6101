#pragma once

// The discrete PAVD chain. At step n an alive vertex i is chosen with
// probability proportional to b(deg i) + d(deg i); it is killed with probability
// d/(b+d), otherwise a new vertex labelled n+1 attaches to it.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "pavd/degree_classes.hpp"
#include "pavd/error.hpp"
#include "pavd/random.hpp"
#include "pavd/rates.hpp"

namespace pavd {

using Label = std::uint32_t;

struct Observables {
  std::uint64_t n = 0;
  std::uint64_t alive_count = 0;
  Label O = 0;  // oldest alive label
  Label I = 0;  // smallest alive label of maximal alive degree
  std::uint32_t max_deg_alive = 0;
  std::uint32_t max_deg_all = 0;
};

struct StepResult {
  enum class Kind { birth, death, already_extinct };
  Kind kind = Kind::already_extinct;
  Label vertex = 0;  // selected vertex (parent on birth)
  Label child = 0;
};

class TreeState {
 public:
  explicit TreeState(std::shared_ptr<const RateModel> model)
      : model_(std::move(model)),
        sampler_([m = model_](std::size_t c) { return m->total(c); }) {
    parent_.assign(2, 0);
    degree_.assign(2, 0);
    alive_.assign(2, 0);
    alive_[1] = 1;
    sampler_.insert(1, 0);
    n_ = 1;
    oldest_ = 1;
  }

  explicit TreeState(const RateModel& model) : TreeState(std::make_shared<const RateModel>(model)) {}

  const RateModel& model() const { return *model_; }
  std::uint64_t n() const { return n_; }
  bool extinct() const { return sampler_.empty(); }
  std::size_t alive_count() const { return sampler_.size(); }
  double total_weight() const { return sampler_.total(); }
  const DegreeClassSampler& classes() const { return sampler_; }

  // Per-label data; label 0 and labels consumed by death steps are unused.
  Label parent(Label v) const { return parent_[v]; }
  std::uint32_t degree(Label v) const { return degree_[v]; }
  bool alive(Label v) const { return v < alive_.size() && alive_[v]; }
  bool exists(Label v) const { return v == 1 || (v < parent_.size() && parent_[v] != 0); }
  Label max_label() const { return static_cast<Label>(parent_.size() - 1); }

  Label select_vertex(Rng& rng) {
    if (extinct()) throw Error(Errc::extinct, "the tree has died");
    return sampler_.sample(rng);
  }

  StepResult step(Rng& rng) {
    StepResult r;
    if (extinct()) return r;
    const Label v = select_vertex(rng);
    const std::uint32_t c = degree_[v];
    r.vertex = v;
    const double d = model_->d(c);
    if (d > 0.0 && rng.uniform() * model_->total(c) < d) {
      r.kind = StepResult::Kind::death;
      sampler_.erase(v, c);
      alive_[v] = 0;
      while (oldest_ < alive_.size() && !alive_[oldest_]) ++oldest_;
    } else {
      r.kind = StepResult::Kind::birth;
      const Label child = static_cast<Label>(n_ + 1);
      r.child = child;
      degree_[v] = c + 1;
      sampler_.move(v, c, c + 1);
      max_deg_all_ = std::max(max_deg_all_, c + 1);
      if (parent_.size() <= child) {
        parent_.resize(child + 1, 0);
        degree_.resize(child + 1, 0);
        alive_.resize(child + 1, 0);
      }
      parent_[child] = v;
      alive_[child] = 1;
      sampler_.insert(child, 0);
    }
    ++n_;
    return r;
  }

  std::optional<Observables> observe() const {
    if (extinct()) return std::nullopt;
    Observables o;
    o.n = n_;
    o.alive_count = sampler_.size();
    o.O = oldest_;
    const std::size_t top = sampler_.max_class();
    const auto& m = sampler_.members(top);
    o.I = *std::min_element(m.begin(), m.end());
    o.max_deg_alive = static_cast<std::uint32_t>(top);
    o.max_deg_all = max_deg_all_;
    return o;
  }

  // Advances to n_target (or extinction), calling observer every `stride`
  // steps and at the final step.
  template <class Observer>
  void run(std::uint64_t n_target, std::uint64_t stride, Rng& rng, Observer&& observer) {
    if (n_target < n_) throw Error(Errc::out_of_range, "n_target is behind the current step");
    if (stride == 0) stride = 1;
    while (n_ < n_target && !extinct()) {
      step(rng);
      if (n_ % stride == 0 || n_ == n_target) observer(*this);
    }
    if (extinct()) observer(*this);
  }

  void advance_to(std::uint64_t n_target, Rng& rng) {
    while (n_ < n_target && !extinct()) step(rng);
  }

  std::vector<Observables> run(std::uint64_t n_target, std::uint64_t stride, Rng& rng) {
    std::vector<Observables> out;
    run(n_target, stride, rng, [&](const TreeState& s) {
      if (auto o = s.observe()) out.push_back(*o);
    });
    return out;
  }

 private:
  std::shared_ptr<const RateModel> model_;
  DegreeClassSampler sampler_;
  std::vector<Label> parent_;
  std::vector<std::uint32_t> degree_;
  std::vector<std::uint8_t> alive_;
  std::uint64_t n_ = 1;
  Label oldest_ = 1;
  std::uint32_t max_deg_all_ = 0;
};

}  // namespace pavd
