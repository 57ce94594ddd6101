#pragma once

// Two-level weighted sampler for items whose weight depends only on a small
// integer class (here: the degree). A Fenwick tree over classes holds
// count(c) * w(c); members of a class are kept in a vector with swap-pop
// removal, so every update is O(log C) and a draw is O(log C).

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "pavd/error.hpp"
#include "pavd/random.hpp"

namespace pavd {

class Fenwick {
 public:
  Fenwick() = default;
  explicit Fenwick(std::size_t n) { resize(n); }

  std::size_t size() const { return n_; }

  void resize(std::size_t n) {
    std::size_t cap = 1;
    while (cap < n) cap <<= 1;
    n_ = cap;
    tree_.assign(n_ + 1, 0.0);
  }

  void add(std::size_t i, double delta) {
    for (++i; i <= n_; i += i & (~i + 1)) tree_[i] += delta;
  }

  double total() const { return prefix(n_); }

  // Sum over [0, i).
  double prefix(std::size_t i) const {
    double s = 0.0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

  // Smallest i with prefix(i + 1) > u; n_ when u >= total.
  std::size_t find(double u) const {
    std::size_t pos = 0;
    for (std::size_t step = n_; step > 0; step >>= 1) {
      if (pos + step <= n_ && tree_[pos + step] <= u) {
        pos += step;
        u -= tree_[pos];
      }
    }
    return pos;
  }

  void assign(const std::vector<double>& values) {
    resize(std::max<std::size_t>(values.size(), 1));
    for (std::size_t i = 0; i < values.size(); ++i) tree_[i + 1] = values[i];
    for (std::size_t i = 1; i <= n_; ++i) {
      const std::size_t j = i + (i & (~i + 1));
      if (j <= n_) tree_[j] += tree_[i];
    }
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> tree_{0.0};
};

class DegreeClassSampler {
 public:
  using Label = std::uint32_t;
  static constexpr std::uint64_t kRebuildEvery = std::uint64_t{1} << 16;

  // weight(c) must be > 0 for every class that is ever populated.
  explicit DegreeClassSampler(std::function<double(std::size_t)> weight) : weight_(std::move(weight)) {
    grow(16);
  }

  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  std::size_t count(std::size_t c) const { return c < members_.size() ? members_[c].size() : 0; }
  const std::vector<Label>& members(std::size_t c) const { return members_[c]; }
  std::size_t num_classes() const { return members_.size(); }
  double class_weight(std::size_t c) const { return w_[c]; }

  // Highest populated class; 0 when empty.
  std::size_t max_class() const { return max_class_; }

  double total() const { return fenwick_.total(); }

  void insert(Label v, std::size_t c) {
    if (c >= members_.size()) grow(c + 1);
    if (v >= pos_.size()) pos_.resize(std::max<std::size_t>(v + 1, 2 * pos_.size()), 0);
    pos_[v] = static_cast<Label>(members_[c].size());
    members_[c].push_back(v);
    fenwick_.add(c, w_[c]);
    ++size_;
    if (c > max_class_ || size_ == 1) max_class_ = c;
    tick();
  }

  void erase(Label v, std::size_t c) {
    auto& m = members_[c];
    const Label p = pos_[v];
    assert(p < m.size() && m[p] == v);
    m[p] = m.back();
    pos_[m[p]] = p;
    m.pop_back();
    fenwick_.add(c, -w_[c]);
    --size_;
    while (max_class_ > 0 && members_[max_class_].empty()) --max_class_;
    tick();
  }

  void move(Label v, std::size_t from, std::size_t to) {
    erase(v, from);
    insert(v, to);
  }

  // Class c with probability count(c) w(c) / total, then a uniform member.
  Label sample(Rng& rng) {
    if (size_ == 0) throw Error(Errc::extinct, "sampling from an empty population");
    for (int attempt = 0; attempt < 2; ++attempt) {
      const double u = rng.uniform() * fenwick_.total();
      std::size_t c = fenwick_.find(u);
      if (c >= members_.size() || members_[c].empty()) {
        // accumulated rounding put u past the last populated class
        c = max_class_;
        if (members_[c].empty() || attempt == 0) {
          rebuild();
          continue;
        }
      }
      const auto& m = members_[c];
      return m[static_cast<std::size_t>(rng.below(m.size()))];
    }
    throw Error(Errc::bound_violated, "degree-class sampler inconsistent after rebuild");
  }

  // Recomputes the tree from exact class counts.
  void rebuild() {
    std::vector<double> v(members_.size());
    for (std::size_t c = 0; c < members_.size(); ++c) v[c] = static_cast<double>(members_[c].size()) * w_[c];
    fenwick_.assign(v);
  }

  // Relative discrepancy between the incremental total and a fresh recomputation.
  double drift() const {
    long double exact = 0.0L;
    for (std::size_t c = 0; c < members_.size(); ++c) exact += members_[c].size() * static_cast<long double>(w_[c]);
    if (exact == 0.0L) return std::abs(fenwick_.total());
    return static_cast<double>(std::abs((fenwick_.total() - exact) / exact));
  }

 private:
  void grow(std::size_t n) {
    std::size_t cap = std::max<std::size_t>(members_.size(), 1);
    while (cap < n) cap <<= 1;
    const std::size_t old = members_.size();
    members_.resize(cap);
    w_.resize(cap);
    for (std::size_t c = old; c < cap; ++c) w_[c] = weight_(c);
    rebuild();
  }

  void tick() {
    if (++ops_ % kRebuildEvery == 0) {
      assert(drift() < 1e-9);
      rebuild();
    }
  }

  std::function<double(std::size_t)> weight_;
  std::vector<std::vector<Label>> members_;
  std::vector<double> w_;
  std::vector<Label> pos_;
  Fenwick fenwick_;
  std::size_t size_ = 0;
  std::size_t max_class_ = 0;
  std::uint64_t ops_ = 0;
};

}  // namespace pavd
