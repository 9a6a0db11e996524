/*
 * Copyright 2026 The revsde Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef REVSDE_BROWNIAN_HPP
#define REVSDE_BROWNIAN_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "revsde/lru_cache.hpp"
#include "revsde/prng.hpp"

namespace revsde {

/// Closed time interval [a, b] with a < b. Endpoints compare exactly.
struct Interval {
  double a;
  double b;

  Interval(double a_, double b_);
  double width() const noexcept { return b - a; }
};

/**
 * A source of Brownian increments over [0, horizon()].
 *
 * Increments are laid out batch-major: element (p, k) of a batch x dims
 * result lives at index p * dims() + k.
 */
class BrownianSource {
 public:
  virtual ~BrownianSource() = default;

  virtual double horizon() const noexcept = 0;
  virtual std::size_t dims() const noexcept = 0;
  virtual std::size_t batch() const noexcept = 0;

  /// W_t - W_s for 0 <= s < t <= horizon(); `out` has batch() * dims() entries.
  virtual void increment(double s, double t, std::span<double> out) = 0;

  std::vector<double> increment(double s, double t);
  std::size_t width() const noexcept { return batch() * dims(); }
};

/**
 * Levy bridge: draws W_{u,s} given W_{u,t} for u < s < t,
 *   W_{u,s} ~ N((s-u)/(t-u) W_{u,t}, (t-s)(s-u)/(t-u) I),
 * using standard_normals(seed, w_ut.size()).
 */
void bridge_sample(double u, double t, double s, std::span<const double> w_ut,
                   const SeedState& seed, std::span<double> out);
std::vector<double> bridge_sample(double u, double t, double s, std::span<const double> w_ut,
                                  const SeedState& seed);

/// Instrumentation exposed to the benchmark harness.
struct TreeStats {
  std::size_t node_count = 0;
  std::size_t queries = 0;
  std::size_t cache_hits = 0;
  std::size_t cache_misses = 0;
  std::size_t traverse_edges = 0;      // total parent/child moves made by traverse
  std::size_t max_traverse_edges = 0;  // worst single query
  std::size_t max_miss_chain = 0;      // longest run of nodes recomputed for one lookup
  std::size_t nodes_returned = 0;      // total partition pieces over all queries
};

/**
 * Brownian Interval: exact Brownian increments from a binary tree of
 * (interval, seed) nodes plus an LRU cache of sampled increments.
 *
 * The root holds N(0, T) drawn from the root seed. Bisecting a node draws
 * the left child's increment by the Levy bridge using the left child's seed;
 * the right child is the parent minus the left child.
 *
 * Every stored increment is rounded to a power-of-two lattice with spacing
 * lattice_spacing() (about 2^-40 sqrt(T)). On that lattice sums and
 * differences of increments are exact, so W_{s,m} + W_{m,t} == W_{s,t}
 * holds bitwise for any materialised s < m < t.
 *
 * A tree is not thread-safe: queries mutate topology, cache and hint.
 */
class BrownianInterval final : public BrownianSource {
 public:
  using NodeId = std::uint32_t;
  static constexpr NodeId kNone = 0xFFFFFFFFu;

  struct Node {
    double a;
    double b;
    SeedState seed;
    NodeId parent = kNone;
    NodeId left = kNone;
    NodeId right = kNone;

    bool is_leaf() const noexcept { return left == kNone; }
  };

  struct Options {
    double horizon = 1.0;
    std::size_t dims = 1;
    std::size_t batch = 1;
    SeedState seed = new_seed(0);
    std::size_t cache_capacity = 128;
  };

  explicit BrownianInterval(const Options& options);

  double horizon() const noexcept override { return horizon_; }
  std::size_t dims() const noexcept override { return dims_; }
  std::size_t batch() const noexcept override { return batch_; }

  using BrownianSource::increment;
  void increment(double s, double t, std::span<double> out) override;

  /// Nodes partitioning [c, d], left to right, starting the search at `start`.
  /// Creates leaves by bisection as needed.
  std::vector<NodeId> traverse(NodeId start, double c, double d);

  /// Increment of one node (memoised).
  std::vector<double> sample(NodeId id);

  /// Pre-seeds a dyadic tree whose leaves have width <= (4/5) * step_estimate * cache_size.
  void prebuild_dyadic(double step_estimate, std::size_t cache_size);

  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  NodeId root() const noexcept { return 0; }
  NodeId hint() const noexcept { return hint_; }
  std::size_t depth(NodeId id) const;
  double lattice_spacing() const noexcept { return lattice_; }

  const TreeStats& stats() const noexcept { return stats_; }
  void reset_stats() noexcept;

 private:
  void bisect(NodeId id, double x);
  void root_value(std::span<double> out) const;
  void left_value(NodeId parent, std::span<const double> w_parent, std::span<double> out) const;
  void quantise(std::span<double> v) const noexcept;

  double horizon_;
  std::size_t dims_;
  std::size_t batch_;
  double lattice_;
  std::vector<Node> nodes_;
  LruCache<NodeId, std::vector<double>> cache_;
  NodeId hint_ = 0;
  TreeStats stats_;
};

/**
 * Virtual Brownian Tree baseline: W_t is evaluated by midpoint bisection of
 * [0, T] with the Levy bridge, reseeding with split() at every level, until
 * the bracketing interval is narrower than the tolerance. The query time is
 * then rounded to the nearer bracket endpoint. Stateless between queries.
 */
class VirtualBrownianTree final : public BrownianSource {
 public:
  struct Options {
    double horizon = 1.0;
    std::size_t dims = 1;
    std::size_t batch = 1;
    SeedState seed = new_seed(0);
    double tolerance = 0.0;  // <= 0 selects 2^-16 * horizon
  };

  explicit VirtualBrownianTree(const Options& options);

  double horizon() const noexcept override { return horizon_; }
  std::size_t dims() const noexcept override { return dims_; }
  std::size_t batch() const noexcept override { return batch_; }
  double tolerance() const noexcept { return tolerance_; }

  using BrownianSource::increment;
  void increment(double s, double t, std::span<double> out) override;

  /// W_t (with W_0 = 0).
  void value_at(double t, std::span<double> out);
  std::vector<double> value_at(double t);

  std::size_t descents() const noexcept { return descents_; }

 private:
  double horizon_;
  std::size_t dims_;
  std::size_t batch_;
  SeedState seed_;
  double tolerance_;
  std::size_t descents_ = 0;
  std::vector<double> wa_, wb_, wm_, tmp_, scratch_;
};

/// Space-time Levy area H ~ N(0, h/12 I) for a freshly generated step.
/// `seed` must not be the seed the increment `w` was drawn from.
std::vector<double> space_time_levy(double h, std::span<const double> w, const SeedState& seed);

/**
 * Davie-style approximation of the second iterated Stratonovich integral:
 *   A = 1/2 W (x) W + H (x) W - W (x) H + lambda,
 * lambda antisymmetric with lambda_ij ~ N(0, h^2/12) for i < j.
 * Returns a d x d row-major matrix.
 */
std::vector<double> davie_area(std::span<const double> w, std::span<const double> h_area,
                               double h, const SeedState& seed);

}  // namespace revsde

#endif  // REVSDE_BROWNIAN_HPP
