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

#include "revsde/brownian.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace revsde {

namespace {

void check_query(double s, double t, double horizon) {
  if (!(s >= 0.0) || !(t <= horizon))
    throw std::out_of_range("Brownian query [" + std::to_string(s) + ", " + std::to_string(t) +
                            "] escapes [0, " + std::to_string(horizon) + "]");
  if (!(s < t)) throw std::invalid_argument("Brownian query requires s < t");
}

void check_shape(std::size_t dims, std::size_t batch, double horizon) {
  if (dims == 0 || batch == 0) throw std::invalid_argument("Brownian source: dims and batch must be positive");
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw std::invalid_argument("Brownian source: horizon must be positive and finite");
}

}  // namespace

Interval::Interval(double a_, double b_) : a(a_), b(b_) {
  if (!(a < b)) throw std::invalid_argument("Interval requires a < b");
}

std::vector<double> BrownianSource::increment(double s, double t) {
  std::vector<double> out(width());
  increment(s, t, std::span<double>(out));
  return out;
}

void bridge_sample(double u, double t, double s, std::span<const double> w_ut,
                   const SeedState& seed, std::span<double> out) {
  if (!(u < s && s < t)) throw std::invalid_argument("bridge_sample requires u < s < t");
  if (out.size() != w_ut.size()) throw std::invalid_argument("bridge_sample: output size mismatch");
  if (w_ut.empty()) return;
  const double span_ut = t - u;
  const double mean_scale = (s - u) / span_ut;
  const double sd = std::sqrt((t - s) * (s - u) / span_ut);
  standard_normals(seed, out);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mean_scale * w_ut[i] + sd * out[i];
}

std::vector<double> bridge_sample(double u, double t, double s, std::span<const double> w_ut,
                                  const SeedState& seed) {
  std::vector<double> out(w_ut.size());
  bridge_sample(u, t, s, w_ut, seed, std::span<double>(out));
  return out;
}

// ---------------------------------------------------------------------------
// BrownianInterval

BrownianInterval::BrownianInterval(const Options& options)
    : horizon_(options.horizon),
      dims_(options.dims),
      batch_(options.batch),
      cache_(options.cache_capacity) {
  check_shape(dims_, batch_, horizon_);
  // Smallest power of two >= sqrt(T), times 2^-40: exact sums up to ~8192 sqrt(T).
  lattice_ = std::ldexp(1.0, static_cast<int>(std::ceil(std::log2(std::sqrt(horizon_)))) - 40);
  nodes_.push_back(Node{0.0, horizon_, options.seed});
  stats_.node_count = 1;
}

void BrownianInterval::reset_stats() noexcept {
  stats_ = TreeStats{};
  stats_.node_count = nodes_.size();
}

std::size_t BrownianInterval::depth(NodeId id) const {
  std::size_t d = 0;
  while (nodes_.at(id).parent != kNone) {
    id = nodes_[id].parent;
    ++d;
  }
  return d;
}

void BrownianInterval::quantise(std::span<double> v) const noexcept {
  for (double& x : v) x = std::nearbyint(x / lattice_) * lattice_;
}

void BrownianInterval::bisect(NodeId id, double x) {
  const auto [seed_left, seed_right] = split(nodes_[id].seed);
  const double a = nodes_[id].a;
  const double b = nodes_[id].b;
  const auto left = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(Node{a, x, seed_left, id});
  nodes_.push_back(Node{x, b, seed_right, id});
  nodes_[id].left = left;
  nodes_[id].right = left + 1;
  stats_.node_count = nodes_.size();
}

std::vector<BrownianInterval::NodeId> BrownianInterval::traverse(NodeId start, double c, double d) {
  check_query(c, d, horizon_);
  if (start >= nodes_.size()) throw std::out_of_range("traverse: unknown start node");

  struct Task {
    NodeId node;
    double c;
    double d;
  };
  std::vector<NodeId> found;
  std::vector<Task> work{{start, c, d}};
  std::size_t edges = 0;

  while (!work.empty()) {
    auto [id, lo, hi] = work.back();
    work.pop_back();
    for (;;) {
      const Node& n = nodes_[id];
      if (lo < n.a || hi > n.b) {
        // Outside this node's jurisdiction.
        id = n.parent;
        ++edges;
        continue;
      }
      if (lo == n.a && hi == n.b) {
        found.push_back(id);
        break;
      }
      if (n.is_leaf()) {
        if (lo == n.a) {
          bisect(id, hi);
          found.push_back(nodes_[id].left);
          ++edges;
          break;
        }
        bisect(id, lo);
        id = nodes_[id].right;
        ++edges;
        continue;
      }
      const double mid = nodes_[n.left].b;
      if (hi <= mid) {
        id = n.left;
      } else if (lo >= mid) {
        id = n.right;
      } else {
        work.push_back({n.right, mid, hi});
        hi = mid;
        id = n.left;
      }
      ++edges;
    }
  }

  stats_.traverse_edges += edges;
  stats_.max_traverse_edges = std::max(stats_.max_traverse_edges, edges);
  return found;
}

void BrownianInterval::root_value(std::span<double> out) const {
  standard_normals(nodes_[0].seed, out);
  const double sd = std::sqrt(horizon_);
  for (double& x : out) x *= sd;
  quantise(out);
}

void BrownianInterval::left_value(NodeId parent, std::span<const double> w_parent,
                                  std::span<double> out) const {
  const Node& p = nodes_[parent];
  const Node& l = nodes_[p.left];
  bridge_sample(p.a, p.b, l.b, w_parent, l.seed, out);
  quantise(out);
}

std::vector<double> BrownianInterval::sample(NodeId id) {
  if (id >= nodes_.size()) throw std::out_of_range("sample: unknown node");
  if (const auto* hit = cache_.find(id)) {
    ++stats_.cache_hits;
    return *hit;
  }
  ++stats_.cache_misses;

  // Ascend to the nearest memoised ancestor (or the root), then replay the
  // bridge construction downwards.
  std::vector<NodeId> path;
  std::vector<double> value(width());
  NodeId cur = id;
  bool computed_root = false;
  for (;;) {
    if (cur != id) {
      if (const auto* hit = cache_.find(cur)) {
        value = *hit;
        break;
      }
    }
    if (cur == root()) {
      root_value(value);
      cache_.insert(cur, value);
      computed_root = true;
      break;
    }
    path.push_back(cur);
    cur = nodes_[cur].parent;
  }
  stats_.max_miss_chain = std::max(stats_.max_miss_chain, path.size() + (computed_root ? 1 : 0));

  std::vector<double> left(width());
  for (auto it = path.rbegin(); it != path.rend(); ++it) {
    const NodeId child = *it;
    const NodeId parent = nodes_[child].parent;
    const NodeId sibling_left = nodes_[parent].left;
    if (child == sibling_left) {
      left_value(parent, value, left);
      value.swap(left);
    } else {
      if (const auto* hit = cache_.find(sibling_left)) {
        left = *hit;
      } else {
        left_value(parent, value, left);
      }
      for (std::size_t i = 0; i < value.size(); ++i) value[i] -= left[i];
    }
    cache_.insert(child, value);
  }
  return value;
}

void BrownianInterval::increment(double s, double t, std::span<double> out) {
  check_query(s, t, horizon_);
  if (out.size() != width()) throw std::invalid_argument("BrownianInterval: output size mismatch");
  const auto pieces = traverse(hint_, s, t);
  ++stats_.queries;
  stats_.nodes_returned += pieces.size();
  std::fill(out.begin(), out.end(), 0.0);
  for (const NodeId id : pieces) {
    const auto w = sample(id);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[i];
  }
  hint_ = pieces.back();
}

void BrownianInterval::prebuild_dyadic(double step_estimate, std::size_t cache_size) {
  if (!(step_estimate > 0.0) || cache_size == 0)
    throw std::invalid_argument("prebuild_dyadic: step estimate and cache size must be positive");
  const double target = 0.8 * step_estimate * static_cast<double>(cache_size);
  std::size_t levels = 0;
  for (double w = horizon_; w > target; w /= 2.0) ++levels;
  std::vector<double> scratch(width());
  for (std::size_t level = 1; level <= levels; ++level) {
    const double pieces = std::ldexp(1.0, static_cast<int>(level));
    const auto count = static_cast<std::size_t>(pieces);
    for (std::size_t k = 0; k < count; ++k) {
      const double a = horizon_ * (static_cast<double>(k) / pieces);
      const double b = k + 1 == count ? horizon_ : horizon_ * (static_cast<double>(k + 1) / pieces);
      increment(a, b, scratch);
    }
  }
}

// ---------------------------------------------------------------------------
// VirtualBrownianTree

VirtualBrownianTree::VirtualBrownianTree(const Options& options)
    : horizon_(options.horizon),
      dims_(options.dims),
      batch_(options.batch),
      seed_(options.seed),
      tolerance_(options.tolerance > 0.0 ? options.tolerance : std::ldexp(options.horizon, -16)) {
  check_shape(dims_, batch_, horizon_);
  const std::size_t n = width();
  wa_.resize(n);
  wb_.resize(n);
  wm_.resize(n);
  tmp_.resize(n);
  scratch_.resize(n);
}

void VirtualBrownianTree::value_at(double t, std::span<double> out) {
  if (!(t >= 0.0 && t <= horizon_)) throw std::out_of_range("VirtualBrownianTree: time outside [0, T]");
  if (out.size() != width()) throw std::invalid_argument("VirtualBrownianTree: output size mismatch");
  if (t == 0.0) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  standard_normals(seed_, std::span<double>(wb_));
  const double sd = std::sqrt(horizon_);
  for (double& x : wb_) x *= sd;
  if (t == horizon_) {
    std::copy(wb_.begin(), wb_.end(), out.begin());
    return;
  }
  std::fill(wa_.begin(), wa_.end(), 0.0);
  double a = 0.0;
  double b = horizon_;
  SeedState seed = seed_;
  while (b - a > tolerance_) {
    const double m = 0.5 * (a + b);
    const auto [seed_left, seed_right] = split(seed);
    for (std::size_t i = 0; i < tmp_.size(); ++i) tmp_[i] = wb_[i] - wa_[i];
    bridge_sample(a, b, m, tmp_, seed_left, std::span<double>(wm_));
    for (std::size_t i = 0; i < wm_.size(); ++i) wm_[i] += wa_[i];
    ++descents_;
    if (t == m) {
      std::copy(wm_.begin(), wm_.end(), out.begin());
      return;
    }
    if (t < m) {
      b = m;
      wb_.swap(wm_);
      seed = seed_left;
    } else {
      a = m;
      wa_.swap(wm_);
      seed = seed_right;
    }
  }
  const auto& nearest = (t - a <= b - t) ? wa_ : wb_;
  std::copy(nearest.begin(), nearest.end(), out.begin());
}

std::vector<double> VirtualBrownianTree::value_at(double t) {
  std::vector<double> out(width());
  value_at(t, std::span<double>(out));
  return out;
}

void VirtualBrownianTree::increment(double s, double t, std::span<double> out) {
  check_query(s, t, horizon_);
  if (out.size() != width()) throw std::invalid_argument("VirtualBrownianTree: output size mismatch");
  value_at(t, out);
  value_at(s, std::span<double>(scratch_));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= scratch_[i];
}

// ---------------------------------------------------------------------------
// Levy area helpers

std::vector<double> space_time_levy(double h, std::span<const double> w, const SeedState& seed) {
  if (!(h > 0.0)) throw std::invalid_argument("space_time_levy: step must be positive");
  if (w.empty()) throw std::invalid_argument("space_time_levy: empty increment");
  auto out = standard_normals(seed, w.size());
  const double sd = std::sqrt(h / 12.0);
  for (double& x : out) x *= sd;
  return out;
}

std::vector<double> davie_area(std::span<const double> w, std::span<const double> h_area,
                               double h, const SeedState& seed) {
  if (!(h > 0.0)) throw std::invalid_argument("davie_area: step must be positive");
  if (w.size() != h_area.size() || w.empty())
    throw std::invalid_argument("davie_area: W and H must have the same positive length");
  const std::size_t d = w.size();
  std::vector<double> area(d * d);
  std::vector<double> lambda;
  if (d > 1) lambda = standard_normals(seed, d * (d - 1) / 2);
  const double sd = h / std::sqrt(12.0);
  std::size_t next = 0;
  for (std::size_t i = 0; i < d; ++i) {
    area[i * d + i] = 0.5 * w[i] * w[i];
    for (std::size_t j = i + 1; j < d; ++j) {
      const double sym = 0.5 * w[i] * w[j];
      const double anti = (h_area[i] * w[j] - w[i] * h_area[j]) + sd * lambda[next++];
      area[i * d + j] = sym + anti;
      area[j * d + i] = sym - anti;
    }
  }
  return area;
}

}  // namespace revsde
