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

#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "revsde/brownian.hpp"
#include "test_support.hpp"

using namespace revsde;
using testsupport::correlation;
using testsupport::mean;
using testsupport::variance;

namespace {

BrownianInterval make_interval(std::uint64_t seed, std::size_t capacity = 128, std::size_t batch = 1,
                               std::size_t dims = 1, double horizon = 1.0) {
  BrownianInterval::Options o;
  o.horizon = horizon;
  o.dims = dims;
  o.batch = batch;
  o.seed = new_seed(seed);
  o.cache_capacity = capacity;
  return BrownianInterval(o);
}

// Recomputes a node from the root by replaying the bridge construction,
// independent of the tree's cache.
std::vector<double> replay_from_root(const BrownianInterval& tree, BrownianInterval::NodeId id) {
  std::vector<BrownianInterval::NodeId> path;
  for (auto cur = id; cur != tree.root(); cur = tree.node(cur).parent) path.push_back(cur);
  const double q = tree.lattice_spacing();
  auto quantise = [q](std::vector<double>& v) {
    for (double& x : v) x = std::nearbyint(x / q) * q;
  };
  const auto& root = tree.node(tree.root());
  std::vector<double> value = standard_normals(root.seed, tree.width());
  for (double& x : value) x *= std::sqrt(root.b - root.a);
  quantise(value);
  for (auto it = path.rbegin(); it != path.rend(); ++it) {
    const auto& child = tree.node(*it);
    const auto& parent = tree.node(child.parent);
    const auto& left = tree.node(parent.left);
    auto w_left = bridge_sample(parent.a, parent.b, left.b, value, left.seed);
    quantise(w_left);
    if (*it == parent.left) {
      value = w_left;
    } else {
      for (std::size_t i = 0; i < value.size(); ++i) value[i] -= w_left[i];
    }
  }
  return value;
}

std::vector<std::pair<double, double>> mixed_queries() {
  std::vector<std::pair<double, double>> q;
  for (int k = 0; k < 40; ++k) q.push_back({k / 40.0, (k + 1) / 40.0});
  for (int k = 39; k >= 0; --k) q.push_back({k / 40.0, (k + 1) / 40.0});
  q.push_back({0.013, 0.77});
  q.push_back({0.5, 0.5001});
  q.push_back({0.0, 1.0});
  q.push_back({0.31, 0.32});
  q.push_back({0.1, 0.9});
  return q;
}

}  // namespace

TEST_CASE("bridge_sample midpoint and quarter-point moments") {
  const std::vector<double> w_ut{1.3};
  SUBCASE("closed form at s = 0.25") {
    // mean (s-u)/(t-u) W = 0.25 W, variance (t-s)(s-u)/(t-u) = 0.1875.
    constexpr std::size_t n = 100000;
    std::vector<double> draws(n);
    for (std::size_t i = 0; i < n; ++i) draws[i] = bridge_sample(0.0, 1.0, 0.25, w_ut, new_seed(i))[0];
    CHECK(std::abs(mean(draws) - 0.25 * 1.3) <= 0.01 * 0.25 * 1.3);
    CHECK(std::abs(variance(draws) - 0.1875) <= 0.01 * 0.1875);
  }
  SUBCASE("midpoint") {
    constexpr std::size_t n = 100000;
    std::vector<double> draws(n);
    for (std::size_t i = 0; i < n; ++i) draws[i] = bridge_sample(2.0, 4.0, 3.0, w_ut, new_seed(i))[0];
    CHECK(std::abs(mean(draws) - 0.65) <= 0.01 * 0.65);
    CHECK(std::abs(variance(draws) - 0.5) <= 0.01 * 0.5);
  }
  CHECK_THROWS_AS(bridge_sample(0.0, 1.0, 1.0, w_ut, new_seed(0)), std::invalid_argument);
  CHECK_THROWS_AS(bridge_sample(0.0, 1.0, -0.5, w_ut, new_seed(0)), std::invalid_argument);
}

TEST_CASE("first and second query build the expected tree") {
  auto tree = make_interval(1, 128, 1, 1, 1.0);
  const double s = 0.3, t = 0.6, u = 0.1, v = 0.45;

  auto first = tree.traverse(tree.root(), s, t);
  REQUIRE(first.size() == 1);
  const auto& root = tree.node(tree.root());
  REQUIRE_FALSE(root.is_leaf());
  CHECK(tree.node(root.left).a == 0.0);
  CHECK(tree.node(root.left).b == s);
  const auto& right = tree.node(root.right);
  CHECK(right.a == s);
  CHECK(right.b == 1.0);
  REQUIRE_FALSE(right.is_leaf());
  CHECK(tree.node(right.left).a == s);
  CHECK(tree.node(right.left).b == t);
  CHECK(tree.node(right.right).a == t);
  CHECK(tree.node(right.right).b == 1.0);
  CHECK(first[0] == right.left);
  CHECK(tree.node_count() == 5);

  auto second = tree.traverse(first[0], u, v);
  REQUIRE(second.size() == 2);
  CHECK(tree.node(second[0]).a == u);
  CHECK(tree.node(second[0]).b == s);
  CHECK(tree.node(second[1]).a == s);
  CHECK(tree.node(second[1]).b == v);
  const auto& left = tree.node(tree.node(tree.root()).left);
  REQUIRE_FALSE(left.is_leaf());
  CHECK(tree.node(left.left).b == u);
  const auto& st = tree.node(first[0]);
  REQUIRE_FALSE(st.is_leaf());
  CHECK(tree.node(st.left).b == v);
  CHECK(tree.node_count() == 9);

  SUBCASE("existing interval creates no nodes") {
    auto again = tree.traverse(tree.root(), s, v);
    CHECK(again.size() == 1);
    CHECK(tree.node_count() == 9);
  }
}

TEST_CASE("traverse returns a left-to-right partition of the query") {
  auto tree = make_interval(2);
  std::vector<double> out(1);
  for (const auto& [s, t] : mixed_queries()) tree.increment(s, t, out);
  for (const auto& [s, t] : mixed_queries()) {
    const auto pieces = tree.traverse(tree.hint(), s, t);
    REQUIRE_FALSE(pieces.empty());
    CHECK(tree.node(pieces.front()).a == s);
    CHECK(tree.node(pieces.back()).b == t);
    for (std::size_t i = 1; i < pieces.size(); ++i) CHECK(tree.node(pieces[i - 1]).b == tree.node(pieces[i]).a);
  }
}

TEST_CASE("root query is N(0, T) from the root seed") {
  auto tree = make_interval(11, 128, 3, 2, 4.0);
  const auto w = tree.increment(0.0, 4.0);
  auto expect = standard_normals(new_seed(11), 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(w[i] - 2.0 * expect[i]) <= tree.lattice_spacing());
}

TEST_CASE("additivity is exact") {
  auto tree = make_interval(3, 128, 4, 3);
  const double s = 0.125, m = 0.4, t = 0.93;
  const auto a = tree.increment(s, m);
  const auto b = tree.increment(m, t);
  const auto c = tree.increment(s, t);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(a[i] + b[i] == c[i]);
  // Finer partitions too.
  std::vector<double> sum(c.size(), 0.0);
  for (int k = 0; k < 10; ++k) {
    const auto piece = tree.increment(s + (t - s) * (k / 10.0), k == 9 ? t : s + (t - s) * ((k + 1) / 10.0));
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += piece[i];
  }
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(sum[i] == c[i]);
}

TEST_CASE("eviction does not change values") {
  const auto queries = mixed_queries();
  std::vector<std::vector<double>> reference;
  for (std::size_t capacity : {std::size_t{10000}, std::size_t{128}, std::size_t{1}}) {
    auto tree = make_interval(5, capacity, 2, 2);
    std::vector<std::vector<double>> first;
    for (const auto& [s, t] : queries) first.push_back(tree.increment(s, t));
    // Second pass after the cache has cycled.
    for (std::size_t i = 0; i < queries.size(); ++i) CHECK(tree.increment(queries[i].first, queries[i].second) == first[i]);
    if (reference.empty()) {
      reference = first;
    } else {
      for (std::size_t i = 0; i < queries.size(); ++i) CHECK(first[i] == reference[i]);
    }
    // Every node agrees with an independent replay from the root.
    for (BrownianInterval::NodeId id = 0; id < tree.node_count(); ++id) CHECK(tree.sample(id) == replay_from_root(tree, id));
  }
}

TEST_CASE("disjoint increments over 1e4 trees") {
  constexpr std::size_t trees = 10000;
  std::vector<double> a(trees), b(trees), c(trees);
  for (std::size_t k = 0; k < trees; ++k) {
    auto tree = make_interval(100000 + k);
    a[k] = tree.increment(0.0, 0.3)[0];
    b[k] = tree.increment(0.3, 0.7)[0];
    c[k] = tree.increment(0.7, 1.0)[0];
  }
  CHECK(std::abs(variance(a) / 0.3 - 1.0) <= 0.05);
  CHECK(std::abs(variance(b) / 0.4 - 1.0) <= 0.05);
  CHECK(std::abs(variance(c) / 0.3 - 1.0) <= 0.05);
  CHECK(std::abs(correlation(a, b)) < 0.03);
  CHECK(std::abs(correlation(b, c)) < 0.03);
  CHECK(std::abs(correlation(a, c)) < 0.03);
}

TEST_CASE("tree children follow the bridge given the parent") {
  // One tree, 1e5 independent paths: W_{0,1/4} - W_{0,1}/4 has variance 3/16
  // and is uncorrelated with W_{0,1}.
  constexpr std::size_t n = 100000;
  auto tree = make_interval(8, 128, n, 1);
  const auto parent = tree.increment(0.0, 1.0);
  const auto child = tree.increment(0.0, 0.25);
  std::vector<double> resid(n);
  for (std::size_t i = 0; i < n; ++i) resid[i] = child[i] - 0.25 * parent[i];
  CHECK(std::abs(variance(resid) - 0.1875) <= 0.01 * 0.1875);
  CHECK(std::abs(mean(resid)) <= 0.01 * std::sqrt(0.1875));
  CHECK(std::abs(correlation(resid, parent)) < 0.01);
}

TEST_CASE("query validation") {
  auto tree = make_interval(0);
  std::vector<double> out(1);
  CHECK_THROWS_AS(tree.increment(0.5, 0.5, out), std::invalid_argument);
  CHECK_THROWS_AS(tree.increment(0.6, 0.5, out), std::invalid_argument);
  CHECK_THROWS_AS(tree.increment(-0.1, 0.5, out), std::out_of_range);
  CHECK_THROWS_AS(tree.increment(0.5, 1.5, out), std::out_of_range);
  std::vector<double> wrong(2);
  CHECK_THROWS_AS(tree.increment(0.1, 0.5, wrong), std::invalid_argument);
}

TEST_CASE("sequential queries visit O(1) edges") {
  auto tree = make_interval(9);
  std::vector<double> out(1);
  constexpr int n = 1000;
  for (int k = 0; k < 100; ++k) tree.increment(k / double(n), (k + 1) / double(n), out);
  tree.reset_stats();
  for (int k = 100; k < n; ++k) tree.increment(k / double(n), (k + 1) / double(n), out);
  const auto& st = tree.stats();
  CHECK(st.queries == 900);
  CHECK(static_cast<double>(st.traverse_edges) / static_cast<double>(st.queries) < 4.0);
}

TEST_CASE("dyadic prebuild") {
  auto tree = make_interval(12, 20);
  tree.prebuild_dyadic(0.01, 20);
  // Leaf width 1/8 <= 0.8 * 0.01 * 20 = 0.16, three levels below the root.
  std::size_t leaves = 0;
  for (BrownianInterval::NodeId id = 0; id < tree.node_count(); ++id) {
    const auto& nd = tree.node(id);
    if (!nd.is_leaf()) continue;
    ++leaves;
    CHECK(nd.b - nd.a == 0.125);
    CHECK(tree.depth(id) == 3);
  }
  CHECK(leaves == 8);
  CHECK(tree.node_count() == 15);

  SUBCASE("doubly-sequential miss chains stay short") {
    constexpr int n = 100;
    auto pass = [](BrownianInterval& bi) {
      std::vector<double> out(1);
      for (int k = 0; k < n; ++k) bi.increment(k / double(n), (k + 1) / double(n), out);
      for (int k = n - 1; k >= 0; --k) bi.increment(k / double(n), (k + 1) / double(n), out);
      return bi.stats().max_miss_chain;
    };
    tree.reset_stats();
    const std::size_t with = pass(tree);
    auto plain = make_interval(12, 20);
    const std::size_t without = pass(plain);
    // Dyadic depth 3, at most 13 solver steps inside one leaf, plus the two
    // endpoints of the chain.
    CHECK(with <= 3 + 13 + 2);
    CHECK(with < without);
  }

  SUBCASE("repeated queries after prebuild are stable") {
    const auto a = tree.increment(0.2, 0.7);
    tree.increment(0.0, 1.0);
    tree.increment(0.33, 0.34);
    CHECK(tree.increment(0.2, 0.7) == a);
  }

  SUBCASE("degenerate estimate is a no-op") {
    auto big = make_interval(12);
    big.prebuild_dyadic(1.0, 2);
    CHECK(big.node_count() == 1);
  }
}

TEST_CASE("virtual Brownian tree") {
  VirtualBrownianTree::Options o;
  o.seed = new_seed(21);
  o.batch = 100;
  VirtualBrownianTree vbt(o);
  CHECK(vbt.tolerance() == std::ldexp(1.0, -16));
  const auto root = vbt.increment(0.0, 1.0);
  CHECK(vbt.increment(0.0, 1.0) == root);
  auto expect = standard_normals(new_seed(21), 100);
  for (std::size_t i = 0; i < 100; ++i) CHECK(root[i] == doctest::Approx(expect[i]).epsilon(1e-14));

  // Endpoints inside one tolerance cell resolve to the same dyadic point.
  const double eps = vbt.tolerance();
  CHECK(vbt.value_at(0.3) == vbt.value_at(0.3 + eps / 8));

  std::vector<double> draws;
  constexpr int cells = 1024;
  for (int k = 0; k < cells; ++k) {
    const auto w = vbt.increment(k / double(cells), (k + 1) / double(cells));
    draws.insert(draws.end(), w.begin(), w.end());
  }
  CHECK(draws.size() >= 100000);
  const double var = variance(draws);
  CHECK(std::abs(var * cells - 1.0) <= 0.02);

  CHECK_THROWS_AS(vbt.increment(0.5, 1.2), std::out_of_range);
}

TEST_CASE("space-time Levy area") {
  constexpr std::size_t n = 1000000;
  const auto w = standard_normals(new_seed(31), n);
  const auto h = space_time_levy(1.0, w, new_seed(32));
  CHECK(std::abs(variance(h) * 12.0 - 1.0) <= 0.01);
  CHECK(std::abs(correlation(h, w)) < 0.005);
  const auto h4 = space_time_levy(4.0, w, new_seed(33));
  CHECK(std::sqrt(variance(h4)) == doctest::Approx(std::sqrt(4.0 / 12.0)).epsilon(0.01));
  CHECK(space_time_levy(1.0, w, new_seed(32)) == h);
  CHECK_THROWS_AS(space_time_levy(0.0, w, new_seed(0)), std::invalid_argument);
}

TEST_CASE("Davie area approximation") {
  const std::vector<double> w{0.7, -1.2, 0.4};
  const std::vector<double> h{0.1, 0.3, -0.2};
  const auto a = davie_area(w, h, 0.5, new_seed(41));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      // Exact in real arithmetic; floating point leaves at most a couple of ulps.
      const double sym = a[i * 3 + j] + a[j * 3 + i];
      const double scale = std::abs(a[i * 3 + j]) + std::abs(a[j * 3 + i]);
      CHECK(std::abs(sym - w[i] * w[j]) <= 4.0 * 0x1p-53 * scale);
    }
    CHECK(a[i * 3 + i] == 0.5 * w[i] * w[i]);
  }

  const std::vector<double> w1{1.5}, h1{0.25};
  CHECK(davie_area(w1, h1, 1.0, new_seed(0))[0] == 0.5 * 1.5 * 1.5);

  constexpr std::size_t n = 100000;
  std::vector<double> lam(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto wk = standard_normals(new_seed(2 * k), 2);
    const auto hk = space_time_levy(1.0, wk, new_seed(2 * k + 1));
    const auto ak = davie_area(wk, hk, 1.0, new_seed(n + k));
    lam[k] = ak[1] - (0.5 * wk[0] * wk[1] + hk[0] * wk[1] - wk[0] * hk[1]);
  }
  CHECK(std::abs(variance(lam) * 12.0 - 1.0) <= 0.02);

  CHECK_THROWS_AS(davie_area(w, h1, 1.0, new_seed(0)), std::invalid_argument);
}
