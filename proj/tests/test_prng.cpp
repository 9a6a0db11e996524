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

#include <bit>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "revsde/prng.hpp"
#include "test_support.hpp"

using namespace revsde;

TEST_CASE("philox4x32-10 known answers") {
  // Reference vectors published with the Random123 library.
  using C = std::array<std::uint32_t, 4>;
  using K = std::array<std::uint32_t, 2>;
  CHECK(philox4x32(C{0, 0, 0, 0}, K{0, 0}) == C{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(philox4x32(C{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, K{0xffffffffu, 0xffffffffu}) ==
        C{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(philox4x32(C{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, K{0xa4093822u, 0x299f31d0u}) ==
        C{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("new_seed is deterministic and injective") {
  CHECK(new_seed(0) == new_seed(0));
  CHECK_FALSE(new_seed(0) == new_seed(1));
  std::set<std::pair<std::uint64_t, std::uint64_t>> seen;
  for (std::uint64_t k = 0; k < 10000; ++k) {
    const SeedState s = new_seed(k);
    seen.insert({s.hi, s.lo});
  }
  CHECK(seen.size() == 10000);
}

TEST_CASE("new_seed low-word bit balance") {
  std::uint64_t ones = 0;
  constexpr std::uint64_t n = 10001;
  for (std::uint64_t k = 0; k < n; ++k) ones += static_cast<std::uint64_t>(std::popcount(new_seed(k).lo));
  const double frac = static_cast<double>(ones) / static_cast<double>(64 * n);
  CHECK(std::abs(frac - 0.5) <= 0.02);
}

TEST_CASE("split is deterministic and distinct") {
  const SeedState s = new_seed(42);
  const auto a = split(s);
  const auto b = split(s);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK_FALSE(a.first == a.second);
  CHECK_FALSE(a.first == s);
  CHECK_FALSE(a.second == s);
}

TEST_CASE("sibling streams are uncorrelated") {
  constexpr std::size_t pairs = 10000;
  std::vector<double> left(pairs), right(pairs);
  for (std::size_t i = 0; i < pairs; ++i) {
    const auto [l, r] = split(new_seed(i));
    left[i] = standard_normals(l, 1)[0];
    right[i] = standard_normals(r, 1)[0];
  }
  CHECK(std::abs(testsupport::correlation(left, right)) < 0.03);
}

TEST_CASE("standard_normals determinism, prefix stability and rejection of zero count") {
  const SeedState s = new_seed(7);
  const auto a = standard_normals(s, 101);
  const auto b = standard_normals(s, 101);
  CHECK(a == b);
  const auto longer = standard_normals(s, 1000);
  CHECK(std::equal(a.begin(), a.end(), longer.begin()));
  const auto odd = standard_normals(s, 3);
  CHECK(std::equal(odd.begin(), odd.end(), longer.begin()));
  CHECK_THROWS_AS(standard_normals(s, 0), std::invalid_argument);
}

TEST_CASE("standard_normals moments and tails at 1e6 draws") {
  const auto x = standard_normals(new_seed(2026), 1000000);
  CHECK(std::abs(testsupport::mean(x)) <= 0.005);
  CHECK(std::abs(testsupport::variance(x) - 1.0) <= 0.01);
  std::size_t tail = 0;
  for (double v : x) tail += std::abs(v) > 1.96 ? 1 : 0;
  CHECK(std::abs(static_cast<double>(tail) / 1e6 - 0.05) <= 0.002);
}

TEST_CASE("add_scaled_normals adds the same draws") {
  const SeedState s = new_seed(3);
  std::vector<double> out(16, 1.0);
  add_scaled_normals(s, 2.0, out);
  const auto z = standard_normals(s, 16);
  for (std::size_t i = 0; i < 16; ++i) CHECK(out[i] == 1.0 + 2.0 * z[i]);
}

TEST_CASE("to_open_unit stays inside (0, 1)") {
  CHECK(to_open_unit(0) > 0.0);
  CHECK(to_open_unit(~std::uint64_t{0}) < 1.0);
}
