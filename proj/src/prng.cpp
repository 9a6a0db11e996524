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

#include "revsde/prng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace revsde {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

// Entropy is xored with these before mixing into the two seed words.
constexpr std::uint64_t kSeedHiSalt = 0x6A09E667F3BCC908ull;
constexpr std::uint64_t kSeedLoSalt = 0xBB67AE8584CAA73Bull;

constexpr std::uint64_t kSplitDomain = 1ull << 63;
constexpr std::uint64_t kSplitLeft = kSplitDomain + 0;
constexpr std::uint64_t kSplitRight = kSplitDomain + 1;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

SeedState block_as_seed(const std::array<std::uint64_t, 2>& b) { return {b[0], b[1]}; }

}  // namespace

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) noexcept {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

std::array<std::uint64_t, 2> stream_block(const SeedState& seed, std::uint64_t index) noexcept {
  const std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
      static_cast<std::uint32_t>(seed.lo), static_cast<std::uint32_t>(seed.lo >> 32)};
  const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed.hi),
                                            static_cast<std::uint32_t>(seed.hi >> 32)};
  const auto r = philox4x32(ctr, key);
  return {(static_cast<std::uint64_t>(r[1]) << 32) | r[0],
          (static_cast<std::uint64_t>(r[3]) << 32) | r[2]};
}

SeedState new_seed(std::uint64_t entropy) noexcept {
  return {mix64(entropy ^ kSeedHiSalt), mix64(entropy ^ kSeedLoSalt)};
}

std::pair<SeedState, SeedState> split(const SeedState& seed) noexcept {
  return {block_as_seed(stream_block(seed, kSplitLeft)),
          block_as_seed(stream_block(seed, kSplitRight))};
}

double to_open_unit(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

void standard_normals(const SeedState& seed, std::span<double> out) {
  if (out.empty()) throw std::invalid_argument("standard_normals: count must be positive");
  const std::size_t n = out.size();
  for (std::size_t k = 0; 2 * k < n; ++k) {
    const auto b = stream_block(seed, k);
    const double radius = std::sqrt(-2.0 * std::log(to_open_unit(b[0])));
    const double angle = 2.0 * std::numbers::pi * to_open_unit(b[1]);
    out[2 * k] = radius * std::cos(angle);
    if (2 * k + 1 < n) out[2 * k + 1] = radius * std::sin(angle);
  }
}

std::vector<double> standard_normals(const SeedState& seed, std::size_t count) {
  if (count == 0) throw std::invalid_argument("standard_normals: count must be positive");
  std::vector<double> out(count);
  standard_normals(seed, std::span<double>(out));
  return out;
}

void add_scaled_normals(const SeedState& seed, double scale, std::span<double> out) {
  if (out.empty()) return;
  std::vector<double> tmp(out.size());
  standard_normals(seed, std::span<double>(tmp));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * tmp[i];
}

}  // namespace revsde
