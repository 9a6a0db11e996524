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

#ifndef REVSDE_PRNG_HPP
#define REVSDE_PRNG_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace revsde {

/**
 * 128-bit splittable seed.
 *
 * All randomness in the library is a pure function of a SeedState. Output
 * streams are produced by Philox4x32-10 in counter mode:
 *
 *   key     = hi (two 32-bit words, low word first)
 *   counter = (block_lo32, block_hi32, lo_lo32, lo_hi32)
 *
 * Block indices below 2^63 feed the normal stream. Indices 2^63 + 0 and
 * 2^63 + 1 are reserved for the left and right children of split(), so the
 * child seeds never coincide with a block of the parent's own stream.
 */
struct SeedState {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;

  friend bool operator==(const SeedState&, const SeedState&) = default;
};

/// splitmix64 finalizer (bijective on 64 bits).
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Philox4x32 with 10 rounds.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) noexcept;

/// Raw 128-bit output block `index` of the stream keyed by `seed`.
std::array<std::uint64_t, 2> stream_block(const SeedState& seed, std::uint64_t index) noexcept;

/// Well-mixed seed from 64 bits of entropy. Injective in `entropy`.
SeedState new_seed(std::uint64_t entropy) noexcept;

/// Deterministic (left, right) children.
std::pair<SeedState, SeedState> split(const SeedState& seed) noexcept;

/// Uniform in the open interval (0, 1) from the top 52 bits of `bits`.
double to_open_unit(std::uint64_t bits) noexcept;

/**
 * Fills `out` with i.i.d. standard normals.
 *
 * Normal 2k and 2k+1 come from the Box-Muller transform of stream block k
 * (cosine branch first), so any prefix of a longer request is identical.
 * Throws std::invalid_argument on an empty span.
 */
void standard_normals(const SeedState& seed, std::span<double> out);

std::vector<double> standard_normals(const SeedState& seed, std::size_t count);

/// Normals scaled by `scale` and added to `out` (out += scale * N).
void add_scaled_normals(const SeedState& seed, double scale, std::span<double> out);

}  // namespace revsde

#endif  // REVSDE_PRNG_HPP
