#pragma once

// Counter-based normal variates.
//
// Each variate is a pure function of a 64-bit key and a 128-bit counter, so any
// subset of a stream can be generated in any order on any thread. The bijection
// is Philox4x32-10 (Salmon et al., SC'11); a counter block yields four 32-bit
// words, the first two form u1 and the last two u2 (53-bit uniforms in (0,1)),
// and the Box-Muller cosine branch turns (u1, u2) into one standard normal.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace spde::rng {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

namespace detail {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

constexpr void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

constexpr Counter round(const Counter& c, const Key& k) {
  std::uint32_t hi0 = 0, lo0 = 0, hi1 = 0, lo1 = 0;
  mulhilo(kMul0, c[0], hi0, lo0);
  mulhilo(kMul1, c[2], hi1, lo1);
  return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

// Uniform in the open interval (0,1) from 64 random bits.
constexpr double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32 | lo) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

}  // namespace detail

/// Philox4x32 with 10 rounds.
constexpr Counter philox4x32(Counter ctr, Key key) {
  for (int r = 0; r < 10; ++r) {
    ctr = detail::round(ctr, key);
    key[0] += detail::kWeyl0;
    key[1] += detail::kWeyl1;
  }
  return ctr;
}

/// Standard normal variate keyed by (seed, stream, index, lane).
///
/// In the noise module: stream = sample id, index = finest-level step, lane = mode.
inline double standard_normal(std::uint64_t seed, std::uint64_t stream, std::uint32_t index,
                              std::uint32_t lane) {
  const Key key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  const Counter ctr{index, lane, static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
  const Counter out = philox4x32(ctr, key);
  const double u1 = detail::to_unit(out[0], out[1]);
  const double u2 = detail::to_unit(out[2], out[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace spde::rng
