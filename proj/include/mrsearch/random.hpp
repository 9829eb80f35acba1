#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mrsearch {

using Rng = std::mt19937_64;

// SplitMix64 finalizer. Used to derive independent stream seeds from a
// master seed plus a path of stream labels.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(seed);
  for (auto label : path) {
    s = mix64(s ^ mix64(label + 0x632be59bd9b4e019ULL));
  }
  return s;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {}) {
  return Rng(derive_seed(seed, path));
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n).
inline int uniform_index(Rng& rng, int n) {
  return static_cast<int>(std::uniform_int_distribution<std::int64_t>(0, n - 1)(rng));
}

// Named stream labels, so call sites read as derive_seed(seed, {stream::kTasks, ...}).
namespace stream {
inline constexpr std::uint64_t kGraph = 1;
inline constexpr std::uint64_t kTasks = 2;
inline constexpr std::uint64_t kRollout = 3;
inline constexpr std::uint64_t kEvalTasks = 4;
inline constexpr std::uint64_t kEvalRollout = 5;
inline constexpr std::uint64_t kMember = 6;
inline constexpr std::uint64_t kInit = 7;
inline constexpr std::uint64_t kBaselineArm = 8;
}  // namespace stream

}  // namespace mrsearch
