#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cadlab {

using Rng = std::mt19937_64;

/// Stable 64-bit FNV-1a hash; used to turn purpose tags into seed material.
constexpr std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : text) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Independent stream for (master seed, purpose tag).
inline Rng derive_rng(std::uint64_t master, std::string_view purpose) {
  const std::uint64_t tag = fnv1a(purpose);
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return Rng(seq);
}

/// Independent stream for (seed, index), e.g. one per chain or per sample.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x9e3779b9U};
  return Rng(seq);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose) {
  Rng rng = derive_rng(master, purpose);
  return rng();
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline double uniform01(Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

}  // namespace cadlab
