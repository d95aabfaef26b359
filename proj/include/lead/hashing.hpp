#pragma once

#include <cstdint>
#include <span>
#include <string_view>

#include "lead/common.hpp"

namespace lead {

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = kFnvOffset) noexcept {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

/// murmur3 fmix64; a bijection on u64.
constexpr std::uint64_t fmix64(std::uint64_t k) noexcept {
  k ^= k >> 33;
  k *= 0xff51afd7ed558ccdull;
  k ^= k >> 33;
  k *= 0xc4ceb9fe1a85ec53ull;
  k ^= k >> 33;
  return k;
}

/// PeerHASH: FNV-1a over "address:port", avalanched, reduced into the ring.
Vid peer_hash(std::string_view address, int port, const RingSpace& ring = RingSpace{});

/// Uniform key hash used by the Chord baseline (FNV-1a over the 8 little-endian
/// key bytes, avalanched).
HashValue uniform_key_hash(Key key, const RingSpace& ring = RingSpace{});

}  // namespace lead
