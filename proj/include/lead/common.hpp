#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>

namespace lead {

using Key = std::uint64_t;
using Value = std::string;
using HashValue = std::uint64_t;
using NodeId = std::uint32_t;

/// Logical simulation time in milliseconds.
using SimTime = double;

inline constexpr SimTime kMinute = 60'000.0;

/// Error carrying a stable, machine-readable code such as "empty-dataset".
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& detail = {})
      : std::runtime_error(detail.empty() ? code : code + ": " + detail), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

/// Identifier of a virtual peer on the ring.
struct Vid {
  std::uint64_t value = 0;

  constexpr auto operator<=>(const Vid&) const = default;
};

/// The identifier ring [0, h) with h = 2^bits. Shared by peer addressing and
/// learned-hash outputs.
class RingSpace {
 public:
  constexpr explicit RingSpace(unsigned bits = 64) : bits_(bits) {
    if (bits == 0 || bits > 64) throw Error("invalid-ring", "ring bits must be in [1, 64]");
  }

  constexpr unsigned bits() const noexcept { return bits_; }
  constexpr std::uint64_t mask() const noexcept {
    return bits_ == 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << bits_) - 1);
  }
  /// h as a 128-bit quantity, since 2^64 does not fit a u64.
  constexpr unsigned __int128 size() const noexcept { return static_cast<unsigned __int128>(mask()) + 1; }

  constexpr std::uint64_t wrap(unsigned __int128 x) const noexcept {
    return static_cast<std::uint64_t>(x) & mask();
  }
  constexpr std::uint64_t add(std::uint64_t a, std::uint64_t b) const noexcept { return (a + b) & mask(); }
  /// Clockwise distance from a to b.
  constexpr std::uint64_t distance(std::uint64_t a, std::uint64_t b) const noexcept { return (b - a) & mask(); }

  /// x in the half-open ring interval (a, b]. (a, a] is the full ring.
  constexpr bool in_half_open(std::uint64_t x, std::uint64_t a, std::uint64_t b) const noexcept {
    if (a == b) return true;
    const auto dx = distance(a, x);
    return dx != 0 && dx <= distance(a, b);
  }
  /// x in the open ring interval (a, b). (a, a) is the ring minus a.
  constexpr bool in_open(std::uint64_t x, std::uint64_t a, std::uint64_t b) const noexcept {
    if (a == b) return x != a;
    const auto dx = distance(a, x);
    return dx != 0 && dx < distance(a, b);
  }

  /// Number of base-10 finger entries, floor(log10 h).
  unsigned decimal_fingers() const noexcept {
    unsigned count = 0;
    unsigned __int128 p = 10;
    while (p <= size()) {
      ++count;
      p *= 10;
    }
    return count;
  }

  constexpr bool operator==(const RingSpace&) const = default;

 private:
  unsigned bits_;
};

}  // namespace lead

template <>
struct std::hash<lead::Vid> {
  std::size_t operator()(const lead::Vid& v) const noexcept { return std::hash<std::uint64_t>{}(v.value); }
};
