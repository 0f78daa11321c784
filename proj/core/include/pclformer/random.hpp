#pragma once

#include <cstdint>
#include <string_view>

namespace pclformer {

// Counter-based generator: draw i of stream `key` is splitmix64_mix(key +
// i * 0x9E3779B97F4A7C15). Streams are independent of platform and of the
// standard library, so a seed reproduces the same numbers everywhere.
std::uint64_t splitmix64_mix(std::uint64_t z) noexcept;

// Derives a child stream key from a parent key and a label or index.
std::uint64_t derive_key(std::uint64_t parent, std::uint64_t index) noexcept;
std::uint64_t derive_key(std::uint64_t parent, std::string_view label) noexcept;

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept;
  // Standard normal via Box-Muller; consumes two draws per pair of values.
  double normal() noexcept;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace pclformer
