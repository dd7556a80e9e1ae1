#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace tbp {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) noexcept {
  return mix64(h ^ (mix64(v + 0x9E3779B97F4A7C15ULL) + 0x632BE59BD9B4E019ULL + (h << 6) + (h >> 2)));
}

// Counter-based stream: the n-th draw is a pure function of (key, n), so a
// stream keyed by (seed, replicate, cell label) reproduces regardless of the
// order in which cells are processed.
class Stream {
 public:
  using result_type = std::uint64_t;

  Stream() = default;
  explicit Stream(std::uint64_t key) : key_(key) {}

  static Stream from(std::uint64_t master_seed, std::uint64_t replicate,
                     std::uint64_t label_hash = 0) {
    return Stream(hash_combine(hash_combine(mix64(master_seed), replicate), label_hash));
  }

  Stream split(std::uint64_t tag) const { return Stream(hash_combine(key_, tag)); }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept { return mix64(key_ + (++counter_) * 0x9E3779B97F4A7C15ULL); }

  // Uniform on [0,1).
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  // Uniform on (0,1].
  double uniform_pos() noexcept { return (static_cast<double>((*this)() >> 11) + 1.0) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double exponential(double rate) noexcept { return -std::log(uniform_pos()) / rate; }
  bool bernoulli(double p) noexcept { return uniform() < p; }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace tbp
