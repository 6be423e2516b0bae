#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <utility>
#include <vector>

namespace icudg {

/// Counter-based generator: draw n of a stream is mix(key + n * golden), where
/// mix is the SplitMix64 finaliser. A stream is fully determined by its key,
/// so streams can be created per (seed, domain, stay, purpose) in any order or
/// on any thread. All distributions are implemented here (not via <random>) so
/// outputs are identical across standard libraries.
class CounterRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit CounterRng(std::uint64_t key) : key_(key) {}

  /// SplitMix64 finaliser.
  static std::uint64_t mix(std::uint64_t x);
  /// FNV-1a 64-bit hash, used to fold string ids into keys.
  static std::uint64_t hash(std::string_view s);
  /// Key for a stream identified by a seed and a sequence of tags.
  static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (consumes two draws).
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  double lognormal(double mu, double sigma);
  double exponential(double rate);
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t integer(std::int64_t lo, std::int64_t hi);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace icudg
