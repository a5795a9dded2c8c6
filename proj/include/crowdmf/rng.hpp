#pragma once

// Counter-based random streams.
//
// Every random quantity in the library is drawn from a substream keyed by
// (seed, domain tag, index, index). A substream is a SplitMix64 sequence: the
// k-th output is a pure function of (key, k), so the draw for a given cell
// does not depend on the order cells are visited in. Serial and parallel
// generation therefore produce bitwise identical results.

#include <cstdint>
#include <limits>

namespace crowdmf {

class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}

  static CounterRng substream(std::uint64_t seed, std::uint64_t tag,
                              std::uint64_t a = 0, std::uint64_t b = 0) noexcept {
    std::uint64_t k = mix(seed ^ (tag * 0xD1B54A32D192ED03ULL));
    k = mix(k ^ (a * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL));
    k = mix(k ^ (b * 0xC2B2AE3D27D4EB4FULL + 0x165667B19E3779F9ULL));
    return CounterRng(k);
  }

  result_type operator()() noexcept {
    ++counter_;
    return mix(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  void discard(std::uint64_t n) noexcept { counter_ += n; }
  std::uint64_t position() const noexcept { return counter_; }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Domain tags keep substreams for different purposes disjoint.
namespace stream_tag {
inline constexpr std::uint64_t kRaterLatents = 1;
inline constexpr std::uint64_t kNoteLatents = 2;
inline constexpr std::uint64_t kCell = 3;
inline constexpr std::uint64_t kCellTime = 4;
inline constexpr std::uint64_t kNoteArrival = 5;
inline constexpr std::uint64_t kFitInit = 6;
inline constexpr std::uint64_t kPermutation = 7;
inline constexpr std::uint64_t kReplicate = 8;
inline constexpr std::uint64_t kNoiseGroup = 9;
}  // namespace stream_tag

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(CounterRng& rng) noexcept {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace crowdmf
