#pragma once

// Counter-based Philox4x64-10 generator. Every (seed, stream) pair names an
// independent sequence, which gives reproducible per-cluster and per-replicate
// substreams regardless of thread scheduling.

#include <array>
#include <cstdint>
#include <limits>

namespace ptcure {

__extension__ using uint128_t = unsigned __int128;

class Philox4x64 {
 public:
  using result_type = std::uint64_t;
  using Block = std::array<std::uint64_t, 4>;
  using Key = std::array<std::uint64_t, 2>;

  Philox4x64() : Philox4x64(0, 0) {}
  Philox4x64(std::uint64_t seed, std::uint64_t stream) : key_{seed, stream} {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (index_ == 4) {
      buffer_ = block(counter_, key_);
      increment();
      index_ = 0;
    }
    return buffer_[index_++];
  }

  void discard(unsigned long long n) {
    while (n-- > 0) (*this)();
  }

  /// Ten-round bijection of a 256-bit counter under a 128-bit key.
  static Block block(Block ctr, Key key) {
    constexpr std::uint64_t m0 = 0xD2E7470EE14C6C93ULL;
    constexpr std::uint64_t m1 = 0xCA5A826395121157ULL;
    constexpr std::uint64_t w0 = 0x9E3779B97F4A7C15ULL;
    constexpr std::uint64_t w1 = 0xBB67AE8584CAA73BULL;
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += w0;
        key[1] += w1;
      }
      const uint128_t p0 = static_cast<uint128_t>(m0) * ctr[0];
      const uint128_t p1 = static_cast<uint128_t>(m1) * ctr[2];
      const auto hi0 = static_cast<std::uint64_t>(p0 >> 64);
      const auto lo0 = static_cast<std::uint64_t>(p0);
      const auto hi1 = static_cast<std::uint64_t>(p1 >> 64);
      const auto lo1 = static_cast<std::uint64_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

 private:
  void increment() {
    for (auto& word : counter_) {
      if (++word != 0) break;
    }
  }

  Key key_;
  Block counter_{0, 0, 0, 0};
  Block buffer_{};
  int index_ = 4;
};

/// Mixes a master seed with a label so different subsystems draw disjoint streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t label) {
  const auto out = Philox4x64::block({label, 0, 0, 0}, {seed, 0x5ee0ULL});
  return out[0];
}

}  // namespace ptcure
