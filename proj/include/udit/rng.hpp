#pragma once

#include <array>
#include <cstdint>

namespace udit {

// Philox4x32-10 counter-based generator.
//
// Every random draw in the project flows through this engine. Counter-based
// generation buys two properties cheaply:
//   * independent streams keyed by (seed, stream) — e.g. one stream per
//     training step or per dataset sample — so results never depend on how
//     much randomness earlier work consumed, and
//   * trivially serializable state (seed, stream, draw position), which makes
//     bit-exact resume possible without persisting opaque engine blobs.
class Philox {
 public:
  explicit Philox(uint64_t seed, uint64_t stream = 0);

  uint32_t next_u32();
  uint64_t next_u64();

  // Uniform on [0, 1) with 32 random bits.
  double uniform();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer on [0, n). n must be > 0. Uses rejection sampling, so the
  // result is exactly uniform.
  uint64_t uniform_u64(uint64_t n);

  // Standard normal via Box-Muller. Draws two uniforms and caches the second
  // variate.
  double normal();

  // Normal truncated to [-2s, +2s] around the mean by redraw; the
  // conventional initializer for convolution weights.
  double truncated_normal(double mean, double stddev);

  uint64_t seed() const { return seed_; }
  uint64_t stream() const { return stream_; }

  // Raw 10-round block function (counter, key) -> output. Exposed so tests
  // can pin the generator against published known-answer vectors.
  static std::array<uint32_t, 4> block(std::array<uint32_t, 4> counter,
                                       std::array<uint32_t, 2> key);

 private:
  void refill();

  uint64_t seed_ = 0;
  uint64_t stream_ = 0;
  uint64_t block_ = 0;             // low 64 bits of the 128-bit counter
  std::array<uint32_t, 4> buf_{};  // current output block
  int pos_ = 4;                    // next unread lane in buf_
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace udit
