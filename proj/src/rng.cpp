#include "udit/rng.hpp"

#include <cmath>

namespace udit {
namespace {

constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
  uint64_t p = static_cast<uint64_t>(a) * b;
  hi = static_cast<uint32_t>(p >> 32);
  lo = static_cast<uint32_t>(p);
}

std::array<uint32_t, 4> philox_block(std::array<uint32_t, 4> ctr,
                                     std::array<uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

}  // namespace

Philox::Philox(uint64_t seed, uint64_t stream) : seed_(seed), stream_(stream) {}

std::array<uint32_t, 4> Philox::block(std::array<uint32_t, 4> counter,
                                      std::array<uint32_t, 2> key) {
  return philox_block(counter, key);
}

void Philox::refill() {
  std::array<uint32_t, 4> ctr = {
      static_cast<uint32_t>(block_), static_cast<uint32_t>(block_ >> 32),
      static_cast<uint32_t>(stream_), static_cast<uint32_t>(stream_ >> 32)};
  std::array<uint32_t, 2> key = {static_cast<uint32_t>(seed_),
                                 static_cast<uint32_t>(seed_ >> 32)};
  buf_ = philox_block(ctr, key);
  ++block_;
  pos_ = 0;
}

uint32_t Philox::next_u32() {
  if (pos_ >= 4) refill();
  return buf_[pos_++];
}

uint64_t Philox::next_u64() {
  uint64_t lo = next_u32();
  uint64_t hi = next_u32();
  return (hi << 32) | lo;
}

double Philox::uniform() { return next_u32() * 0x1p-32; }

double Philox::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

uint64_t Philox::uniform_u64(uint64_t n) {
  // Rejection sampling over the top multiple of n below 2^64.
  uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n + 1) % n;
  uint64_t draw;
  do {
    draw = next_u64();
  } while (draw > limit);
  return draw % n;
}

double Philox::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // u1 in (0, 1] so the log is finite.
  double u1 = (static_cast<double>(next_u32()) + 1.0) * 0x1p-32;
  double u2 = next_u32() * 0x1p-32;
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_normal_ = true;
  return r * std::cos(theta);
}

double Philox::truncated_normal(double mean, double stddev) {
  double z;
  do {
    z = normal();
  } while (z < -2.0 || z > 2.0);
  return mean + stddev * z;
}

}  // namespace udit
