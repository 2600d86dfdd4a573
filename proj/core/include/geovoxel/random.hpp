#ifndef GEOVOXEL_RANDOM_HPP
#define GEOVOXEL_RANDOM_HPP

// Seeded random streams. The distributions are implemented here rather than
// taken from <random> so that draws are identical across standard libraries.

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace geovoxel {

inline std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent child seed from a parent seed and a stream id.
inline std::uint64_t DeriveSeed(std::uint64_t parent, std::uint64_t stream) {
  return SplitMix64(SplitMix64(parent) ^ (stream * 0xd1b54a32d192ed03ULL + 1));
}

inline std::uint64_t DeriveSeed(std::uint64_t parent, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return DeriveSeed(parent, h);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t NextU64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double Uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  // Uniform integer in [0, n), rejection sampled.
  std::uint64_t Below(std::uint64_t n) {
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; the spare value is cached.
  double Normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = Uniform();
    } while (u1 <= 0.0);
    const double u2 = Uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  double Normal(double mean, double sd) { return mean + sd * Normal(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace geovoxel

#endif  // GEOVOXEL_RANDOM_HPP
