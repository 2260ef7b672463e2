#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>

namespace nero {

/// Deterministic random stream. All distributions are implemented here
/// (not via std:: distribution objects) so that sequences are stable
/// across standard library versions and fully serializable.
class Rng {
 public:
  Rng() : engine_(0xfeedULL) {}
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [lo, hi], inclusive. Unbiased via rejection.
  long long uniform_int(long long lo, long long hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<long long>(engine_());  // full 64-bit range
    const std::uint64_t bound = std::numeric_limits<std::uint64_t>::max() / span * span;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= bound);
    return lo + static_cast<long long>(r % span);
  }

  int uniform_index(int n) { return static_cast<int>(uniform_int(0, n - 1)); }

  /// Uniform real in [lo, hi).
  double uniform_real(double lo, double hi) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
  }

  bool bernoulli(double p) { return uniform_real(0.0, 1.0) < p; }

  /// Gaussian via Box-Muller, no state carried between calls.
  double gaussian(double mu, double sigma) {
    double u1 = uniform_real(0.0, 1.0);
    while (u1 <= 0.0) u1 = uniform_real(0.0, 1.0);
    const double u2 = uniform_real(0.0, 1.0);
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Independent child stream; advances this stream by one draw.
  Rng split() { return Rng(mix(engine_())); }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  static Rng deserialize(const std::string& s) {
    Rng r;
    std::istringstream is(s);
    is >> r.engine_;
    return r;
  }

  bool operator==(const Rng& o) const { return engine_ == o.engine_; }

  /// splitmix64 finalizer; used for deriving per-evaluation seeds.
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return mix(mix(a) ^ b); }
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix(mix(a, b) ^ c);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace nero
