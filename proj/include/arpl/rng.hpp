#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

#include "arpl/common.hpp"

namespace arpl {

// splitmix64 finalizer, used to derive independent seeds from a master seed
// plus stream tags. Keeps results independent of thread schedule.
inline std::uint64_t seed_mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t seed_mix(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x2545f4914f6cdd1dull;
  for (std::uint64_t p : parts) h = seed_mix(h ^ seed_mix(p));
  return h;
}

// Deterministic RNG. std::mt19937_64 is fully specified by the standard; the
// distribution transforms are written out here because the std distribution
// objects are implementation-defined and would break cross-build determinism.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (one draw per call, two uniforms consumed).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Vector normal_vector(Eigen::Index n, double stddev = 1.0) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = stddev * normal();
    return v;
  }

  // Component-wise uniform sample from the box [lo, hi].
  Vector uniform_box(const Vector& lo, const Vector& hi) {
    Vector v(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i) v[i] = uniform(lo[i], hi[i]);
    return v;
  }

  // Uniform in the l-inf ball of the given radius.
  Vector uniform_linf_ball(Eigen::Index n, double radius) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = uniform(-radius, radius);
    return v;
  }

  // Uniform in the l-2 ball: direction from normals, radius ~ r * U^(1/n).
  Vector uniform_l2_ball(Eigen::Index n, double radius) {
    Vector dir = normal_vector(n);
    double norm = dir.norm();
    while (norm == 0.0) {
      dir = normal_vector(n);
      norm = dir.norm();
    }
    const double r = radius * std::pow(uniform(), 1.0 / static_cast<double>(n));
    return dir * (r / norm);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace arpl
