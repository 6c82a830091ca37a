#ifndef PED_RANDOM_HPP
#define PED_RANDOM_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <type_traits>
#include <variant>
#include <vector>

#include "ped/errors.hpp"

namespace ped::num {

/// Seedable random stream. Sampling transforms are written out here rather
/// than taken from <random> distributions so that sequences are bit-identical
/// across standard library implementations.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  /// Independent stream derived by seed splitting.
  Rng split(std::uint64_t stream) const { return Rng(seed_ ^ stream); }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_open_left() { return 1.0 - uniform(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one draw per pair of uniforms, no cache).
  double normal() {
    const double u1 = uniform_open_left();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ValidationError("Rng::below: empty range");
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  template <class T> void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

struct Gaussian {
  double mu = 0.0;
  double sigma = 1.0;
};
struct Bernoulli {
  double p = 0.5;
};
struct Binomial {
  int trials = 1;
  double p = 0.5;
};
struct Poisson {
  double rate = 1.0;
};

using Distribution = std::variant<Gaussian, Bernoulli, Binomial, Poisson>;

namespace detail {

inline double poisson_inversion(double rate, Rng& rng) {
  const double u = rng.uniform();
  double p = std::exp(-rate);
  double cdf = p;
  double k = 0.0;
  while (u > cdf) {
    k += 1.0;
    p *= rate / k;
    cdf += p;
    if (p == 0.0 && cdf < u) break; // numerical tail exhausted
  }
  return k;
}

// Transformed rejection (PTRS, Hoermann 1993) for rate >= 10.
inline double poisson_ptrs(double rate, Rng& rng) {
  const double slam = std::sqrt(rate);
  const double loglam = std::log(rate);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double u = rng.uniform() - 0.5;
    const double v = rng.uniform();
    const double us = 0.5 - std::abs(u);
    const double k = std::floor((2.0 * a / us + b) * u + rate + 0.43);
    if (us >= 0.07 && v <= vr) return k;
    if (k < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
        -rate + k * loglam - std::lgamma(k + 1.0))
      return k;
  }
}

} // namespace detail

inline double sample(const Distribution& dist, Rng& rng) {
  return std::visit(
      [&](const auto& d) -> double {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, Gaussian>) {
          if (!(d.sigma > 0.0) || !std::isfinite(d.mu))
            throw ValidationError("gaussian: sigma must be positive");
          return d.mu + d.sigma * rng.normal();
        } else if constexpr (std::is_same_v<D, Bernoulli>) {
          if (!(d.p >= 0.0 && d.p <= 1.0)) throw ValidationError("bernoulli: p outside [0,1]");
          return rng.uniform() < d.p ? 1.0 : 0.0;
        } else if constexpr (std::is_same_v<D, Binomial>) {
          if (d.trials < 1) throw ValidationError("binomial: trials must be >= 1");
          if (!(d.p >= 0.0 && d.p <= 1.0)) throw ValidationError("binomial: p outside [0,1]");
          double k = 0.0;
          for (int i = 0; i < d.trials; ++i) k += rng.uniform() < d.p ? 1.0 : 0.0;
          return k;
        } else {
          if (!(d.rate > 0.0) || !std::isfinite(d.rate))
            throw ValidationError("poisson: rate must be positive");
          return d.rate < 30.0 ? detail::poisson_inversion(d.rate, rng)
                               : detail::poisson_ptrs(d.rate, rng);
        }
      },
      dist);
}

} // namespace ped::num

#endif // PED_RANDOM_HPP
