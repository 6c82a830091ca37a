#ifndef PED_DATAGEN_HPP
#define PED_DATAGEN_HPP

// Synthetic data: 2D shape latents, random weights, exponential-family
// observations (shallow and deep), scalar marginal draws.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ped/canonical.hpp"
#include "ped/expfam.hpp"
#include "ped/random.hpp"

namespace ped {

struct ShapeOptions {
  /// Half-diagonal of the diamond |x-4|+|y+4| <= r; sqrt(2)/2 is a unit square turned 45 degrees.
  double diamond_radius = std::sqrt(2.0) / 2.0;
  double lo = -5.0, hi = 5.0;
};

inline bool in_shapes(double x, double y, const ShapeOptions& opt = {}) {
  const auto sq = [](double v) { return v * v; };
  if (sq(x - 2.0) + sq(y - 2.0) <= 9.0) return true;
  if (sq(x + 3.0) + sq(y + 3.0) <= 4.0) return true;
  return std::abs(x - 4.0) + std::abs(y + 4.0) <= opt.diamond_radius;
}

struct ShapeLatents {
  Matrix Z; // 2 x M
  int resolution = 0;
};

/// Grid linspace(lo, hi, resolution)^2 filtered to the union of the shapes.
inline ShapeLatents make_shape_latents(int resolution, const ShapeOptions& opt = {}) {
  if (resolution < 2) throw ValidationError("resolution must be >= 2");
  std::vector<double> pts;
  const double step = (opt.hi - opt.lo) / (resolution - 1);
  for (int i = 0; i < resolution; ++i)
    for (int j = 0; j < resolution; ++j) {
      const double x = opt.lo + step * i, y = opt.lo + step * j;
      if (in_shapes(x, y, opt)) {
        pts.push_back(x);
        pts.push_back(y);
      }
    }
  ShapeLatents s;
  s.resolution = resolution;
  s.Z = Eigen::Map<const Matrix>(pts.data(), 2, static_cast<Eigen::Index>(pts.size() / 2));
  return s;
}

/// m columns drawn without replacement, kept in grid order.
inline ShapeLatents subsample_latents(const ShapeLatents& all, Eigen::Index m, std::uint64_t seed) {
  const auto M = all.Z.cols();
  if (m < 0 || m > M) throw ValidationError("cannot draw " + std::to_string(m) + " of " + std::to_string(M) + " points");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(M));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  num::Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(static_cast<std::size_t>(m));
  std::sort(idx.begin(), idx.end());
  ShapeLatents out;
  out.resolution = all.resolution;
  out.Z.resize(2, m);
  for (Eigen::Index j = 0; j < m; ++j) out.Z.col(j) = all.Z.col(idx[static_cast<std::size_t>(j)]);
  return out;
}

struct Dataset {
  Matrix Y;      // d x M
  Matrix W_true; // d x 2
  Matrix Z_true; // 2 x M
  std::int64_t clamp_count = 0;
};

namespace detail {

inline Matrix gaussian_matrix(Eigen::Index r, Eigen::Index c, double variance, num::Rng& rng) {
  Matrix m(r, c);
  const double sd = std::sqrt(variance);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = sd * rng.normal();
  return m;
}

// Draw each entry at canonical parameter R(eta); Poisson rates are clamped like the layer map.
inline Matrix sample_observations(const Matrix& eta, const ExpFamily& family, const CanonicalMap& map,
                                  num::Rng& rng, std::int64_t& clamps) {
  Matrix Y(eta.rows(), eta.cols());
  const bool poisson = family.kind() == FamilyKind::poisson;
  for (Eigen::Index s = 0; s < eta.cols(); ++s)
    for (Eigen::Index i = 0; i < eta.rows(); ++i) {
      double r = map.R(eta(i, s));
      if (poisson && r > 30.0) {
        r = 30.0;
        ++clamps;
      }
      Y(i, s) = family.sample(r, rng);
    }
  return Y;
}

} // namespace detail

/// W_true ~ N(0, w_variance) entrywise, Y_s ~ family at R(W_true Z_s).
inline Dataset sample_dataset(const ShapeLatents& latents, Eigen::Index d, const ExpFamily& family,
                              const CanonicalMap& map, std::uint64_t seed, double w_variance = 0.5) {
  if (d < 1) throw ValidationError("d must be >= 1");
  const num::Rng root(seed);
  num::Rng wr = root.split(1), yr = root.split(2);
  Dataset out;
  out.Z_true = latents.Z;
  out.W_true = detail::gaussian_matrix(d, latents.Z.rows(), w_variance, wr);
  out.Y = detail::sample_observations(out.W_true * latents.Z, family, map, yr, out.clamp_count);
  return out;
}

struct DeepDataset {
  Matrix Y;
  /// Z[l-1] = Z^(l) for l = 1..L; Z[L-1] are the shape latents.
  std::vector<Matrix> Z;
  /// W[l-1] = W^(l), d^(l-1) x d^(l).
  std::vector<Matrix> W;
  std::int64_t clamp_count = 0;
};

/// dims = (d^(0), ..., d^(L-1)); d^(L) = 2 from the latents. maps[l-1] is R^(l).
/// W^(l) ~ N(0, 1/d^(l)); Z^(l-1) ~ N(R^(l)(W^(l) Z^(l)), I) for l > 1 and the data
/// layer uses `data_family`.
inline DeepDataset sample_deep_dataset(const ShapeLatents& latents, const std::vector<Eigen::Index>& dims,
                                       const std::vector<CanonicalMap>& maps, std::uint64_t seed,
                                       const ExpFamily& data_family = make_family("gaussian")) {
  if (dims.empty()) throw ValidationError("deep dataset needs at least one layer");
  if (maps.size() != dims.size()) throw ValidationError("need one canonical map per layer");
  for (auto d : dims)
    if (d < 1) throw ValidationError("layer widths must be >= 1");
  const std::size_t L = dims.size();
  std::vector<Eigen::Index> all = dims;
  all.push_back(latents.Z.rows());
  const num::Rng root(seed);
  DeepDataset out;
  out.Z.resize(L);
  out.W.resize(L);
  out.Z[L - 1] = latents.Z;
  const ExpFamily gauss = make_family("gaussian");
  for (std::size_t l = L; l >= 1; --l) {
    num::Rng wr = root.split(2 * l + 1), zr = root.split(2 * l + 2);
    out.W[l - 1] = detail::gaussian_matrix(all[l - 1], all[l], 1.0 / static_cast<double>(all[l]), wr);
    const Matrix eta = out.W[l - 1] * out.Z[l - 1];
    const ExpFamily& fam = l == 1 ? data_family : gauss;
    Matrix below = detail::sample_observations(eta, fam, maps[l - 1], zr, out.clamp_count);
    if (l == 1)
      out.Y = std::move(below);
    else
      out.Z[l - 2] = std::move(below);
  }
  return out;
}

struct MarginalDraws {
  Vector w, z, r, y; // r = R(w z)
};

/// n ancestral draws w ~ N(0,1), z ~ N(0, 1/lambda_prior), y ~ family at R(w z).
inline MarginalDraws marginal_samples(const ExpFamily& family, const CanonicalMap& map, Eigen::Index n,
                                      double lambda_prior, std::uint64_t seed) {
  if (n < 1) throw ValidationError("need at least one draw");
  if (!(lambda_prior > 0.0)) throw ValidationError("lambda_prior must be positive");
  num::Rng rng(seed);
  MarginalDraws out;
  out.w.resize(n);
  out.z.resize(n);
  out.r.resize(n);
  out.y.resize(n);
  const double sz = 1.0 / std::sqrt(lambda_prior);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.w(i) = rng.normal();
    out.z(i) = sz * rng.normal();
    out.r(i) = map.R(out.w(i) * out.z(i));
    out.y(i) = family.sample(out.r(i), rng);
  }
  return out;
}

} // namespace ped

#endif // PED_DATAGEN_HPP
