#ifndef PED_PEDDEEP_HPP
#define PED_PEDDEEP_HPP

// Deep PED over L Gaussian layers. Layer l has W^(l) (d^(l-1) x d^(l)),
// B^(l), precision lambda_l and canonical map R^(l); Z^(0) = y and
// lambda_0 is the data precision. The generative convention is
//
//   Z^(l-1) | Z^(l) ~ N( lambda_{l-1}^{-1/2} R^(l)(W^(l) Z^(l) + B^(l)), lambda_{l-1}^{-1} I ),
//   Z^(L) ~ N(0, lambda_L^{-1} I),
//
// whose negative log posterior (constants dropped) is
//
//   sum_l [ -sqrt(lambda_{l-1}) Z^(l-1).R^(l) + |R^(l)|^2 / 2 + (lambda_l / 2) |Z^(l)|^2 ].
//
// Its gradient in Z^(l) is lambda_l (Z^(l) - G^(l)) with
//
//   G^(l) = (1/lambda_l) W^(l)T ( rho^(l) . sqrt(lambda_{l-1}) Z^(l-1) - R^(l) rho^(l) )
//         + (1/sqrt(lambda_l)) R^(l+1)        (second term absent for l = L)
//
// so the MAP of the stacked state zeta = (Z^(1), ..., Z^(L)) solves zeta = G(zeta).

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ped/pedshallow.hpp"

namespace ped {

struct DeepPedSpec {
  double data_precision = 1.0;
  std::vector<PedLayer> layers;

  std::size_t depth() const noexcept { return layers.size(); }
  Eigen::Index data_dim() const { return layers.front().W.rows(); }
  /// d^(l) for l = 1..L (index l-1).
  Eigen::Index dim(std::size_t l) const { return layers[l - 1].W.cols(); }
  Eigen::Index state_dim() const {
    Eigen::Index D = 0;
    for (const auto& layer : layers) D += layer.W.cols();
    return D;
  }
  /// Offset of Z^(l) inside zeta.
  Eigen::Index offset(std::size_t l) const {
    Eigen::Index o = 0;
    for (std::size_t k = 1; k < l; ++k) o += layers[k - 1].W.cols();
    return o;
  }
  /// lambda_l with lambda_0 the data precision.
  double precision(std::size_t l) const { return l == 0 ? data_precision : layers[l - 1].lambda; }

  void validate() const {
    if (layers.empty()) throw ValidationError("deep spec needs at least one layer");
    if (!(data_precision > 0.0) || !std::isfinite(data_precision))
      throw ValidationError("data precision must be positive");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].validate();
      if (!layers[l].family.is_quadratic())
        throw ValidationError("deep layers must use the gaussian family (layer " + std::to_string(l + 1) + ")");
      if (l + 1 < layers.size() && layers[l].W.cols() != layers[l + 1].W.rows())
        throw ValidationError("layer " + std::to_string(l + 1) + " has " + std::to_string(layers[l].W.cols()) +
                              " latent dims but layer " + std::to_string(l + 2) + " expects " +
                              std::to_string(layers[l + 1].W.rows()));
    }
  }
};

/// Coordinate range of each layer inside zeta.
struct AugmentedLayout {
  std::vector<Eigen::Index> offsets; // size L + 1, last entry = D

  explicit AugmentedLayout(const DeepPedSpec& spec) {
    offsets.push_back(0);
    for (const auto& layer : spec.layers) offsets.push_back(offsets.back() + layer.W.cols());
  }
  Eigen::Index size(std::size_t l) const { return offsets[l] - offsets[l - 1]; }
  auto slice(Vector& zeta, std::size_t l) const { return zeta.segment(offsets[l - 1], size(l)); }
  auto slice(const Vector& zeta, std::size_t l) const { return zeta.segment(offsets[l - 1], size(l)); }
};

namespace detail {

// Per-layer terms for quadratic A: sigma = R rho, sigma' = rho^2 + R rho'.
struct DeepTerms {
  std::vector<Vector> prev;  // sqrt(lambda_{l-1}) Z^(l-1)
  std::vector<Vector> eta, R, rho, rho1;
};

// `pinned` (per layer, optional) forces units inactive: R = rho = rho' = 0.
using LayerMasks = std::vector<std::vector<char>>;

inline DeepTerms deep_terms(const Vector& zeta, const Vector& y, const DeepPedSpec& spec,
                            const LayerMasks* pinned = nullptr) {
  const AugmentedLayout lay(spec);
  if (zeta.size() != lay.offsets.back())
    throw ValidationError("augmented state has dimension " + std::to_string(zeta.size()) + ", spec expects " +
                          std::to_string(lay.offsets.back()));
  if (y.size() != spec.data_dim())
    throw ValidationError("observation has dimension " + std::to_string(y.size()) + ", spec expects " +
                          std::to_string(spec.data_dim()));
  const std::size_t L = spec.depth();
  DeepTerms t;
  t.prev.resize(L);
  t.eta.resize(L);
  t.R.resize(L);
  t.rho.resize(L);
  t.rho1.resize(L);
  for (std::size_t l = 1; l <= L; ++l) {
    const auto& layer = spec.layers[l - 1];
    const Vector below = l == 1 ? y : Vector(lay.slice(zeta, l - 1));
    t.prev[l - 1] = std::sqrt(spec.precision(l - 1)) * below;
    const Vector eta = layer.W * lay.slice(zeta, l) + layer.B;
    Vector R(eta.size()), rho(eta.size()), rho1(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      if (!std::isfinite(eta(i))) throw DivergenceError("deep pre-activation is not finite", lay.offsets[l - 1]);
      R(i) = layer.map.R(eta(i));
      rho(i) = layer.map.rho(eta(i));
      rho1(i) = layer.map.rho1(eta(i));
      if (pinned && !(*pinned)[l - 1].empty() && (*pinned)[l - 1][static_cast<std::size_t>(i)])
        R(i) = rho(i) = rho1(i) = 0.0;
    }
    t.eta[l - 1] = eta;
    t.R[l - 1] = R;
    t.rho[l - 1] = rho;
    t.rho1[l - 1] = rho1;
  }
  return t;
}

inline void require_off_kink(const DeepTerms& t, const DeepPedSpec& spec) {
  for (std::size_t l = 0; l < spec.depth(); ++l)
    if (spec.layers[l].map.has_kink() && on_boundary(t.eta[l]))
      throw KinkError("layer " + std::to_string(l + 1) + " has a pre-activation on the relu kink");
}

} // namespace detail

/// G(zeta) for one observation y.
inline Vector deep_map(const Vector& zeta, const Vector& y, const DeepPedSpec& spec,
                       const detail::LayerMasks* pinned = nullptr) {
  const auto t = detail::deep_terms(zeta, y, spec, pinned);
  const AugmentedLayout lay(spec);
  Vector out(zeta.size());
  const std::size_t L = spec.depth();
  for (std::size_t l = 1; l <= L; ++l) {
    const auto& layer = spec.layers[l - 1];
    const double lam = layer.lambda;
    const Vector u = t.rho[l - 1].cwiseProduct(t.prev[l - 1] - t.R[l - 1]);
    Vector g = layer.W.transpose() * u / lam;
    if (l < L) g += t.R[l] / std::sqrt(lam);
    lay.slice(out, l) = g;
  }
  return out;
}

inline double deep_neg_log_posterior(const Vector& zeta, const Vector& y, const DeepPedSpec& spec) {
  const auto t = detail::deep_terms(zeta, y, spec);
  const AugmentedLayout lay(spec);
  double v = 0.0;
  for (std::size_t l = 1; l <= spec.depth(); ++l) {
    v += -t.prev[l - 1].dot(t.R[l - 1]) + 0.5 * t.R[l - 1].squaredNorm();
    v += 0.5 * spec.precision(l) * lay.slice(zeta, l).squaredNorm();
  }
  return v;
}

/// Analytic gradient of the deep negative log posterior.
inline Vector deep_neg_log_posterior_grad(const Vector& zeta, const Vector& y, const DeepPedSpec& spec) {
  const auto t = detail::deep_terms(zeta, y, spec);
  const AugmentedLayout lay(spec);
  Vector g(zeta.size());
  for (std::size_t l = 1; l <= spec.depth(); ++l) {
    const auto& layer = spec.layers[l - 1];
    Vector gl = spec.precision(l) * lay.slice(zeta, l) -
                layer.W.transpose() * t.rho[l - 1].cwiseProduct(t.prev[l - 1] - t.R[l - 1]);
    if (l < spec.depth()) gl -= std::sqrt(spec.precision(l)) * t.R[l];
    lay.slice(g, l) = gl;
  }
  return g;
}

/// Block-tridiagonal matrix: diag[l] is (l,l), super[l] is (l,l+1), sub[l] is (l+1,l), 0-based.
struct BlockTridiag {
  std::vector<Matrix> diag, super, sub;

  Matrix dense() const {
    Eigen::Index D = 0;
    for (const auto& b : diag) D += b.rows();
    Matrix m = Matrix::Zero(D, D);
    Eigen::Index o = 0;
    for (std::size_t l = 0; l < diag.size(); ++l) {
      const auto n = diag[l].rows();
      m.block(o, o, n, n) = diag[l];
      if (l + 1 < diag.size()) {
        const auto n2 = diag[l + 1].rows();
        m.block(o, o + n, n, n2) = super[l];
        m.block(o + n, o, n2, n) = sub[l];
      }
      o += n;
    }
    return m;
  }
};

/// dG/dzeta.
inline BlockTridiag jacobian_blocks(const Vector& zeta, const Vector& y, const DeepPedSpec& spec) {
  const auto t = detail::deep_terms(zeta, y, spec);
  detail::require_off_kink(t, spec);
  const std::size_t L = spec.depth();
  BlockTridiag j;
  for (std::size_t l = 1; l <= L; ++l) {
    const auto& layer = spec.layers[l - 1];
    const double lam = layer.lambda;
    const Vector& rho = t.rho[l - 1];
    const Vector sigma1 = rho.cwiseProduct(rho) + t.R[l - 1].cwiseProduct(t.rho1[l - 1]);
    const Vector c = t.rho1[l - 1].cwiseProduct(t.prev[l - 1]) - sigma1;
    j.diag.push_back(layer.W.transpose() * c.asDiagonal() * layer.W / lam);
    if (l < L) {
      const auto& above = spec.layers[l];
      // dG^(l)/dZ^(l+1) and dG^(l+1)/dZ^(l)
      j.super.push_back(t.rho[l].asDiagonal() * above.W / std::sqrt(lam));
      j.sub.push_back(std::sqrt(lam) / above.lambda * above.W.transpose() * t.rho[l].asDiagonal());
    }
  }
  return j;
}

/// Hessian of the deep negative log posterior, Lambda (I - dG/dzeta).
inline BlockTridiag hessian_blocks(const Vector& zeta, const Vector& y, const DeepPedSpec& spec) {
  BlockTridiag h = jacobian_blocks(zeta, y, spec);
  for (std::size_t l = 1; l <= spec.depth(); ++l) {
    const double lam = spec.precision(l);
    Matrix& b = h.diag[l - 1];
    b = lam * (Matrix::Identity(b.rows(), b.cols()) - b);
    if (l < spec.depth()) h.super[l - 1] *= -lam;
    if (l > 1) h.sub[l - 2] *= -lam;
  }
  return h;
}

struct DeepInferResult {
  Matrix zeta;       // D x N
  Matrix bottleneck; // d^(L) x N
  std::vector<FixedPointResult> columns;
  std::vector<char> boundary;

  std::vector<std::size_t> failed_columns() const {
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < columns.size(); ++s)
      if (!columns[s].converged) out.push_back(s);
    return out;
  }
  std::size_t boundary_count() const {
    return static_cast<std::size_t>(std::count(boundary.begin(), boundary.end(), char(1)));
  }
  double mean_iterations() const {
    if (columns.empty()) return 0.0;
    double s = 0.0;
    for (const auto& c : columns) s += c.iterations;
    return s / static_cast<double>(columns.size());
  }
};

inline bool deep_on_boundary(const Vector& zeta, const Vector& y, const DeepPedSpec& spec) {
  const auto t = detail::deep_terms(zeta, y, spec);
  for (std::size_t l = 0; l < spec.depth(); ++l)
    if (spec.layers[l].map.has_kink() && on_boundary(t.eta[l])) return true;
  return false;
}

/// Bottom-up pass with every unit active, used to leave the all-zero kink.
inline Vector deep_active_start(const Vector& y, const DeepPedSpec& spec) {
  const AugmentedLayout lay(spec);
  Vector zeta = Vector::Zero(lay.offsets.back());
  Vector below = y;
  for (std::size_t l = 1; l <= spec.depth(); ++l) {
    const auto& layer = spec.layers[l - 1];
    Vector rb(layer.B.size());
    for (Eigen::Index i = 0; i < rb.size(); ++i) rb(i) = layer.map.R(layer.B(i));
    const Vector z = layer.W.transpose() * (std::sqrt(spec.precision(l - 1)) * below - rb) / layer.lambda;
    lay.slice(zeta, l) = z;
    below = z;
  }
  return zeta;
}

/// Kinked units of every relu layer, in layer order.
inline KinkProblem deep_kink_problem(const Vector& y, const DeepPedSpec& spec) {
  const AugmentedLayout lay(spec);
  const Eigen::Index D = lay.offsets.back();
  Eigen::Index units = 0;
  for (const auto& layer : spec.layers)
    if (layer.map.has_kink()) units += layer.W.rows();
  KinkProblem p;
  p.C = Matrix::Zero(units, D);
  p.b = Vector::Zero(units);
  p.metric.resize(D);
  Eigen::Index r = 0;
  for (std::size_t l = 1; l <= spec.depth(); ++l) {
    const auto& layer = spec.layers[l - 1];
    p.metric.segment(lay.offsets[l - 1], lay.size(l)).setConstant(layer.lambda);
    if (!layer.map.has_kink()) continue;
    p.C.block(r, lay.offsets[l - 1], layer.W.rows(), layer.W.cols()) = layer.W;
    p.b.segment(r, layer.W.rows()) = layer.B;
    r += layer.W.rows();
  }
  auto split = [&spec](const std::vector<char>& flat) {
    detail::LayerMasks m(spec.depth());
    std::size_t k = 0;
    for (std::size_t l = 0; l < spec.depth(); ++l)
      if (spec.layers[l].map.has_kink()) {
        m[l].assign(flat.begin() + static_cast<std::ptrdiff_t>(k),
                    flat.begin() + static_cast<std::ptrdiff_t>(k + static_cast<std::size_t>(spec.layers[l].W.rows())));
        k += static_cast<std::size_t>(spec.layers[l].W.rows());
      }
    return m;
  };
  p.map = [&y, &spec, split](const Vector& zeta, const std::vector<char>& flat) {
    const auto masks = split(flat);
    return deep_map(zeta, y, spec, &masks);
  };
  // NLP term -prev.R + R^2/2 has right slope -prev at eta = 0
  p.slope = [&y, &spec](const Vector& zeta) {
    const auto t = detail::deep_terms(zeta, y, spec);
    std::vector<double> c;
    for (std::size_t l = 0; l < spec.depth(); ++l)
      if (spec.layers[l].map.has_kink())
        for (Eigen::Index i = 0; i < t.prev[l].size(); ++i) c.push_back(-t.prev[l](i));
    return Vector(Eigen::Map<const Vector>(c.data(), static_cast<Eigen::Index>(c.size())));
  };
  return p;
}

inline DeepInferResult infer_deep(const Matrix& Y, const DeepPedSpec& spec, const InferOptions& opt = {}) {
  spec.validate();
  if (Y.rows() != spec.data_dim())
    throw ValidationError("Y has " + std::to_string(Y.rows()) + " rows, spec expects " +
                          std::to_string(spec.data_dim()));
  const Eigen::Index D = spec.state_dim();
  const auto N = Y.cols();
  if (opt.warm_start && (opt.warm_start->rows() != D || opt.warm_start->cols() != N))
    throw ValidationError("warm start has the wrong shape");
  bool kinked = false;
  for (const auto& layer : spec.layers) kinked = kinked || layer.map.has_kink();

  DeepInferResult out;
  out.zeta = Matrix::Zero(D, N);
  out.columns.resize(static_cast<std::size_t>(N));
  out.boundary.assign(static_cast<std::size_t>(N), 0);
  parallel_for(static_cast<std::size_t>(N), opt.workers, [&](std::size_t s) {
    const auto col = static_cast<Eigen::Index>(s);
    const Vector y = Y.col(col);
    auto g = [&](const Vector& z) { return deep_map(z, y, spec); };
    const Vector z0 = opt.warm_start ? Vector(opt.warm_start->col(col)) : Vector::Zero(D);
    FixedPointResult r = anderson(g, z0, opt.solver);
    bool edge = r.converged && deep_on_boundary(r.z_star, y, spec);
    if (edge && kinked && opt.boundary_restart) {
      FixedPointResult retry = anderson(g, deep_active_start(y, spec), opt.solver);
      if (retry.converged && !deep_on_boundary(retry.z_star, y, spec)) {
        retry.iterations += r.iterations;
        r = std::move(retry);
        edge = false;
      }
    }
    if (!r.converged && kinked && opt.kink_fallback) {
      FixedPointResult pr = picard(g, r.z_star, opt.solver);
      if (pr.converged) {
        pr.iterations += r.iterations;
        r = std::move(pr);
        edge = deep_on_boundary(r.z_star, y, spec);
      }
    }
    if (!r.converged && kinked && opt.kink_fallback) {
      const KinkSolve ks = kink_solve(deep_kink_problem(y, spec), r.z_star, opt.solver);
      if (ks.ok) {
        r.z_star = ks.x;
        r.converged = true;
        r.diverged = false;
        r.residual = ks.inner.residual;
        r.iterations += ks.inner.iterations;
        r.message = ks.message;
        edge = true;
      }
    }
    out.boundary[s] = edge ? 1 : 0;
    out.zeta.col(col) = r.z_star;
    out.columns[s] = std::move(r);
  });
  const AugmentedLayout lay(spec);
  out.bottleneck = out.zeta.bottomRows(lay.size(spec.depth()));

  if (opt.throw_on_failure) {
    const auto failed = out.failed_columns();
    if (!failed.empty())
      throw BatchNonConvergenceError(std::to_string(failed.size()) + " column(s) did not converge", failed);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pattern enumeration for small relu specs

struct DeepReluCatalogEntry {
  std::vector<int> pattern; // concatenated over eta^(1), ..., eta^(L)
  Vector zeta;
  bool solvable = false;
  bool pattern_consistent = false;
};

/// For every dropout pattern P the map G_P is affine; solve (I - J_P) zeta = G_P(0)
/// directly and keep the solutions whose realised pattern equals P.
inline std::vector<DeepReluCatalogEntry> enumerate_deep_relu_fixed_points(const Vector& y, const DeepPedSpec& spec) {
  spec.validate();
  std::size_t bits = 0;
  for (const auto& layer : spec.layers) {
    if (layer.map.kind() != CanonicalKind::relu || layer.map.negated())
      throw ValidationError("deep enumeration needs relu maps in every layer");
    bits += static_cast<std::size_t>(layer.W.rows());
  }
  if (bits > 16) throw ValidationError("deep enumeration limited to 16 pre-activation units");
  const AugmentedLayout lay(spec);
  const Eigen::Index D = lay.offsets.back();
  const std::size_t L = spec.depth();

  std::vector<DeepReluCatalogEntry> out;
  for (std::uint32_t mask = 0; mask < (1u << bits); ++mask) {
    DeepReluCatalogEntry e;
    e.pattern.resize(bits);
    for (std::size_t i = 0; i < bits; ++i) e.pattern[i] = (mask >> i) & 1u;
    std::vector<Vector> P(L);
    std::size_t k = 0;
    for (std::size_t l = 0; l < L; ++l) {
      P[l].resize(spec.layers[l].W.rows());
      for (Eigen::Index i = 0; i < P[l].size(); ++i) P[l](i) = e.pattern[k++];
    }
    // G_P(zeta) = A zeta + c with R = P.eta, rho = P
    auto GP = [&](const Vector& zeta) {
      Vector g(D);
      for (std::size_t l = 1; l <= L; ++l) {
        const auto& layer = spec.layers[l - 1];
        const Vector below = l == 1 ? y : Vector(lay.slice(zeta, l - 1));
        const Vector eta = layer.W * lay.slice(zeta, l) + layer.B;
        const Vector u = P[l - 1].cwiseProduct(std::sqrt(spec.precision(l - 1)) * below - eta);
        Vector gl = layer.W.transpose() * u / layer.lambda;
        if (l < L) {
          const auto& above = spec.layers[l];
          const Vector eta_up = above.W * lay.slice(zeta, l + 1) + above.B;
          gl += P[l].cwiseProduct(eta_up) / std::sqrt(layer.lambda);
        }
        lay.slice(g, l) = gl;
      }
      return g;
    };
    const Vector c = GP(Vector::Zero(D));
    Matrix A(D, D);
    for (Eigen::Index j = 0; j < D; ++j) A.col(j) = GP(Vector::Unit(D, j)) - c;
    const Matrix M = Matrix::Identity(D, D) - A;
    Eigen::FullPivLU<Matrix> lu(M);
    if (lu.isInvertible()) {
      e.solvable = true;
      e.zeta = lu.solve(c);
      bool match = true;
      std::size_t b = 0;
      for (std::size_t l = 1; l <= L && match; ++l) {
        const Vector eta = spec.layers[l - 1].W * lay.slice(e.zeta, l) + spec.layers[l - 1].B;
        for (Eigen::Index i = 0; i < eta.size() && match; ++i, ++b)
          match = std::abs(eta(i)) > kBoundaryTol && (eta(i) > 0.0 ? 1 : 0) == e.pattern[b];
      }
      e.pattern_consistent = match;
    }
    out.push_back(std::move(e));
  }
  return out;
}

} // namespace ped

#endif // PED_PEDDEEP_HPP
