#ifndef PED_PEDSHALLOW_HPP
#define PED_PEDSHALLOW_HPP

// Shallow PED layer. For one observation y the MAP latent solves
//
//   z = f(z) = (1/lambda) W^T ( T(y) . rho(Wz+B) - sigma(Wz+B) )
//
// which is the stationarity condition of
//
//   (lambda/2)|z|^2 - R(Wz+B).T(y) + 1^T A(R(Wz+B)).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ped/canonical.hpp"
#include "ped/fpsolve.hpp"
#include "ped/kinksolve.hpp"

namespace ped {

/// Half-width of the band around zero in which a relu pre-activation is
/// treated as sitting on the kink.
inline constexpr double kBoundaryTol = 1e-9;

/// Poisson canonical parameters above this value are clamped inside sigma.
inline constexpr double kPoissonClamp = 30.0;

struct PedLayer {
  Matrix W;  // d x l
  Vector B;  // d
  double lambda = 1.0;
  ExpFamily family;
  CanonicalMap map;

  Eigen::Index d() const noexcept { return W.rows(); }
  Eigen::Index l() const noexcept { return W.cols(); }

  void validate() const {
    if (W.rows() != B.size())
      throw ValidationError("layer: W has " + std::to_string(W.rows()) + " rows but B has " +
                            std::to_string(B.size()) + " entries");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ValidationError("layer: lambda must be positive");
    num::require_finite(W, "layer W");
    num::require_finite(B, "layer B");
  }
};

/// Per-coordinate quantities at pre-activation eta = Wz + B.
struct LayerTerms {
  Vector eta, R, rho, rho1, mean, sigma, sigma1;
  std::int64_t clamped = 0;
};

inline LayerTerms layer_terms(const Vector& z, const PedLayer& layer) {
  LayerTerms t;
  t.eta = layer.W * z + layer.B;
  const auto d = t.eta.size();
  t.R.resize(d);
  t.rho.resize(d);
  t.rho1.resize(d);
  t.mean.resize(d);
  t.sigma.resize(d);
  t.sigma1.resize(d);
  const bool poisson = layer.family.kind() == FamilyKind::poisson;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double e = t.eta(i);
    if (!std::isfinite(e)) throw DivergenceError("pre-activation is not finite", i);
    double r = layer.map.R(e);
    t.R(i) = r;
    if (poisson && r > kPoissonClamp) {
      r = kPoissonClamp;
      ++t.clamped;
    }
    const double p = layer.map.rho(e);
    const double p1 = layer.map.rho1(e);
    const double a1 = layer.family.A1(r);
    t.rho(i) = p;
    t.rho1(i) = p1;
    t.mean(i) = a1;
    t.sigma(i) = a1 * p;
    t.sigma1(i) = layer.family.A2(r) * p * p + a1 * p1;
    if (!std::isfinite(t.sigma(i)) || !std::isfinite(t.sigma1(i)))
      throw DivergenceError("activation overflowed", i);
  }
  return t;
}

inline Vector sufficient_stat(const Vector& y, const ExpFamily& family) {
  Vector t(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) t(i) = family.T(y(i));
  return t;
}

inline void check_dims(const Vector& z, const Vector& y, const PedLayer& layer) {
  if (z.size() != layer.l())
    throw ValidationError("latent has dimension " + std::to_string(z.size()) + ", layer expects " +
                          std::to_string(layer.l()));
  if (y.size() != layer.d())
    throw ValidationError("observation has dimension " + std::to_string(y.size()) + ", layer expects " +
                          std::to_string(layer.d()));
}

/// f(z; y, W, B).
inline Vector layer_map(const Vector& z, const Vector& y, const PedLayer& layer, std::int64_t* clamp_count = nullptr) {
  check_dims(z, y, layer);
  const LayerTerms t = layer_terms(z, layer);
  if (clamp_count) *clamp_count += t.clamped;
  const Vector ty = sufficient_stat(y, layer.family);
  return layer.W.transpose() * (ty.cwiseProduct(t.rho) - t.sigma) / layer.lambda;
}

/// f with the listed units held inactive (used on the relu kink).
inline Vector layer_map_pinned(const Vector& z, const Vector& y, const PedLayer& layer, const std::vector<char>& pinned) {
  check_dims(z, y, layer);
  const LayerTerms t = layer_terms(z, layer);
  Vector u = sufficient_stat(y, layer.family).cwiseProduct(t.rho) - t.sigma;
  for (Eigen::Index i = 0; i < u.size(); ++i)
    if (pinned[static_cast<std::size_t>(i)]) u(i) = 0.0;
  return layer.W.transpose() * u / layer.lambda;
}

inline KinkProblem kink_problem(const Vector& y, const PedLayer& layer) {
  KinkProblem p;
  p.C = layer.W;
  p.b = layer.B;
  p.metric = Vector::Constant(layer.l(), layer.lambda);
  p.map = [&y, &layer](const Vector& z, const std::vector<char>& pinned) {
    return layer_map_pinned(z, y, layer, pinned);
  };
  p.slope = [&y, &layer](const Vector&) {
    Vector c(layer.d());
    const double a0 = layer.family.A1(layer.map.R(0.0));
    for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = a0 - layer.family.T(y(i));
    return c;
  };
  return p;
}

/// df/dz = (1/lambda) W^T diag(T rho' - sigma') W.
inline Matrix layer_jacobian(const Vector& z, const Vector& y, const PedLayer& layer) {
  check_dims(z, y, layer);
  const LayerTerms t = layer_terms(z, layer);
  const Vector ty = sufficient_stat(y, layer.family);
  const Vector c = ty.cwiseProduct(t.rho1) - t.sigma1;
  return layer.W.transpose() * c.asDiagonal() * layer.W / layer.lambda;
}

inline double neg_log_posterior(const Vector& z, const Vector& y, const PedLayer& layer) {
  check_dims(z, y, layer);
  const Vector eta = layer.W * z + layer.B;
  double v = 0.5 * layer.lambda * z.squaredNorm();
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double r = layer.map.R(eta(i));
    v += layer.family.A(r) - r * layer.family.T(y(i));
  }
  if (!std::isfinite(v)) throw DomainError("negative log posterior is not finite");
  return v;
}

/// Gradient lambda (z - f(z)).
inline Vector neg_log_posterior_grad(const Vector& z, const Vector& y, const PedLayer& layer) {
  return layer.lambda * (z - layer_map(z, y, layer));
}

inline bool on_boundary(const Vector& eta) {
  return eta.size() > 0 && eta.cwiseAbs().minCoeff() <= kBoundaryTol;
}

/// lambda I - W^T diag(T rho' - sigma') W.
inline Matrix hessian_latent(const Vector& z, const Vector& y, const PedLayer& layer) {
  check_dims(z, y, layer);
  if (layer.map.has_kink() && on_boundary(layer.W * z + layer.B))
    throw KinkError("hessian undefined: a pre-activation sits on the relu kink");
  const Eigen::Index l = layer.l();
  return layer.lambda * (Matrix::Identity(l, l) - layer_jacobian(z, y, layer));
}

struct LaplaceApprox {
  Vector mean;
  Matrix covariance;
};

inline LaplaceApprox laplace(const Vector& z_star, const Vector& y, const PedLayer& layer) {
  const Matrix h = hessian_latent(z_star, y, layer);
  return {z_star, num::spd_inverse(h)};
}

// ---------------------------------------------------------------------------
// Well-posedness

enum class AssumptionKind { always, assumption1, assumption2, inapplicable };

inline const char* verdict_name(AssumptionKind k) {
  switch (k) {
  case AssumptionKind::always: return "always admissible";
  case AssumptionKind::assumption1: return "assumption1";
  case AssumptionKind::assumption2: return "assumption2";
  case AssumptionKind::inapplicable: return "inapplicable";
  }
  return "?";
}

struct AssumptionReport {
  double kappa = std::numeric_limits<double>::quiet_NaN();
  double gram_norm = 0.0;
  bool satisfied = false;
  AssumptionKind which = AssumptionKind::inapplicable;
  /// Some supremum was taken over a finite probe grid.
  bool numerical = false;
  std::string note;

  /// "always admissible" | "satisfied" | "violated" | "inapplicable"
  std::string verdict() const {
    if (which == AssumptionKind::always) return "always admissible";
    if (which == AssumptionKind::inapplicable) return "inapplicable";
    return satisfied ? "satisfied" : "violated";
  }
};

struct KappaProbe {
  double lo = -50.0;
  double hi = 50.0;
  int points = 10001; // odd, so eta = 0 is on the grid
};

/// kappa and the spectral condition kappa |W^T W|_2 < 1. `data` supplies the
/// range of T(y); without it the family's support bounds are used.
inline AssumptionReport kappa(const PedLayer& layer, const std::optional<Matrix>& data = std::nullopt,
                              KappaProbe probe = {}) {
  layer.validate();
  AssumptionReport rep;
  rep.gram_norm = layer.W.size() ? num::gram_norm(layer.W) : 0.0;
  const auto& fam = layer.family;
  const auto& map = layer.map;
  const double lam = layer.lambda;

  std::vector<double> grid(static_cast<std::size_t>(probe.points));
  for (int i = 0; i < probe.points; ++i)
    grid[static_cast<std::size_t>(i)] = probe.lo + (probe.hi - probe.lo) * i / (probe.points - 1);
  const ActivationBundle bundle(fam, map);
  auto inf_sigma1 = [&] {
    double m = std::numeric_limits<double>::infinity();
    for (double e : grid) m = std::min(m, bundle.sigma1(e));
    return m;
  };

  if (map.is_linear()) {
    // rho' = 0, sigma' = A'' rho^2 >= 0: kappa <= 0 and any W is admissible
    rep.which = AssumptionKind::always;
    rep.kappa = -inf_sigma1() / lam;
    rep.numerical = true;
    rep.satisfied = true;
    return rep;
  }

  if (map.kind() == CanonicalKind::relu) {
    rep.which = AssumptionKind::assumption2;
    const auto a = fam.lipschitz_A1();
    if (!a) {
      rep.which = AssumptionKind::inapplicable;
      rep.note = fam.name() + " has no global Lipschitz constant for A'";
      return rep;
    }
    rep.kappa = *a / lam;
    rep.satisfied = rep.kappa * rep.gram_norm < 1.0;
    return rep;
  }

  rep.which = AssumptionKind::assumption1;
  if (fam.kind() == FamilyKind::poisson) {
    rep.which = AssumptionKind::inapplicable;
    rep.note = "poisson with a nonlinear canonical map: A' is not globally Lipschitz";
    return rep;
  }

  double t_lo, t_hi;
  if (data && data->size() > 0) {
    t_lo = std::numeric_limits<double>::infinity();
    t_hi = -t_lo;
    for (Eigen::Index j = 0; j < data->cols(); ++j)
      for (Eigen::Index i = 0; i < data->rows(); ++i) {
        const double t = fam.T((*data)(i, j));
        t_lo = std::min(t_lo, t);
        t_hi = std::max(t_hi, t);
      }
  } else if (const auto range = fam.statistic_range()) {
    t_lo = range->first;
    t_hi = range->second;
  } else {
    rep.which = AssumptionKind::inapplicable;
    rep.note = fam.name() + " has unbounded T(y); supply data to bound kappa";
    return rep;
  }

  rep.numerical = true;
  double sup = -std::numeric_limits<double>::infinity();
  if (const auto peak = map.sup_rho1_analytic()) {
    // rho' >= 0 with infimum 0 in the tails: sup_{T,eta} T rho' <= max(T_hi, 0) * peak
    sup = std::max(t_hi, 0.0) * *peak - inf_sigma1();
  } else {
    // joint supremum over eta on the grid; linear in T so the extremes suffice
    for (double e : grid) {
      const double p1 = map.rho1(e), s1 = bundle.sigma1(e);
      sup = std::max({sup, t_lo * p1 - s1, t_hi * p1 - s1});
    }
  }
  rep.kappa = sup / lam;
  rep.satisfied = rep.kappa * rep.gram_norm < 1.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Batch inference

struct InferOptions {
  SolverConfig solver;
  /// l x N initial latents; zero when absent.
  std::optional<Matrix> warm_start;
  /// Throw BatchNonConvergenceError if any column fails.
  bool throw_on_failure = true;
  /// For kinked maps: when a solve lands on the kink, retry once from the
  /// all-active start (1/lambda) W^T (T(y) - A'(R(B))).
  bool boundary_restart = true;
  /// For kinked maps: when iteration cycles across the kink, look for a
  /// minimiser with the cycling units pinned at zero (flagged as boundary).
  bool kink_fallback = true;
  int workers = 1;
};

struct InferResult {
  Matrix Z;
  std::vector<FixedPointResult> columns;
  std::vector<char> boundary;
  std::int64_t clamp_count = 0;
  bool well_posed = true;
  AssumptionReport assumption;

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

/// Run body(s) for s in [0, n) on `workers` threads; each index is handled
/// exactly once and results are written by index, so output order is fixed.
template <class Body> void parallel_for(std::size_t n, int workers, Body&& body) {
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
  if (w <= 1) {
    for (std::size_t s = 0; s < n; ++s) body(s);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(w);
  for (std::size_t k = 0; k < w; ++k) {
    pool.emplace_back([&, k] {
      try {
        for (std::size_t s = k; s < n; s += w) body(s);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline FixedPointResult solve_column(const Vector& y, const PedLayer& layer, const Vector& z0,
                                     const SolverConfig& cfg, std::int64_t& clamps) {
  std::int64_t local = 0;
  auto g = [&](const Vector& z) { return layer_map(z, y, layer, &local); };
  FixedPointResult r = anderson(g, z0, cfg);
  clamps += local;
  return r;
}

inline InferResult infer(const Matrix& Y, const PedLayer& layer, const InferOptions& opt = {}) {
  layer.validate();
  if (Y.rows() != layer.d())
    throw ValidationError("Y has " + std::to_string(Y.rows()) + " rows, layer expects " +
                          std::to_string(layer.d()));
  const auto N = Y.cols();
  if (opt.warm_start && (opt.warm_start->rows() != layer.l() || opt.warm_start->cols() != N))
    throw ValidationError("warm start has the wrong shape");

  InferResult out;
  out.assumption = kappa(layer, Y);
  out.well_posed = out.assumption.satisfied;
  out.Z = Matrix::Zero(layer.l(), N);
  out.columns.resize(static_cast<std::size_t>(N));
  out.boundary.assign(static_cast<std::size_t>(N), 0);
  std::vector<std::int64_t> clamps(static_cast<std::size_t>(N), 0);

  parallel_for(static_cast<std::size_t>(N), opt.workers, [&](std::size_t s) {
    const auto col = static_cast<Eigen::Index>(s);
    const Vector y = Y.col(col);
    const Vector z0 = opt.warm_start ? Vector(opt.warm_start->col(col)) : Vector::Zero(layer.l());
    FixedPointResult r = solve_column(y, layer, z0, opt.solver, clamps[s]);
    bool edge = r.converged && on_boundary(layer.W * r.z_star + layer.B);
    if (edge && layer.map.has_kink() && opt.boundary_restart) {
      Vector mean_at_bias(layer.d());
      for (Eigen::Index i = 0; i < layer.d(); ++i)
        mean_at_bias(i) = layer.family.A1(layer.map.R(layer.B(i)));
      const Vector start =
          layer.W.transpose() * (sufficient_stat(y, layer.family) - mean_at_bias) / layer.lambda;
      FixedPointResult retry = solve_column(y, layer, start, opt.solver, clamps[s]);
      if (retry.converged && !on_boundary(layer.W * retry.z_star + layer.B)) {
        retry.iterations += r.iterations;
        r = std::move(retry);
        edge = false;
      }
    }
    if (!r.converged && layer.map.has_kink() && opt.kink_fallback) {
      // mixing can stall on the jumps of the relu map where plain iteration settles
      FixedPointResult pr = picard([&](const Vector& z) { return layer_map(z, y, layer); }, r.z_star, opt.solver);
      if (pr.converged) {
        pr.iterations += r.iterations;
        r = std::move(pr);
        edge = on_boundary(layer.W * r.z_star + layer.B);
      }
    }
    if (!r.converged && layer.map.has_kink() && opt.kink_fallback) {
      const KinkSolve ks = kink_solve(kink_problem(y, layer), r.z_star, opt.solver);
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
    out.Z.col(col) = r.z_star;
    out.columns[s] = std::move(r);
  });
  for (auto c : clamps) out.clamp_count += c;

  if (opt.throw_on_failure) {
    const auto failed = out.failed_columns();
    if (!failed.empty()) {
      std::string msg = std::to_string(failed.size()) + " column(s) did not converge:";
      for (std::size_t i = 0; i < std::min<std::size_t>(failed.size(), 10); ++i)
        msg += " " + std::to_string(failed[i]);
      if (failed.size() > 10) msg += " ...";
      throw BatchNonConvergenceError(msg, failed);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// ReLU pattern enumeration

struct ReluCatalogEntry {
  std::vector<int> pattern;
  Vector z_star;
  bool converged = false;
  bool pattern_consistent = false;
  bool hessian_pd = false;
  bool boundary_flag = false;
};

struct ReluFixedPointCatalog {
  std::vector<ReluCatalogEntry> entries;

  std::size_t consistent_count() const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.pattern_consistent; }));
  }
  /// Index of the consistent entry within tol (inf-norm) of z, if any.
  std::optional<std::size_t> find(const Vector& z, double tol) const {
    for (std::size_t k = 0; k < entries.size(); ++k)
      if (entries[k].pattern_consistent && (entries[k].z_star - z).cwiseAbs().maxCoeff() <= tol) return k;
    return std::nullopt;
  }
};

/// Hessian with the dropout pattern held fixed: lambda I + W^T diag(P A''(eta)) W.
inline Matrix hessian_for_pattern(const Vector& z, const PedLayer& layer, const std::vector<int>& pattern) {
  const Vector eta = layer.W * z + layer.B;
  Vector c(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    c(i) = pattern[static_cast<std::size_t>(i)] ? layer.family.A2(eta(i)) : 0.0;
  const Eigen::Index l = layer.l();
  return layer.lambda * Matrix::Identity(l, l) + layer.W.transpose() * c.asDiagonal() * layer.W;
}

inline ReluFixedPointCatalog enumerate_relu_fixed_points(const Vector& y, const PedLayer& layer,
                                                         SolverConfig cfg = {1e-12, 5000, 5, 1.0}) {
  layer.validate();
  if (layer.map.kind() != CanonicalKind::relu || layer.map.negated())
    throw ValidationError("enumerate_relu_fixed_points needs a relu layer");
  if (layer.d() > 16) throw ValidationError("enumeration limited to d <= 16");
  if (y.size() != layer.d()) throw ValidationError("observation dimension does not match the layer");
  const AssumptionReport rep = kappa(layer);
  const auto d = static_cast<std::size_t>(layer.d());
  const Vector ty = sufficient_stat(y, layer.family);

  ReluFixedPointCatalog cat;
  for (std::uint32_t mask = 0; mask < (1u << d); ++mask) {
    ReluCatalogEntry e;
    e.pattern.resize(d);
    Vector p(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) {
      e.pattern[i] = (mask >> i) & 1u;
      p(static_cast<Eigen::Index>(i)) = e.pattern[i];
    }
    auto g = [&](const Vector& z) {
      const Vector eta = layer.W * z + layer.B;
      Vector u(eta.size());
      for (Eigen::Index i = 0; i < eta.size(); ++i) u(i) = p(i) * (ty(i) - layer.family.A1(eta(i)));
      return Vector(layer.W.transpose() * u / layer.lambda);
    };
    const FixedPointResult r = anderson(g, Vector::Zero(layer.l()), cfg);
    if (!r.converged && rep.satisfied)
      throw Error("pattern solve failed to converge although the contraction condition holds");
    e.converged = r.converged;
    e.z_star = r.z_star;
    const Vector eta = layer.W * r.z_star + layer.B;
    e.boundary_flag = on_boundary(eta);
    bool match = r.converged && !e.boundary_flag;
    for (std::size_t i = 0; i < d && match; ++i)
      match = (eta(static_cast<Eigen::Index>(i)) > 0.0 ? 1 : 0) == e.pattern[i];
    e.pattern_consistent = match;
    e.hessian_pd = num::is_positive_definite(hessian_for_pattern(r.z_star, layer, e.pattern));
    cat.entries.push_back(std::move(e));
  }
  return cat;
}

} // namespace ped

#endif // PED_PEDSHALLOW_HPP
