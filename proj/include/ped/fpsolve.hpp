#ifndef PED_FPSOLVE_HPP
#define PED_FPSOLVE_HPP

// Fixed-point solvers for z = g(z): damped Picard iteration and Anderson
// mixing with a residual-growth safeguard.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <string>

#include "ped/numkernel.hpp"
#include "ped/random.hpp"

namespace ped {

using FixedPointMap = std::function<Vector(const Vector&)>;

struct SolverConfig {
  double tol = 1e-8;
  int max_iter = 500;
  int anderson_memory = 5;
  double damping = 1.0;

  void validate() const {
    if (!(tol > 0.0)) throw ValidationError("solver tol must be positive");
    if (max_iter < 1) throw ValidationError("solver max_iter must be >= 1");
    if (anderson_memory < 1) throw ValidationError("anderson memory must be >= 1");
    if (!(damping > 0.0 && damping <= 1.0)) throw ValidationError("damping must lie in (0,1]");
  }
};

struct FixedPointResult {
  Vector z_star;
  double residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
  std::optional<double> contraction_estimate;
  std::string message;
};

inline constexpr double kDivergenceBound = 1e12;

namespace detail {

inline double inf_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Evaluate g, turning overflow into a flagged result instead of an exception.
inline bool safe_eval(const FixedPointMap& g, const Vector& x, Vector& gx, std::string& msg) {
  try {
    gx = g(x);
  } catch (const DivergenceError& e) {
    msg = e.what();
    return false;
  }
  if (gx.size() != x.size()) throw ValidationError("fixed-point map changed the state dimension");
  if (!num::all_finite(gx)) {
    msg = "fixed-point map returned a non-finite value";
    return false;
  }
  return true;
}

inline bool blown_up(const Vector& x) { return !num::all_finite(x) || inf_norm(x) > kDivergenceBound; }

} // namespace detail

inline FixedPointResult picard(const FixedPointMap& g, const Vector& z0, const SolverConfig& cfg = {}) {
  cfg.validate();
  FixedPointResult res;
  Vector x = z0;
  Vector gx;
  for (int it = 0;; ++it) {
    res.iterations = it;
    if (!detail::safe_eval(g, x, gx, res.message)) {
      res.diverged = true;
      break;
    }
    res.residual = detail::inf_norm(x - gx);
    if (res.residual <= cfg.tol) {
      res.converged = true;
      break;
    }
    if (it >= cfg.max_iter) {
      res.message = "iteration budget exhausted";
      break;
    }
    x = (1.0 - cfg.damping) * x + cfg.damping * gx;
    if (detail::blown_up(x)) {
      res.diverged = true;
      res.message = "iterate exceeded the divergence bound";
      break;
    }
  }
  res.z_star = x;
  return res;
}

inline FixedPointResult anderson(const FixedPointMap& g, const Vector& z0, const SolverConfig& cfg = {}) {
  cfg.validate();
  // effective damping; shrinks permanently when a backtracked step is needed
  double beta = cfg.damping;
  FixedPointResult res;

  Vector x = z0;
  Vector gx;
  if (!detail::safe_eval(g, x, gx, res.message)) {
    res.diverged = true;
    res.z_star = x;
    return res;
  }
  Vector f = gx - x;
  res.residual = detail::inf_norm(f);

  std::deque<Vector> dx, df; // differences of consecutive iterates / residuals
  int it = 0;
  while (res.residual > cfg.tol) {
    if (it >= cfg.max_iter) {
      res.message = "iteration budget exhausted";
      break;
    }
    ++it;

    Vector x_new;
    if (dx.empty()) {
      x_new = x + beta * f;
    } else {
      const auto m = static_cast<Eigen::Index>(dx.size());
      Matrix dX(x.size(), m), dF(x.size(), m);
      for (Eigen::Index j = 0; j < m; ++j) {
        dX.col(j) = dx[static_cast<std::size_t>(j)];
        dF.col(j) = df[static_cast<std::size_t>(j)];
      }
      Matrix gram = dF.transpose() * dF;
      const double scale = gram.diagonal().maxCoeff();
      if (!(scale > 0.0) || !std::isfinite(scale)) {
        x_new = x + beta * f;
        dx.clear();
        df.clear();
      } else {
        gram.diagonal().array() += 1e-10 * scale;
        Eigen::LDLT<Matrix> ldlt(gram);
        const Vector gamma = ldlt.solve(dF.transpose() * f);
        if (ldlt.info() != Eigen::Success || !num::all_finite(gamma)) {
          x_new = x + beta * f; // degenerate least squares
          dx.clear();
          df.clear();
        } else {
          x_new = x + beta * f - (dX + beta * dF) * gamma;
        }
      }
    }

    Vector g_new;
    bool ok = !detail::blown_up(x_new) && detail::safe_eval(g, x_new, g_new, res.message);
    Vector f_new = ok ? Vector(g_new - x_new) : Vector();
    double r_new = ok ? detail::inf_norm(f_new) : std::numeric_limits<double>::infinity();

    if (r_new > 10.0 * res.residual) {
      // reject the mixed step; fall back to damped Picard with backtracking
      dx.clear();
      df.clear();
      double step = beta;
      ok = false;
      for (int halving = 0; halving < 40; ++halving, step *= 0.5) {
        x_new = x + step * f;
        if (detail::blown_up(x_new) || !detail::safe_eval(g, x_new, g_new, res.message)) continue;
        f_new = g_new - x_new;
        r_new = detail::inf_norm(f_new);
        ok = true;
        if (r_new <= 10.0 * res.residual) break;
      }
      if (!ok) {
        res.diverged = true;
        if (res.message.empty()) res.message = "no admissible step from the current iterate";
        break;
      }
      beta = step;
    }

    dx.push_back(x_new - x);
    df.push_back(f_new - f);
    while (static_cast<int>(dx.size()) > cfg.anderson_memory) {
      dx.pop_front();
      df.pop_front();
    }
    x = std::move(x_new);
    f = std::move(f_new);
    res.residual = r_new;
    res.message.clear();
  }
  res.iterations = it;
  res.converged = res.residual <= cfg.tol && !res.diverged;
  if (!res.converged && !res.diverged && detail::blown_up(x)) res.diverged = true;
  res.z_star = x;
  return res;
}

/// max over probe directions u of |g(z + eps u) - g(z)| / eps. Coordinate
/// axes are probed first, then seeded random unit directions.
inline double contraction_estimate(const FixedPointMap& g, const Vector& z, int probes,
                                   std::uint64_t seed = 0) {
  if (!num::all_finite(z)) throw ValidationError("contraction_estimate: z must be finite");
  if (probes < 1) throw ValidationError("contraction_estimate: need at least one probe");
  constexpr double eps = 1e-5;
  const Vector gz = g(z);
  num::Rng rng(seed);
  double best = 0.0;
  const auto n = z.size();
  for (int p = 0; p < probes; ++p) {
    Vector u = Vector::Zero(n);
    if (p < n) {
      u(p) = 1.0;
    } else {
      for (Eigen::Index i = 0; i < n; ++i) u(i) = rng.normal();
      const double nu = u.norm();
      if (nu == 0.0) continue;
      u /= nu;
    }
    best = std::max(best, (g(z + eps * u) - gz).norm() / eps);
  }
  return best;
}

} // namespace ped

#endif // PED_FPSOLVE_HPP
