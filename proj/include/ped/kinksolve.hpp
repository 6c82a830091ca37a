#ifndef PED_KINKSOLVE_HPP
#define PED_KINKSOLVE_HPP

// Fallback for relu maps whose minimiser sits on the kink. There the
// fixed-point map jumps across eta_i = 0 and plain iteration cycles between
// patterns. We pin the cycling units at eta_i = 0, solve the stationarity
// condition restricted to that affine subspace, and accept the point only if
// the pinned units carry subgradient weights in [0, 1] on a convex kink.

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "ped/fpsolve.hpp"

namespace ped {

struct KinkProblem {
  /// Kinked pre-activations are eta = C x + b (affine in the state).
  Matrix C;
  Vector b;
  /// Diagonal of the posterior precision: grad NLP = metric . (x - map(x)).
  Vector metric;
  /// Fixed-point map with the listed units forced inactive.
  std::function<Vector(const Vector&, const std::vector<char>&)> map;
  /// Right derivative of the NLP in each kinked unit at eta = 0 (left derivative is 0).
  std::function<Vector(const Vector&)> slope;
};

struct KinkSolve {
  Vector x;
  bool ok = false;
  std::size_t pinned = 0;
  FixedPointResult inner;
  std::string message;
};

namespace detail {

// Units whose sign changes while iterating from x0, sorted by |eta| at the
// mean of the visited iterates (closest to the kink first).
inline std::vector<Eigen::Index> cycling_units(const KinkProblem& p, const Vector& x0, int steps = 30) {
  const std::vector<char> none(static_cast<std::size_t>(p.C.rows()), 0);
  std::vector<char> flips = none;
  Vector x = x0, mean = Vector::Zero(x0.size());
  Vector prev = p.C * x + p.b;
  int counted = 0;
  for (int k = 0; k < steps; ++k) {
    try {
      x = p.map(x, none);
    } catch (const DivergenceError&) {
      break;
    }
    const Vector eta = p.C * x + p.b;
    if (k >= steps / 3) {
      for (Eigen::Index i = 0; i < eta.size(); ++i)
        if ((eta(i) > 0.0) != (prev(i) > 0.0)) flips[static_cast<std::size_t>(i)] = 1;
      mean += x;
      ++counted;
    }
    prev = eta;
  }
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < flips.size(); ++i)
    if (flips[i]) out.push_back(static_cast<Eigen::Index>(i));
  if (counted) mean /= counted;
  const Vector eta = p.C * (counted ? mean : x0) + p.b;
  std::stable_sort(out.begin(), out.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return std::abs(eta(a)) < std::abs(eta(b)); });
  return out;
}

// min |A theta + r|^2 over the box [0, 1]^k by cyclic coordinate descent.
inline Vector box_least_squares(const Matrix& A, const Vector& r, int sweeps = 5000) {
  Vector theta = Vector::Zero(A.cols());
  Vector res = r;
  const Vector norms = A.colwise().squaredNorm().transpose();
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    double moved = 0.0;
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      if (norms(j) == 0.0) continue;
      const double t = std::clamp(theta(j) - A.col(j).dot(res) / norms(j), 0.0, 1.0);
      const double dt = t - theta(j);
      if (dt != 0.0) {
        res += dt * A.col(j);
        theta(j) = t;
        moved = std::max(moved, std::abs(dt));
      }
    }
    if (moved < 1e-15) break;
  }
  return theta;
}

// Stationary point restricted to {eta_K = 0}, validated as a kink minimiser.
inline KinkSolve pinned_solve(const KinkProblem& p, std::vector<Eigen::Index> K, const Vector& start,
                              const SolverConfig& cfg, double boundary_tol) {
  KinkSolve out;
  out.x = start;
  const auto D = start.size();
  const auto units = p.C.rows();
  std::vector<char> pinned(static_cast<std::size_t>(units), 0);
  for (auto i : K) pinned[static_cast<std::size_t>(i)] = 1;

  Vector x;
  for (int grow = 0;; ++grow) {
    const auto k = static_cast<Eigen::Index>(K.size());
    Matrix CK(k, D);
    Vector bK(k);
    for (Eigen::Index r = 0; r < k; ++r) {
      CK.row(r) = p.C.row(K[static_cast<std::size_t>(r)]);
      bK(r) = p.b(K[static_cast<std::size_t>(r)]);
    }
    Eigen::JacobiSVD<Matrix> svd(CK, Eigen::ComputeFullU | Eigen::ComputeFullV);
    svd.setThreshold(1e-12);
    const auto rank = svd.rank();
    const Vector x0 = svd.solve(-bK);
    if ((CK * x0 + bK).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, bK.cwiseAbs().maxCoeff())) {
      out.message = "pinned units admit no common point";
      return out;
    }
    const Matrix N = svd.matrixV().rightCols(D - rank);
    const Matrix LN = p.metric.asDiagonal() * N;
    const Eigen::LDLT<Matrix> red((N.transpose() * LN).eval());
    auto lift = [&](const Vector& u) { return Vector(x0 + N * u); };
    if (N.cols() == 0) {
      x = x0;
      out.inner = FixedPointResult{};
      out.inner.converged = true;
      out.inner.residual = 0.0;
      break;
    }
    auto g = [&](const Vector& u) { return Vector(red.solve(LN.transpose() * (p.map(lift(u), pinned) - x0))); };
    out.inner = anderson(g, red.solve(LN.transpose() * (start - x0)), cfg);
    if (out.inner.converged) {
      x = lift(out.inner.z_star);
      break;
    }
    // units still cycling inside the subspace join the pinned set
    if (grow >= 3) {
      out.message = "reduced problem did not converge";
      return out;
    }
    KinkProblem sub = p;
    sub.map = [&](const Vector& z, const std::vector<char>&) {
      return Vector(lift(red.solve(LN.transpose() * (p.map(z, pinned) - x0))));
    };
    bool grew = false;
    for (auto i : cycling_units(sub, lift(out.inner.z_star)))
      if (!pinned[static_cast<std::size_t>(i)]) {
        pinned[static_cast<std::size_t>(i)] = 1;
        K.push_back(i);
        grew = true;
      }
    if (!grew) {
      out.message = "reduced problem did not converge";
      return out;
    }
  }

  // every unit sitting on the kink takes part in the subgradient check
  const Vector eta = p.C * x + p.b;
  for (Eigen::Index i = 0; i < units; ++i)
    if (!pinned[static_cast<std::size_t>(i)] && std::abs(eta(i)) <= boundary_tol) {
      pinned[static_cast<std::size_t>(i)] = 1;
      K.push_back(i);
    }
  const auto k = static_cast<Eigen::Index>(K.size());
  // metric.(x - map) + C_K^T (slope_K . theta) = 0 with theta in [0, 1]
  const Vector resid = p.metric.cwiseProduct(x - p.map(x, pinned));
  const Vector slope = p.slope(x);
  constexpr double slack = 1e-8;
  Matrix A(D, k);
  for (Eigen::Index r = 0; r < k; ++r) {
    const auto i = K[static_cast<std::size_t>(r)];
    if (slope(i) < -slack * std::max(1.0, std::abs(slope(i)))) {
      out.message = "a pinned unit sits on a concave kink";
      return out;
    }
    A.col(r) = p.C.row(i).transpose() * std::max(slope(i), 0.0);
  }
  const Vector theta = box_least_squares(A, resid);
  const double fit = (A * theta + resid).cwiseAbs().maxCoeff();
  if (fit > 1e-7 * std::max(1.0, resid.cwiseAbs().maxCoeff())) {
    out.message = "no subgradient weights in [0, 1] make the point stationary";
    return out;
  }
  out.x = x;
  out.ok = true;
  out.pinned = K.size();
  out.message = "minimiser on the relu kink: " + std::to_string(K.size()) + " unit(s) pinned";
  return out;
}

} // namespace detail

/// Tries subsets of the cycling units, smallest first (at most `max_tries` solves).
inline KinkSolve kink_solve(const KinkProblem& p, const Vector& start, const SolverConfig& cfg,
                            double boundary_tol = 1e-9, int max_tries = 64) {
  const auto F = detail::cycling_units(p, start);
  KinkSolve last;
  last.x = start;
  last.message = "no cycling units to pin";
  const auto n = static_cast<int>(F.size());
  const int kmax = std::min<int>(n, static_cast<int>(start.size()));
  int tries = 0;
  for (int k = 1; k <= kmax; ++k) {
    // lexicographic k-subsets of F (already ordered by closeness to the kink)
    std::vector<int> idx(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) idx[static_cast<std::size_t>(j)] = j;
    for (;;) {
      if (tries++ >= max_tries) return last;
      std::vector<Eigen::Index> K;
      for (int j : idx) K.push_back(F[static_cast<std::size_t>(j)]);
      KinkSolve r = detail::pinned_solve(p, K, start, cfg, boundary_tol);
      if (r.ok) return r;
      last = std::move(r);
      int j = k - 1;
      while (j >= 0 && idx[static_cast<std::size_t>(j)] == n - k + j) --j;
      if (j < 0) break;
      ++idx[static_cast<std::size_t>(j)];
      for (int m = j + 1; m < k; ++m) idx[static_cast<std::size_t>(m)] = idx[static_cast<std::size_t>(m - 1)] + 1;
    }
  }
  return last;
}

} // namespace ped

#endif // PED_KINKSOLVE_HPP
