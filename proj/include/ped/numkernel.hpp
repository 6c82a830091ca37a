#ifndef PED_NUMKERNEL_HPP
#define PED_NUMKERNEL_HPP

// Dense linear algebra and special functions shared by every module.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "ped/errors.hpp"

namespace ped {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ComplexMatrix = Eigen::MatrixXcd;

namespace num {

inline bool all_finite(const Eigen::Ref<const Matrix>& m) {
  return m.allFinite();
}

inline void require_finite(const Eigen::Ref<const Matrix>& m, const char* what) {
  if (!m.allFinite())
    throw ValidationError(std::string(what) + ": matrix contains non-finite entries");
}

// ---------------------------------------------------------------------------
// Power iteration

struct PowerIterationOptions {
  double tol = 1e-10;
  int max_iter = 500;
};

/// ||M^T M||_2, the largest eigenvalue of the Gram matrix, by power iteration
/// on M^T M. The Rayleigh quotient is tracked; convergence is declared when
/// its relative change drops below `tol`.
inline double gram_norm(const Eigen::Ref<const Matrix>& m, PowerIterationOptions opt = {}) {
  if (m.size() == 0) throw ValidationError("gram_norm: empty matrix");
  require_finite(m, "gram_norm");
  const Eigen::Index n = m.cols();
  Vector v = Vector::Ones(n) / std::sqrt(static_cast<double>(n));

  auto apply = [&](const Vector& x) -> Vector { return m.transpose() * (m * x); };

  Vector w = apply(v);
  if (w.norm() <= std::numeric_limits<double>::min()) {
    // ones vector fell into the null space; retry with a ramp
    v = Vector::LinSpaced(n, 1.0, 2.0);
    v.normalize();
    w = apply(v);
    if (w.norm() <= std::numeric_limits<double>::min()) {
      // m may genuinely be zero
      if (m.cwiseAbs().maxCoeff() == 0.0) return 0.0;
      v = Vector::Zero(n);
      v(0) = 1.0;
      w = apply(v);
    }
  }
  double rayleigh = v.dot(w);
  for (int it = 0; it < opt.max_iter; ++it) {
    const double wn = w.norm();
    if (wn == 0.0) return 0.0;
    v = w / wn;
    w = apply(v);
    const double next = v.dot(w);
    if (std::abs(next - rayleigh) <= opt.tol * std::abs(next)) return next;
    rayleigh = next;
  }
  throw NonConvergenceError("gram_norm: power iteration did not converge", v);
}

/// Operator 2-norm of an arbitrary matrix, sqrt(||M^T M||_2).
inline double spectral_norm(const Eigen::Ref<const Matrix>& m, PowerIterationOptions opt = {}) {
  return std::sqrt(gram_norm(m, opt));
}

// ---------------------------------------------------------------------------
// Cholesky

inline constexpr double kCholeskyPivotThreshold = 1e-12;

/// Lower-triangular factor L with H = L L^T. Any pivot <= 1e-12 declares H
/// not positive definite.
inline Matrix cholesky(const Eigen::Ref<const Matrix>& h) {
  if (h.rows() != h.cols()) throw ValidationError("cholesky: matrix is not square");
  const Eigen::Index n = h.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = h(j, j);
    for (Eigen::Index k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
    if (!(pivot > kCholeskyPivotThreshold))
      throw DefinitenessError("cholesky: non-positive pivot " + std::to_string(pivot) +
                              " at index " + std::to_string(j));
    const double d = std::sqrt(pivot);
    l(j, j) = d;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = h(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / d;
    }
  }
  return l;
}

inline bool is_positive_definite(const Eigen::Ref<const Matrix>& h) {
  try {
    (void)cholesky(h);
    return true;
  } catch (const DefinitenessError&) {
    return false;
  }
}

inline Matrix cholesky_solve(const Matrix& l, const Eigen::Ref<const Matrix>& b) {
  Matrix y = l.triangularView<Eigen::Lower>().solve(b);
  return l.transpose().triangularView<Eigen::Upper>().solve(y);
}

inline void require_symmetric(const Eigen::Ref<const Matrix>& h, double tol, const char* what) {
  if (h.rows() != h.cols()) throw ValidationError(std::string(what) + ": matrix is not square");
  const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
  if ((h - h.transpose()).cwiseAbs().maxCoeff() > tol * scale)
    throw ValidationError(std::string(what) + ": matrix is not symmetric");
}

/// Solve H x = b for symmetric positive definite H.
inline Vector solve_spd(const Eigen::Ref<const Matrix>& h, const Eigen::Ref<const Vector>& b) {
  require_symmetric(h, 1e-10, "solve_spd");
  if (b.size() != h.rows()) throw ValidationError("solve_spd: dimension mismatch");
  return cholesky_solve(cholesky(h), b);
}

/// H^{-1} through l Cholesky solves against unit vectors.
inline Matrix spd_inverse(const Eigen::Ref<const Matrix>& h) {
  require_symmetric(h, 1e-10, "spd_inverse");
  const Matrix l = cholesky(h);
  Matrix inv = cholesky_solve(l, Matrix::Identity(h.rows(), h.cols()));
  return 0.5 * (inv + inv.transpose());
}

// ---------------------------------------------------------------------------
// Eigenvalues

inline double min_eig_symmetric(const Eigen::Ref<const Matrix>& m) {
  require_symmetric(m, 1e-12, "min_eig_symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// Smallest eigenvalue of a complex Hermitian matrix, computed on the real
/// symmetric embedding [[Re, -Im], [Im, Re]] whose spectrum is that of M with
/// every eigenvalue doubled in multiplicity.
inline double min_eig_hermitian(const Eigen::Ref<const ComplexMatrix>& m) {
  if (m.rows() != m.cols()) throw ValidationError("min_eig_hermitian: matrix is not square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.adjoint()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw ValidationError("min_eig_hermitian: matrix is not Hermitian");
  const Eigen::Index n = m.rows();
  Matrix e(2 * n, 2 * n);
  const Matrix re = 0.5 * (m.real() + m.real().transpose());
  const Matrix im = 0.5 * (m.imag() - m.imag().transpose());
  e.topLeftCorner(n, n) = re;
  e.topRightCorner(n, n) = -im;
  e.bottomLeftCorner(n, n) = im;
  e.bottomRightCorner(n, n) = re;
  Eigen::SelfAdjointEigenSolver<Matrix> es(e, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// ---------------------------------------------------------------------------
// Gaussian helpers

inline double gaussian_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double gaussian_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double logistic(double r) {
  if (r >= 0.0) return 1.0 / (1.0 + std::exp(-r));
  const double e = std::exp(r);
  return e / (1.0 + e);
}

/// log(1 + e^r) without overflow.
inline double softplus(double r) {
  return r > 0.0 ? r + std::log1p(std::exp(-r)) : std::log1p(std::exp(r));
}

// ---------------------------------------------------------------------------
// Polylogarithm

namespace detail {

// B_2 .. B_12
inline constexpr double kBernoulliEven[] = {1.0 / 6.0,   -1.0 / 30.0, 1.0 / 42.0,
                                            -1.0 / 30.0, 5.0 / 66.0,  -691.0 / 2730.0};

/// Riemann zeta at an integer n >= 2 by Euler-Maclaurin with ten explicit terms.
inline double zeta_int(int n) {
  constexpr int N = 10;
  double s = 0.0;
  for (int k = 1; k < N; ++k) s += std::pow(static_cast<double>(k), -n);
  const double dn = static_cast<double>(n);
  s += std::pow(N, 1.0 - dn) / (dn - 1.0) + 0.5 * std::pow(N, -dn);
  double rising = dn; // n (n+1) ... (n+2j-2)
  double fact = 2.0;  // (2j)!
  for (int j = 1; j <= 6; ++j) {
    s += kBernoulliEven[j - 1] / fact * rising * std::pow(N, -dn - 2.0 * j + 1.0);
    rising *= (dn + 2.0 * j - 1.0) * (dn + 2.0 * j);
    fact *= (2.0 * j + 1.0) * (2.0 * j + 2.0);
  }
  return s;
}

/// zeta at any integer except 1.
inline double zeta_any(int n) {
  if (n >= 2) return zeta_int(n);
  if (n == 0) return -0.5;
  // n = 1 - m, m >= 2
  const int m = 1 - n;
  if (m % 2 == 1) return 0.0; // trivial zeros at negative even integers
  // zeta(1-m) = 2 (2 pi)^{-m} cos(pi m / 2) Gamma(m) zeta(m)
  const double sign = (m / 2) % 2 == 0 ? 1.0 : -1.0;
  return 2.0 * std::exp(std::lgamma(static_cast<double>(m)) -
                        m * std::log(2.0 * std::numbers::pi)) *
         sign * zeta_int(m);
}

inline double polylog_series(int s, double x) {
  double sum = 0.0;
  double xk = x;
  for (int k = 1; k < 100000; ++k) {
    const double term = xk / std::pow(static_cast<double>(k), s);
    sum += term;
    if (std::abs(term) < 1e-16 * std::max(1.0, std::abs(sum))) break;
    xk *= x;
  }
  return sum;
}

/// Li_s(e^mu) for s >= 2 and -2 pi < mu <= 0 by the expansion around mu = 0.
inline double polylog_log_expansion(int s, double mu) {
  double sum = 0.0;
  double mu_pow = 1.0; // mu^k / k!
  int quiet = 0;
  for (int k = 0; k < s + 200; ++k) {
    if (k > 0) mu_pow *= mu / k;
    if (k == s - 1) {
      if (mu != 0.0) {
        double harmonic = 0.0;
        for (int j = 1; j <= s - 1; ++j) harmonic += 1.0 / j;
        sum += mu_pow * (harmonic - std::log(-mu));
      }
      continue;
    }
    const double term = zeta_any(s - k) * mu_pow;
    sum += term;
    if (k > s) {
      if (std::abs(term) < 1e-17 * std::max(1.0, std::abs(sum))) {
        if (++quiet >= 3) break;
      } else {
        quiet = 0;
      }
    }
  }
  return sum;
}

inline double polylog_unit(int s, double x);

inline double polylog_positive(int s, double x) {
  if (x == 0.0) return 0.0;
  if (x <= 0.5) return polylog_series(s, x);
  return polylog_log_expansion(s, std::log(x));
}

// |x| <= 1, s >= 3
inline double polylog_unit(int s, double x) {
  if (x >= 0.0) return polylog_positive(s, x);
  if (x >= -0.5) return polylog_series(s, x);
  // Li_s(-y) = 2^{1-s} Li_s(y^2) - Li_s(y)
  const double y = -x;
  return std::pow(2.0, 1.0 - s) * polylog_positive(s, y * y) - polylog_positive(s, y);
}

inline double dilog_small(double t) { return polylog_series(2, t); }

} // namespace detail

/// Dilogarithm Li_2(x) for any x <= 1.
inline double dilog(double x) {
  constexpr double pi2_6 = std::numbers::pi * std::numbers::pi / 6.0;
  if (!(x <= 1.0)) throw DomainError("dilog: argument must be <= 1");
  if (x == 1.0) return pi2_6;
  if (x > 0.5) return pi2_6 - std::log(x) * std::log1p(-x) - detail::dilog_small(1.0 - x);
  if (x >= 0.0) return detail::dilog_small(x);
  if (x >= -1.0) {
    // Landen: maps [-1, 0) onto (0, 1/2]
    const double l = std::log1p(-x);
    return -detail::dilog_small(x / (x - 1.0)) - 0.5 * l * l;
  }
  // inversion: Li2(x) + Li2(1/x) = -pi^2/6 - log^2(-x)/2
  const double l = std::log(-x);
  return -pi2_6 - 0.5 * l * l - dilog(1.0 / x);
}

/// Polylogarithm Li_s(x) for integer s >= 1. Supported regions: s = 1 for
/// x < 1; s = 2 for x <= 1; s >= 3 for |x| <= 1.
inline double polylog(int s, double x) {
  if (s < 1) throw DomainError("polylog: order must be a positive integer");
  if (!std::isfinite(x)) throw DomainError("polylog: non-finite argument");
  if (s == 1) {
    if (!(x < 1.0)) throw DomainError("polylog: Li_1 diverges for x >= 1");
    return -std::log1p(-x);
  }
  if (s == 2) return dilog(x);
  if (std::abs(x) > 1.0) throw DomainError("polylog: |x| > 1 unsupported for order >= 3");
  return detail::polylog_unit(s, x);
}

} // namespace num
} // namespace ped

#endif // PED_NUMKERNEL_HPP
