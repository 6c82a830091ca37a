#ifndef PED_EXPFAM_HPP
#define PED_EXPFAM_HPP

// Catalog of scalar minimal regular exponential families
//
//   p(y | r) = h(y) exp(r T(y) - A(r))
//
// together with the numerical admissibility test (positive definiteness of
// r -> exp(A(ir) - A(0)) on a grid), Bregman divergences and the recipe that
// recovers a canonical map R from a target activation under quadratic A.

#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ped/numkernel.hpp"
#include "ped/random.hpp"

namespace ped {

enum class FamilyKind { gaussian, bernoulli, binomial, poisson, log_cosh, continuous_bernoulli };

class ExpFamily {
public:
  ExpFamily() = default;
  explicit ExpFamily(FamilyKind kind, int trials = 1) : kind_(kind), trials_(trials) {
    if (kind == FamilyKind::binomial && trials < 1)
      throw ValidationError("binomial family needs at least one trial");
    if (kind != FamilyKind::binomial) trials_ = 1;
  }

  FamilyKind kind() const noexcept { return kind_; }
  int trials() const noexcept { return trials_; }

  std::string name() const {
    switch (kind_) {
    case FamilyKind::gaussian: return "gaussian";
    case FamilyKind::bernoulli: return "bernoulli";
    case FamilyKind::binomial: return "binomial:" + std::to_string(trials_);
    case FamilyKind::poisson: return "poisson";
    case FamilyKind::log_cosh: return "log_cosh";
    case FamilyKind::continuous_bernoulli: return "continuous_bernoulli";
    }
    return "?";
  }

  bool is_quadratic() const noexcept { return kind_ == FamilyKind::gaussian; }

  /// Log partition function.
  double A(double r) const {
    switch (kind_) {
    case FamilyKind::gaussian: return 0.5 * r * r;
    case FamilyKind::bernoulli: return num::softplus(r);
    case FamilyKind::binomial: return trials_ * num::softplus(r);
    case FamilyKind::poisson: return std::exp(r);
    case FamilyKind::log_cosh: {
      const double a = std::abs(r);
      return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
    }
    case FamilyKind::continuous_bernoulli: {
      if (std::abs(r) < 1e-4) return r / 2.0 + r * r / 24.0;
      if (r > 0.0) return r + std::log(-std::expm1(-r)) - std::log(r);
      return std::log(std::expm1(r) / r);
    }
    }
    return 0.0;
  }

  /// A'(r), the expectation parameter.
  double A1(double r) const {
    switch (kind_) {
    case FamilyKind::gaussian: return r;
    case FamilyKind::bernoulli: return num::logistic(r);
    case FamilyKind::binomial: return trials_ * num::logistic(r);
    case FamilyKind::poisson: return std::exp(r);
    case FamilyKind::log_cosh: return std::tanh(r);
    case FamilyKind::continuous_bernoulli: {
      if (std::abs(r) < 1e-2) return 0.5 + r / 12.0 - r * r * r / 720.0;
      return 1.0 / (-std::expm1(-r)) - 1.0 / r;
    }
    }
    return 0.0;
  }

  /// A''(r), the variance; strictly positive.
  double A2(double r) const {
    switch (kind_) {
    case FamilyKind::gaussian: return 1.0;
    case FamilyKind::bernoulli: return num::logistic(r) * num::logistic(-r);
    case FamilyKind::binomial: return trials_ * num::logistic(r) * num::logistic(-r);
    case FamilyKind::poisson: return std::exp(r);
    case FamilyKind::log_cosh: {
      // sech^2 without the cancellation in 1 - tanh^2
      const double e = std::exp(-2.0 * std::abs(r));
      return 4.0 * e / ((1.0 + e) * (1.0 + e));
    }
    case FamilyKind::continuous_bernoulli: {
      if (std::abs(r) < 1e-2) return 1.0 / 12.0 - r * r / 240.0;
      const double sh = std::sinh(0.5 * r);
      return 1.0 / (r * r) - 1.0 / (4.0 * sh * sh);
    }
    }
    return 0.0;
  }

  /// Sufficient statistic; the identity for every catalog family.
  double T(double y) const noexcept { return y; }

  /// Draw one observation at canonical parameter r.
  double sample(double r, num::Rng& rng) const {
    switch (kind_) {
    case FamilyKind::gaussian: return num::sample(num::Gaussian{r, 1.0}, rng);
    case FamilyKind::bernoulli: return num::sample(num::Bernoulli{num::logistic(r)}, rng);
    case FamilyKind::binomial: return num::sample(num::Binomial{trials_, num::logistic(r)}, rng);
    case FamilyKind::poisson: return num::sample(num::Poisson{std::exp(r)}, rng);
    case FamilyKind::log_cosh:
      return rng.uniform() < num::logistic(2.0 * r) ? 1.0 : -1.0;
    case FamilyKind::continuous_bernoulli: {
      const double u = rng.uniform();
      if (std::abs(r) < 1e-12) return u;
      return std::log1p(u * std::expm1(r)) / r;
    }
    }
    return 0.0;
  }

  /// phi(r) = exp(A(ir) - A(0)), the characteristic function of T(y) under
  /// the base measure. Every catalog family has one.
  std::optional<std::complex<double>> char_form(double r) const {
    using C = std::complex<double>;
    const C eir = std::polar(1.0, r);
    switch (kind_) {
    case FamilyKind::gaussian: return C(std::exp(-0.5 * r * r), 0.0);
    case FamilyKind::bernoulli: return (1.0 + eir) / 2.0;
    case FamilyKind::binomial: return std::pow((1.0 + eir) / 2.0, trials_);
    case FamilyKind::poisson: return std::exp(eir - 1.0);
    case FamilyKind::log_cosh: return C(std::cos(r), 0.0);
    case FamilyKind::continuous_bernoulli:
      if (r == 0.0) return C(1.0, 0.0);
      return (eir - 1.0) / C(0.0, r);
    }
    return std::nullopt;
  }

  /// Global Lipschitz constant a of A'. Absent when A' is unbounded in slope.
  std::optional<double> lipschitz_A1() const {
    switch (kind_) {
    case FamilyKind::gaussian: return 1.0;
    case FamilyKind::bernoulli: return 0.25;
    case FamilyKind::binomial: return trials_ / 4.0;
    case FamilyKind::poisson: return std::nullopt;
    case FamilyKind::log_cosh: return 1.0;
    case FamilyKind::continuous_bernoulli: return 1.0 / 12.0;
    }
    return std::nullopt;
  }

  /// Closed range of T(y) over the support, when bounded.
  std::optional<std::pair<double, double>> statistic_range() const {
    switch (kind_) {
    case FamilyKind::bernoulli:
    case FamilyKind::continuous_bernoulli: return std::pair{0.0, 1.0};
    case FamilyKind::binomial: return std::pair{0.0, static_cast<double>(trials_)};
    case FamilyKind::log_cosh: return std::pair{-1.0, 1.0};
    default: return std::nullopt;
    }
  }

  /// Open interval of admissible canonical parameters.
  std::pair<double, double> domain() const noexcept {
    return {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  }

  friend bool operator==(const ExpFamily& a, const ExpFamily& b) {
    return a.kind_ == b.kind_ && a.trials_ == b.trials_;
  }

private:
  FamilyKind kind_ = FamilyKind::gaussian;
  int trials_ = 1;
};

inline ExpFamily make_family(FamilyKind kind, int trials = 1) { return ExpFamily(kind, trials); }

/// Parse `gaussian`, `bernoulli`, `binomial:<t>`, `poisson`, `log_cosh`,
/// `continuous_bernoulli`.
inline ExpFamily make_family(std::string_view spec) {
  if (spec == "gaussian") return ExpFamily(FamilyKind::gaussian);
  if (spec == "bernoulli") return ExpFamily(FamilyKind::bernoulli);
  if (spec == "poisson") return ExpFamily(FamilyKind::poisson);
  if (spec == "log_cosh") return ExpFamily(FamilyKind::log_cosh);
  if (spec == "continuous_bernoulli") return ExpFamily(FamilyKind::continuous_bernoulli);
  if (spec.starts_with("binomial:")) {
    const std::string rest(spec.substr(9));
    char* end = nullptr;
    const long t = std::strtol(rest.c_str(), &end, 10);
    if (rest.empty() || end != rest.c_str() + rest.size() || t < 1 || t > 1000000)
      throw ValidationError("binomial family needs a positive trial count: '" + std::string(spec) + "'");
    return ExpFamily(FamilyKind::binomial, static_cast<int>(t));
  }
  throw ValidationError("unknown exponential family '" + std::string(spec) + "'");
}

inline std::vector<ExpFamily> family_catalog() {
  return {ExpFamily(FamilyKind::gaussian),      ExpFamily(FamilyKind::bernoulli),
          ExpFamily(FamilyKind::binomial, 10),  ExpFamily(FamilyKind::poisson),
          ExpFamily(FamilyKind::log_cosh),      ExpFamily(FamilyKind::continuous_bernoulli)};
}

// ---------------------------------------------------------------------------
// Admissibility

struct AdmissibilityReport {
  double min_eigenvalue = 0.0;
  bool pass = false;
};

/// Gram test M_jk = phi(r_j - r_k): phi is positive definite on the grid iff
/// the smallest eigenvalue of M is nonnegative (up to tol).
inline AdmissibilityReport check_admissible(const std::function<std::complex<double>(double)>& phi,
                                            const std::vector<double>& grid, double tol) {
  if (grid.size() < 2) throw ValidationError("check_admissible: grid needs at least two points");
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (std::size_t j = i + 1; j < grid.size(); ++j)
      if (grid[i] == grid[j]) throw ValidationError("check_admissible: grid points must be distinct");
  const auto n = static_cast<Eigen::Index>(grid.size());
  ComplexMatrix m(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index k = 0; k < n; ++k) m(j, k) = phi(grid[j] - grid[k]);
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.adjoint()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw ValidationError("check_admissible: phi(-r) != conj(phi(r)), Gram matrix not Hermitian");
  // enforce exact Hermitian symmetry before the eigensolve
  const ComplexMatrix herm = 0.5 * (m + m.adjoint());
  AdmissibilityReport rep;
  rep.min_eigenvalue = num::min_eig_hermitian(herm);
  rep.pass = rep.min_eigenvalue >= -tol;
  return rep;
}

inline AdmissibilityReport check_admissible(const ExpFamily& family, const std::vector<double>& grid,
                                            double tol) {
  if (!family.char_form(0.0)) throw ValidationError(family.name() + " has no characteristic form");
  return check_admissible([&](double r) { return *family.char_form(r); }, grid, tol);
}

// ---------------------------------------------------------------------------
// Bregman divergences

struct BregmanPair {
  std::function<double(double)> phi;
  std::function<double(double)> phi1;

  /// phi = u^2, the squared-error generator.
  static BregmanPair squared() {
    return {[](double u) { return u * u; }, [](double u) { return 2.0 * u; }};
  }

  /// Convex conjugate of A(r) = e^r: phi(mu) = mu log mu - mu.
  static BregmanPair poisson() {
    auto phi = [](double u) {
      if (u < 0.0) throw DomainError("poisson Bregman generator needs mu >= 0");
      return u == 0.0 ? 0.0 : u * std::log(u) - u;
    };
    auto phi1 = [](double u) {
      if (!(u > 0.0)) throw DomainError("poisson Bregman derivative needs mu > 0");
      return std::log(u);
    };
    return {phi, phi1};
  }

  /// Convex conjugate of A(r) = log(1 + e^r): negative binary entropy.
  static BregmanPair bernoulli() {
    auto xlogx = [](double u) { return u == 0.0 ? 0.0 : u * std::log(u); };
    auto phi = [xlogx](double u) {
      if (u < 0.0 || u > 1.0) throw DomainError("bernoulli Bregman generator needs mu in [0,1]");
      return xlogx(u) + xlogx(1.0 - u);
    };
    auto phi1 = [](double u) {
      if (!(u > 0.0 && u < 1.0)) throw DomainError("bernoulli Bregman derivative needs mu in (0,1)");
      return std::log(u) - std::log1p(-u);
    };
    return {phi, phi1};
  }
};

/// D_phi(y, mu) = phi(y) - phi(mu) - (y - mu) phi'(mu).
inline double bregman(const BregmanPair& pair, double y, double mu) {
  const double d = pair.phi(y) - pair.phi(mu) - (y - mu) * pair.phi1(mu);
  if (!std::isfinite(d)) throw DomainError("bregman: divergence is not finite");
  return std::max(d, 0.0);
}

// ---------------------------------------------------------------------------
// Recipe: |R(eta)| = sqrt( int_{-inf}^{eta} 2 sigma )

namespace detail {

template <class F>
double adaptive_simpson_step(const F& f, double a, double b, double fa, double fm, double fb,
                             double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

} // namespace detail

/// Composite adaptive Simpson quadrature of f over [a, b].
template <class F> double adaptive_simpson(const F& f, double a, double b, double tol, int max_depth = 50) {
  if (a == b) return 0.0;
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return detail::adaptive_simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

struct RecipeOptions {
  double quad_tol = 1e-10;
  /// Integration starts here; defaults to the first grid point.
  std::optional<double> anchor;
  /// Analytic value of int_{-inf}^{anchor} 2 sigma, supplied by the caller.
  double tail_mass = 0.0;
};

struct RecipeSamples {
  std::vector<double> eta;
  std::vector<double> R;
  std::vector<double> rho;
  std::vector<bool> rho_defined;
  std::vector<std::size_t> undefined_points;
};

/// Sample R = sqrt(int 2 sigma) and rho = sigma / R on a sorted grid.
inline RecipeSamples recipe_R(const std::function<double(double)>& sigma, const std::vector<double>& eta_grid,
                              const RecipeOptions& opt = {}) {
  if (eta_grid.empty()) throw ValidationError("recipe_R: empty grid");
  for (std::size_t i = 1; i < eta_grid.size(); ++i)
    if (!(eta_grid[i] > eta_grid[i - 1])) throw ValidationError("recipe_R: grid must be strictly increasing");
  const double anchor = opt.anchor.value_or(eta_grid.front());
  if (anchor > eta_grid.front()) throw ValidationError("recipe_R: anchor must not exceed the first grid point");
  if (opt.tail_mass < 0.0) throw DomainError("recipe_R: negative tail mass");

  auto integrand = [&](double e) {
    const double s = sigma(e);
    if (s < 0.0) throw DomainError("recipe_R: sigma is negative at eta = " + std::to_string(e));
    return 2.0 * s;
  };
  for (double e : eta_grid) (void)integrand(e);

  RecipeSamples out;
  out.eta = eta_grid;
  const std::size_t n = eta_grid.size();
  out.R.resize(n);
  out.rho.resize(n);
  out.rho_defined.resize(n);
  const double per_interval_tol = opt.quad_tol / static_cast<double>(n + 1);
  double mass = opt.tail_mass;
  double prev = anchor;
  for (std::size_t i = 0; i < n; ++i) {
    mass += adaptive_simpson(integrand, prev, eta_grid[i], per_interval_tol);
    prev = eta_grid[i];
    const double r = std::sqrt(std::max(mass, 0.0));
    out.R[i] = r;
    if (r > 0.0) {
      out.rho[i] = sigma(eta_grid[i]) / r;
      out.rho_defined[i] = true;
    } else {
      out.rho[i] = std::numeric_limits<double>::quiet_NaN();
      out.rho_defined[i] = false;
      out.undefined_points.push_back(i);
    }
  }
  return out;
}

} // namespace ped

#endif // PED_EXPFAM_HPP
