#ifndef PED_CANONICAL_HPP
#define PED_CANONICAL_HPP

// Canonical maps R (eta -> canonical parameter) with rho = R' and rho' = R'',
// and the activation bundle sigma = (A o R)', sigma' obtained by composing a
// map with an exponential family.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ped/csv.hpp"
#include "ped/expfam.hpp"

namespace ped {

/// Smoothed ReLU: E[ReLU(eta + eps)], eps ~ N(0, tau^2).
inline double trelu(double eta, double tau) {
  if (!(tau > 0.0)) throw ValidationError("trelu: tau must be positive");
  const double u = eta / tau;
  return eta * num::gaussian_cdf(u) + tau * num::gaussian_pdf(u);
}

inline double trelu_rho(double eta, double tau) {
  if (!(tau > 0.0)) throw ValidationError("trelu: tau must be positive");
  return num::gaussian_cdf(eta / tau);
}

inline double trelu_rho1(double eta, double tau) {
  if (!(tau > 0.0)) throw ValidationError("trelu: tau must be positive");
  return num::gaussian_pdf(eta / tau) / tau;
}

inline double leaky_trelu(double eta, double tau, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw ValidationError("leaky_trelu: m must lie in [0,1]");
  return (1.0 - m) * trelu(eta, tau) + m * eta;
}

enum class CanonicalKind { identity, relu, trelu, leaky_trelu, table };

/// Sampled R with linear interpolation; rho is interpolated independently
/// from its own samples, rho' is the slope of the rho interpolant.
struct CanonicalTable {
  std::vector<double> eta;
  std::vector<double> R;
  std::vector<double> rho;
};

class CanonicalMap {
public:
  CanonicalMap() = default;

  static CanonicalMap identity() { return CanonicalMap(CanonicalKind::identity); }
  static CanonicalMap relu() { return CanonicalMap(CanonicalKind::relu); }

  static CanonicalMap trelu(double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("trelu: tau must be positive");
    CanonicalMap c(CanonicalKind::trelu);
    c.tau_ = tau;
    return c;
  }

  static CanonicalMap leaky_trelu(double tau, double m) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("leaky_trelu: tau must be positive");
    if (!(m >= 0.0 && m <= 1.0)) throw ValidationError("leaky_trelu: m must lie in [0,1]");
    CanonicalMap c(CanonicalKind::leaky_trelu);
    c.tau_ = tau;
    c.m_ = m;
    return c;
  }

  static CanonicalMap negate(CanonicalMap inner) {
    inner.negated_ = !inner.negated_;
    return inner;
  }

  static CanonicalMap table(const RecipeSamples& samples) {
    CanonicalTable t;
    for (std::size_t i = 0; i < samples.eta.size(); ++i) {
      if (!samples.rho_defined[i]) continue;
      t.eta.push_back(samples.eta[i]);
      t.R.push_back(samples.R[i]);
      t.rho.push_back(samples.rho[i]);
    }
    return table(std::move(t));
  }

  static CanonicalMap table(CanonicalTable t) {
    if (t.eta.size() < 2 || t.R.size() != t.eta.size() || t.rho.size() != t.eta.size())
      throw ValidationError("table map needs at least two consistent samples");
    for (std::size_t i = 1; i < t.eta.size(); ++i)
      if (!(t.eta[i] > t.eta[i - 1])) throw ValidationError("table map: grid must be strictly increasing");
    CanonicalMap c(CanonicalKind::table);
    c.table_ = std::make_shared<const CanonicalTable>(std::move(t));
    return c;
  }

  CanonicalKind kind() const noexcept { return kind_; }
  bool negated() const noexcept { return negated_; }
  double tau() const noexcept { return tau_; }
  double leak() const noexcept { return m_; }
  bool is_linear() const noexcept {
    return kind_ == CanonicalKind::identity || (kind_ == CanonicalKind::leaky_trelu && m_ == 1.0);
  }
  /// rho' is undefined at isolated kinks (relu at 0).
  bool has_kink() const noexcept { return kind_ == CanonicalKind::relu; }

  std::string name() const {
    std::string base;
    switch (kind_) {
    case CanonicalKind::identity: base = "identity"; break;
    case CanonicalKind::relu: base = "relu"; break;
    case CanonicalKind::trelu: base = "trelu:" + num::format_double(tau_); break;
    case CanonicalKind::leaky_trelu:
      base = "leaky_trelu:" + num::format_double(tau_) + ":" + num::format_double(m_);
      break;
    case CanonicalKind::table: base = "table"; break;
    }
    if (!negated_) return base;
    if (kind_ == CanonicalKind::trelu) return "neg_" + base;
    return "neg(" + base + ")";
  }

  /// Values rho can take, when that set is finite.
  std::optional<std::vector<double>> finite_dropout_codomain() const {
    const double s = negated_ ? -1.0 : 1.0;
    switch (kind_) {
    case CanonicalKind::identity: return std::vector<double>{s};
    case CanonicalKind::relu: return std::vector<double>{0.0, s};
    case CanonicalKind::leaky_trelu:
      if (m_ == 1.0) return std::vector<double>{s};
      return std::nullopt;
    default: return std::nullopt;
    }
  }

  double R(double eta) const { return sign() * R_raw(eta); }
  double rho(double eta) const { return sign() * rho_raw(eta); }
  /// R''. For relu this is 0 away from the kink; callers check boundaries.
  double rho1(double eta) const { return sign() * rho1_raw(eta); }

  /// Largest value of rho' over the real line, when known in closed form.
  std::optional<double> sup_rho1_analytic() const {
    if (negated_) return std::nullopt;
    switch (kind_) {
    case CanonicalKind::identity: return 0.0;
    case CanonicalKind::trelu: return 1.0 / (tau_ * std::sqrt(2.0 * std::numbers::pi));
    case CanonicalKind::leaky_trelu: return (1.0 - m_) / (tau_ * std::sqrt(2.0 * std::numbers::pi));
    default: return std::nullopt;
    }
  }

private:
  explicit CanonicalMap(CanonicalKind k) : kind_(k) {}

  double sign() const noexcept { return negated_ ? -1.0 : 1.0; }

  // index i with eta[i] <= x < eta[i+1], clamped
  std::size_t cell(double x) const {
    const auto& e = table_->eta;
    if (x <= e.front()) return 0;
    if (x >= e.back()) return e.size() - 2;
    const auto it = std::upper_bound(e.begin(), e.end(), x);
    return static_cast<std::size_t>(it - e.begin()) - 1;
  }

  double lerp(const std::vector<double>& v, double x) const {
    const auto& e = table_->eta;
    const double xc = std::clamp(x, e.front(), e.back());
    const std::size_t i = cell(xc);
    const double t = (xc - e[i]) / (e[i + 1] - e[i]);
    return v[i] + t * (v[i + 1] - v[i]);
  }

  double R_raw(double eta) const {
    switch (kind_) {
    case CanonicalKind::identity: return eta;
    case CanonicalKind::relu: return eta > 0.0 ? eta : 0.0;
    case CanonicalKind::trelu: return ped::trelu(eta, tau_);
    case CanonicalKind::leaky_trelu: return (1.0 - m_) * ped::trelu(eta, tau_) + m_ * eta;
    case CanonicalKind::table: return lerp(table_->R, eta);
    }
    return 0.0;
  }

  double rho_raw(double eta) const {
    switch (kind_) {
    case CanonicalKind::identity: return 1.0;
    case CanonicalKind::relu: return eta > 0.0 ? 1.0 : 0.0; // Theta(0) = 0
    case CanonicalKind::trelu: return trelu_rho(eta, tau_);
    case CanonicalKind::leaky_trelu: return (1.0 - m_) * trelu_rho(eta, tau_) + m_;
    case CanonicalKind::table: return lerp(table_->rho, eta);
    }
    return 0.0;
  }

  double rho1_raw(double eta) const {
    switch (kind_) {
    case CanonicalKind::identity:
    case CanonicalKind::relu: return 0.0;
    case CanonicalKind::trelu: return trelu_rho1(eta, tau_);
    case CanonicalKind::leaky_trelu: return (1.0 - m_) * trelu_rho1(eta, tau_);
    case CanonicalKind::table: {
      const auto& e = table_->eta;
      if (eta < e.front() || eta > e.back()) return 0.0;
      const std::size_t i = cell(eta);
      return (table_->rho[i + 1] - table_->rho[i]) / (e[i + 1] - e[i]);
    }
    }
    return 0.0;
  }

  CanonicalKind kind_ = CanonicalKind::identity;
  bool negated_ = false;
  double tau_ = 1.0;
  double m_ = 0.0;
  std::shared_ptr<const CanonicalTable> table_;
};

namespace detail {

inline double parse_positive_real(const std::string& s, std::string_view what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
    throw ValidationError(std::string(what) + ": cannot parse '" + s + "'");
  return v;
}

} // namespace detail

/// Parse `identity`, `relu`, `trelu:<tau>`, `leaky_trelu:<tau>:<m>`, `neg_trelu:<tau>`.
inline CanonicalMap make_canonical(std::string_view spec) {
  if (spec == "identity") return CanonicalMap::identity();
  if (spec == "relu") return CanonicalMap::relu();
  auto fields = [&](std::string_view rest) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
      const auto pos = rest.find(':', start);
      out.emplace_back(rest.substr(start, pos == rest.npos ? rest.npos : pos - start));
      if (pos == rest.npos) break;
      start = pos + 1;
    }
    return out;
  };
  if (spec.starts_with("trelu:")) {
    const auto f = fields(spec.substr(6));
    if (f.size() != 1) throw ValidationError("trelu expects one parameter: '" + std::string(spec) + "'");
    return CanonicalMap::trelu(detail::parse_positive_real(f[0], "trelu tau"));
  }
  if (spec.starts_with("neg_trelu:")) {
    const auto f = fields(spec.substr(10));
    if (f.size() != 1) throw ValidationError("neg_trelu expects one parameter: '" + std::string(spec) + "'");
    return CanonicalMap::negate(CanonicalMap::trelu(detail::parse_positive_real(f[0], "neg_trelu tau")));
  }
  if (spec.starts_with("leaky_trelu:")) {
    const auto f = fields(spec.substr(12));
    if (f.size() != 2)
      throw ValidationError("leaky_trelu expects tau and m: '" + std::string(spec) + "'");
    return CanonicalMap::leaky_trelu(detail::parse_positive_real(f[0], "leaky_trelu tau"),
                                     detail::parse_positive_real(f[1], "leaky_trelu m"));
  }
  throw ValidationError("unknown canonical map '" + std::string(spec) + "'");
}

/// sigma = (A o R)' and its derivative for a fixed (family, map) pair.
class ActivationBundle {
public:
  ActivationBundle(ExpFamily family, CanonicalMap map) : family_(std::move(family)), map_(std::move(map)) {}

  const ExpFamily& family() const noexcept { return family_; }
  const CanonicalMap& map() const noexcept { return map_; }

  double rho(double eta) const { return map_.rho(eta); }
  double rho1(double eta) const { return map_.rho1(eta); }
  double sigma(double eta) const { return family_.A1(map_.R(eta)) * map_.rho(eta); }
  double sigma1(double eta) const {
    const double r = map_.R(eta);
    const double p = map_.rho(eta);
    return family_.A2(r) * p * p + family_.A1(r) * map_.rho1(eta);
  }

private:
  ExpFamily family_;
  CanonicalMap map_;
};

inline ActivationBundle derive_bundle(const ExpFamily& family, const CanonicalMap& map) {
  // every catalog family accepts any real canonical parameter; only check
  // that the map stays finite where it will be probed
  for (double e : {-50.0, -1.0, 0.0, 1.0, 50.0}) {
    const double r = map.R(e);
    if (!std::isfinite(r) || r < family.domain().first || r > family.domain().second)
      throw ValidationError("canonical map " + map.name() + " leaves the domain of " + family.name());
  }
  return ActivationBundle(family, map);
}

/// Expectation parameter mu = A'(R(eta)).
inline double mean_param(const ExpFamily& family, const CanonicalMap& map, double eta) {
  return family.A1(map.R(eta));
}

} // namespace ped

#endif // PED_CANONICAL_HPP
