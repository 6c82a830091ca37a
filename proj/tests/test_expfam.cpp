#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "ped/expfam.hpp"

using namespace ped;

namespace {

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = a + (b - a) * i / (n - 1);
  return g;
}

template <class F> double simpson(F f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

} // namespace

TEST(MakeFamily, Examples) {
  EXPECT_EQ(make_family("gaussian").A1(1.0), 1.0);
  EXPECT_EQ(make_family("bernoulli").A1(0.0), 0.5);
  // tanh(2) from its exponential form
  const double e4 = std::exp(4.0);
  EXPECT_NEAR(make_family("log_cosh").A1(2.0), (e4 - 1.0) / (e4 + 1.0), 1e-15);
  EXPECT_NEAR(make_family("log_cosh").A1(2.0), 0.9640276, 1e-7);
}

TEST(MakeFamily, ParsingAndErrors) {
  EXPECT_EQ(make_family("binomial:10").trials(), 10);
  EXPECT_EQ(make_family("binomial:10").name(), "binomial:10");
  EXPECT_THROW(make_family("binomial:0"), ValidationError);
  EXPECT_THROW(make_family("binomial:"), ValidationError);
  EXPECT_THROW(make_family("binomial:3x"), ValidationError);
  EXPECT_THROW(make_family("gamma"), ValidationError);
  for (const auto& f : family_catalog()) EXPECT_EQ(make_family(f.name()), f);
}

TEST(MakeFamily, LipschitzConstants) {
  EXPECT_EQ(*make_family("gaussian").lipschitz_A1(), 1.0);
  EXPECT_EQ(*make_family("bernoulli").lipschitz_A1(), 0.25);
  EXPECT_EQ(*make_family("binomial:8").lipschitz_A1(), 2.0);
  EXPECT_FALSE(make_family("poisson").lipschitz_A1().has_value());
  // the constant bounds A'' on a wide grid
  for (const auto& f : family_catalog()) {
    if (!f.lipschitz_A1()) continue;
    for (double r : linspace(-40, 40, 4001)) EXPECT_LE(f.A2(r), *f.lipschitz_A1() + 1e-12) << f.name();
  }
}

TEST(ExpFamily, StrictConvexity) {
  for (const auto& f : family_catalog())
    for (double r : linspace(-20, 20, 1000)) EXPECT_GT(f.A2(r), 0.0) << f.name() << " at " << r;
}

TEST(ExpFamily, DerivativesMatchFiniteDifferences) {
  for (const auto& f : family_catalog()) {
    for (double r : linspace(-6, 6, 61)) {
      const double h = 1e-5;
      EXPECT_NEAR((f.A(r + h) - f.A(r - h)) / (2 * h), f.A1(r), 1e-6 * (1 + std::abs(f.A1(r))))
          << f.name() << " r=" << r;
      EXPECT_NEAR((f.A1(r + h) - f.A1(r - h)) / (2 * h), f.A2(r), 1e-6 * (1 + std::abs(f.A2(r))))
          << f.name() << " r=" << r;
    }
  }
}

TEST(ExpFamily, ContinuousBernoulliNearZero) {
  const auto f = make_family("continuous_bernoulli");
  EXPECT_EQ(f.A(0.0), 0.0);
  EXPECT_EQ(f.A1(0.0), 0.5);
  EXPECT_NEAR(f.A2(0.0), 1.0 / 12.0, 1e-15);
  // continuity across the series switch points
  for (double r : {1e-4, 1e-2}) {
    for (double s : {-1.0, 1.0}) {
      const double a = s * r * (1 - 1e-9), b = s * r * (1 + 1e-9);
      EXPECT_NEAR(f.A(a), f.A(b), 1e-10);
      EXPECT_NEAR(f.A1(a), f.A1(b), 1e-10);
      EXPECT_NEAR(f.A2(a), f.A2(b), 1e-9);
    }
  }
  // A = log((e^r - 1)/r) against direct evaluation away from 0
  for (double r : {-3.0, -0.5, 0.5, 3.0}) EXPECT_NEAR(f.A(r), std::log(std::expm1(r) / r), 1e-13);
}

TEST(ExpFamily, SamplerMeanMatchesA1) {
  num::Rng rng(2024);
  const int n = 100000;
  for (const auto& f : family_catalog()) {
    for (double r : {-1.5, -0.5, 0.0, 0.7, 1.6}) {
      double m = 0.0;
      for (int i = 0; i < n; ++i) m += f.sample(r, rng);
      m /= n;
      const double se = std::sqrt(f.A2(r) / n);
      EXPECT_LE(std::abs(m - f.A1(r)), 4.0 * se) << f.name() << " r=" << r;
    }
  }
}

TEST(CheckAdmissible, SpecExamples) {
  auto gauss = [](double r) { return std::complex<double>(std::exp(-0.5 * r * r), 0.0); };
  EXPECT_TRUE(check_admissible(gauss, {0, 1, -1, 2, -2}, 1e-8).pass);
  auto cosine = [](double r) { return std::complex<double>(std::cos(r), 0.0); };
  EXPECT_TRUE(check_admissible(cosine, {0, 0.7, 1.4, 2.1}, 1e-8).pass);
  auto window = [](double r) { return std::complex<double>(std::abs(r) < 1.0 ? 1.0 : 0.0, 0.0); };
  const auto rep = check_admissible(window, {0, 0.6, 1.2, 1.8, 2.4}, 1e-8);
  EXPECT_FALSE(rep.pass);
  // independent oracle: the tridiagonal all-ones 5x5 has eigenvalues 1 + 2cos(k pi / 6)
  EXPECT_NEAR(rep.min_eigenvalue, 1.0 + 2.0 * std::cos(5.0 * std::numbers::pi / 6.0), 1e-10);
}

TEST(CheckAdmissible, CatalogPasses) {
  const auto grid = linspace(0, 5, 25);
  for (const auto& f : family_catalog()) {
    ASSERT_TRUE(f.char_form(0.0).has_value());
    EXPECT_LE(std::abs(*f.char_form(0.0) - 1.0), 1e-12);
    EXPECT_TRUE(check_admissible(f, grid, 1e-8).pass) << f.name();
  }
}

TEST(CheckAdmissible, Errors) {
  auto cosine = [](double r) { return std::complex<double>(std::cos(r), 0.0); };
  EXPECT_THROW(check_admissible(cosine, {0.0}, 1e-8), ValidationError);
  EXPECT_THROW(check_admissible(cosine, {0.0, 1.0, 1.0}, 1e-8), ValidationError);
  // real but not even, so the Gram matrix is not Hermitian
  auto bad = [](double r) { return std::complex<double>(1.0 + r, 0.0); };
  EXPECT_THROW(check_admissible(bad, {0.0, 1.0}, 1e-8), ValidationError);
}

TEST(Bregman, Examples) {
  EXPECT_EQ(bregman(BregmanPair::squared(), 3.0, 3.0), 0.0);
  EXPECT_NEAR(bregman(BregmanPair::squared(), 2.0, 1.0), 1.0, 1e-15);
  EXPECT_NEAR(bregman(BregmanPair::poisson(), 2.0, 1.0), 2.0 * std::log(2.0) - 1.0, 1e-15);
  EXPECT_THROW(bregman(BregmanPair::poisson(), 2.0, 0.0), DomainError);
  EXPECT_THROW(bregman(BregmanPair::poisson(), -1.0, 1.0), DomainError);
  EXPECT_GT(bregman(BregmanPair::bernoulli(), 1.0, 0.3), 0.0);
  EXPECT_NEAR(bregman(BregmanPair::bernoulli(), 1.0, 0.3), -std::log(0.3), 1e-14);
}

TEST(Bregman, GeneratorsConvex) {
  for (const auto& pair : {BregmanPair::squared(), BregmanPair::poisson(), BregmanPair::bernoulli()}) {
    const double h = 1e-3;
    for (double u : linspace(0.01, 0.99, 99))
      EXPECT_GE(pair.phi(u + h) - 2 * pair.phi(u) + pair.phi(u - h), -1e-8);
  }
}

TEST(Recipe, LogisticSigmoid) {
  // closed form sqrt(2 log(1+e^eta)); left tail mass 2 log(1+e^{-30})
  const auto grid = linspace(-30, 5, 701);
  RecipeOptions opt;
  opt.tail_mass = 2.0 * std::log1p(std::exp(-30.0));
  const auto out = recipe_R(num::logistic, grid, opt);
  const std::size_t i0 = 600; // eta = 0
  ASSERT_NEAR(out.eta[i0], 0.0, 1e-12);
  EXPECT_NEAR(out.R[i0], std::sqrt(2.0 * std::numbers::ln2), 1e-8);
  EXPECT_NEAR(out.R[i0], 1.177410, 1e-6);
  // independent Simpson oracle at eta = 3
  const double mass = opt.tail_mass + simpson([](double e) { return 2.0 * num::logistic(e); }, -30.0, 3.0, 20000);
  EXPECT_NEAR(out.R[660], std::sqrt(mass), 1e-8);
}

TEST(Recipe, ReluRecoversRelu) {
  const auto grid = linspace(-3, 3, 61);
  auto relu = [](double e) { return e > 0 ? e : 0.0; };
  const auto out = recipe_R(relu, grid, {});
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_NEAR(out.R[i], relu(grid[i]), 1e-9);
  // rho is undefined wherever R vanishes
  EXPECT_FALSE(out.undefined_points.empty());
  for (std::size_t i : out.undefined_points) EXPECT_LE(grid[i], 1e-12);
}

TEST(Recipe, SoftplusMatchesDilog) {
  // int_{-inf}^{0} 2 softplus = -2 Li2(-1) = pi^2/6
  const auto grid = linspace(-40, 0, 401);
  RecipeOptions opt;
  opt.tail_mass = -2.0 * num::polylog(2, -std::exp(-40.0));
  const auto out = recipe_R(num::softplus, grid, opt);
  EXPECT_NEAR(out.R.back(), std::sqrt(-2.0 * num::polylog(2, -1.0)), 1e-9);
  EXPECT_NEAR(out.R.back(), std::numbers::pi / std::sqrt(6.0), 1e-9);
  EXPECT_NEAR(out.R.back(), 1.282550, 1e-6);
}

TEST(Recipe, Errors) {
  EXPECT_THROW(recipe_R([](double) { return -1.0; }, {0.0, 1.0}, {}), DomainError);
  EXPECT_THROW(recipe_R(num::logistic, {1.0, 0.0}, {}), ValidationError);
  EXPECT_THROW(recipe_R(num::logistic, {}, {}), ValidationError);
}
