#include <cmath>

#include <gtest/gtest.h>

#include "ped/train.hpp"

using namespace ped;

namespace {

Matrix randn(Eigen::Index r, Eigen::Index c, num::Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

Vector randv(Eigen::Index n, num::Rng& rng, double scale = 1.0) { return randn(n, 1, rng, scale).col(0); }

PedLayer make_layer(Matrix W, Vector B, double lambda, const std::string& fam, const std::string& map) {
  return PedLayer{std::move(W), std::move(B), lambda, make_family(fam), make_canonical(map)};
}

Matrix sample_Y(const PedLayer& layer, Eigen::Index n, num::Rng& rng) {
  Matrix Y(layer.d(), n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const Vector z = randv(layer.l(), rng);
    const Vector eta = layer.W * z + layer.B;
    for (Eigen::Index i = 0; i < eta.size(); ++i) Y(i, s) = layer.family.sample(layer.map.R(eta(i)), rng);
  }
  return Y;
}

InferOptions tight() {
  InferOptions o;
  o.solver.tol = 1e-13;
  o.solver.max_iter = 5000;
  return o;
}

double max_rel(const GradientBundle& a, const GradientBundle& b) {
  double num = 0.0, den = 1e-3;
  for (std::size_t k = 0; k < a.layers(); ++k) {
    num = std::max({num, (a.W[k] - b.W[k]).cwiseAbs().maxCoeff(), (a.B[k] - b.B[k]).cwiseAbs().maxCoeff()});
    den = std::max({den, b.W[k].cwiseAbs().maxCoeff(), b.B[k].cwiseAbs().maxCoeff()});
  }
  return num / den;
}

// central differences of a scalar function of all parameters
template <class Model, class F> GradientBundle fd_params(const Model& m, F&& f, double h = 1e-6) {
  ParamBundle p = params_of(m);
  GradientBundle g = ParamBundle::zeros_like(p);
  auto eval = [&](const ParamBundle& q) {
    Model c = m;
    install(c, q);
    return f(c);
  };
  for (std::size_t k = 0; k < p.layers(); ++k) {
    for (Eigen::Index i = 0; i < p.W[k].size(); ++i) {
      ParamBundle a = p, b = p;
      a.W[k].data()[i] += h;
      b.W[k].data()[i] -= h;
      g.W[k].data()[i] = (eval(a) - eval(b)) / (2 * h);
    }
    for (Eigen::Index i = 0; i < p.B[k].size(); ++i) {
      ParamBundle a = p, b = p;
      a.B[k](i) += h;
      b.B[k](i) -= h;
      g.B[k](i) = (eval(a) - eval(b)) / (2 * h);
    }
  }
  return g;
}

} // namespace

TEST(ImplicitGrad, ZeroWeightsGiveZeroBiasGradient) {
  auto layer = make_layer(Matrix::Zero(3, 2), Vector::Zero(3), 1.0, "gaussian", "identity");
  const Vector y = Vector::Constant(3, 1.0);
  const auto g = implicit_grad(Vector::Constant(2, 1.0), Vector::Zero(2), y, layer);
  EXPECT_EQ(g.B[0].cwiseAbs().maxCoeff(), 0.0);
}

TEST(ImplicitGrad, GaussianLinearBiasClosedForm) {
  // z* = W^T K^{-1} (y - B), K = lambda I + W W^T; d(|z*|^2/2)/dB = -K^{-1} W z*
  num::Rng rng(1);
  auto layer = make_layer(randn(3, 2, rng), randv(3, rng), 0.7, "gaussian", "identity");
  const Vector y = randv(3, rng);
  const Matrix K = layer.lambda * Matrix::Identity(3, 3) + layer.W * layer.W.transpose();
  const Vector z = layer.W.transpose() * K.ldlt().solve(y - layer.B);
  const auto g = implicit_grad(z, z, y, layer);
  const Vector expect = -K.ldlt().solve(layer.W * z);
  EXPECT_LE((g.B[0] - expect).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(ImplicitGrad, NontrivialLossMatchesFiniteDifferences) {
  num::Rng rng(2);
  struct Case {
    std::string fam, map;
    double lambda, scale;
  };
  const std::vector<Case> cases = {{"gaussian", "identity", 0.5, 0.6},
                                   {"gaussian", "trelu:0.5", 1.0, 0.5},
                                   {"bernoulli", "identity", 0.3, 0.6},
                                   {"poisson", "identity", 1.0, 0.3},
                                   {"log_cosh", "leaky_trelu:0.4:0.2", 1.0, 0.5}};
  for (const auto& c : cases) {
    auto layer = make_layer(randn(5, 2, rng, c.scale), randv(5, rng, 0.2), c.lambda, c.fam, c.map);
    const Vector y = sample_Y(layer, 1, rng).col(0);
    const Vector target = randv(2, rng);
    auto loss = [&](const PedLayer& m) {
      const Vector z = infer(y, m, tight()).Z.col(0);
      return 0.5 * (z - target).squaredNorm() + z.sum();
    };
    const Vector z = infer(y, layer, tight()).Z.col(0);
    const Vector v = (z - target) + Vector::Ones(2);
    EXPECT_LE(max_rel(implicit_grad(v, z, y, layer), fd_params(layer, loss)), 1e-5) << c.fam << " " << c.map;
  }
}

TEST(ImplicitGrad, DeepNontrivialLossMatchesFiniteDifferences) {
  num::Rng rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    DeepPedSpec s;
    s.data_precision = 1.0 + rng.uniform();
    s.layers.push_back(make_layer(randn(5, 3, rng, 0.4), randv(5, rng, 0.2), 1.0, "gaussian", "trelu:0.5"));
    s.layers.push_back(make_layer(randn(3, 2, rng, 0.4), randv(3, rng, 0.2), 1.5, "gaussian", "trelu:0.5"));
    const Vector y = randv(5, rng);
    const Vector target = randv(5, rng);
    auto loss = [&](const DeepPedSpec& m) {
      const Vector z = infer_deep(y, m, tight()).zeta.col(0);
      return 0.5 * (z - target).squaredNorm();
    };
    const Vector z = infer_deep(y, s, tight()).zeta.col(0);
    EXPECT_LE(max_rel(implicit_grad(Vector(z - target), z, y, s), fd_params(s, loss)), 1e-5);
  }
}

TEST(ImplicitGrad, SingularSystemIsIllPosed) {
  EXPECT_THROW(detail::adjoint_solve(Matrix::Identity(2, 2), Vector::Ones(2)), IllPosedError);
  Matrix J(2, 2);
  J << 1.0, 0.0, 0.0, 0.5;
  EXPECT_THROW(detail::adjoint_solve(J, Vector::Ones(2)), IllPosedError);
  J(0, 0) = 0.5;
  EXPECT_NO_THROW(detail::adjoint_solve(J, Vector::Ones(2)));
}

TEST(OuterObjective, GaussianIdentityIsReprojectionError) {
  num::Rng rng(4);
  auto layer = make_layer(randn(4, 2, rng), randv(4, rng), 0.4, "gaussian", "identity");
  const Matrix Y = randn(4, 7, rng);
  const Matrix Z = infer(Y, layer, tight()).Z;
  const double wd = 3.0;
  const Matrix resid = (layer.W * Z).colwise() + layer.B - Y;
  const double expect = 0.5 * resid.squaredNorm() + 0.5 * layer.lambda * Z.squaredNorm() +
                        0.5 * wd * (layer.W.squaredNorm() + layer.B.squaredNorm()) - 0.5 * Y.squaredNorm();
  EXPECT_NEAR(outer_objective(Z, Y, layer, wd), expect, 1e-10 * std::max(1.0, std::abs(expect)));
}

TEST(OuterObjective, ZeroParametersGiveZero) {
  auto layer = make_layer(Matrix::Zero(3, 2), Vector::Zero(3), 1.0, "gaussian", "identity");
  EXPECT_EQ(outer_objective(Matrix::Zero(2, 4), Matrix::Zero(3, 4), layer, 10.0), 0.0);
}

TEST(OuterObjective, GradientMatchesFiniteDifferences) {
  num::Rng rng(5);
  struct Case {
    std::string fam, map;
    double lambda, scale;
  };
  const std::vector<Case> cases = {{"gaussian", "identity", 0.5, 0.6},
                                   {"gaussian", "trelu:0.5", 1.0, 0.5},
                                   {"bernoulli", "trelu:0.3", 0.5, 0.6},
                                   {"poisson", "identity", 1.0, 0.3},
                                   {"binomial:10", "identity", 1.0, 0.3}};
  for (const auto& c : cases) {
    auto layer = make_layer(randn(4, 2, rng, c.scale), randv(4, rng, 0.2), c.lambda, c.fam, c.map);
    const Matrix Y = sample_Y(layer, 3, rng);
    const double wd = 0.7;
    auto obj = [&](const PedLayer& m) { return outer_objective(infer(Y, m, tight()).Z, Y, m, wd); };
    const Matrix Z = infer(Y, layer, tight()).Z;
    EXPECT_LE(max_rel(outer_objective_grad(Z, Y, layer, wd), fd_params(layer, obj)), 1e-5) << c.fam;
  }
}

TEST(OuterObjective, DeepGradientMatchesFiniteDifferences) {
  num::Rng rng(6);
  DeepPedSpec s;
  s.data_precision = 1.3;
  s.layers.push_back(make_layer(randn(4, 3, rng, 0.4), randv(4, rng, 0.2), 1.0, "gaussian", "trelu:0.5"));
  s.layers.push_back(make_layer(randn(3, 2, rng, 0.4), randv(3, rng, 0.2), 2.0, "gaussian", "trelu:0.5"));
  const Matrix Y = randn(4, 3, rng);
  const std::vector<double> wd = {0.5, 1.5};
  auto obj = [&](const DeepPedSpec& m) { return outer_objective(infer_deep(Y, m, tight()).zeta, Y, m, wd); };
  const Matrix Z = infer_deep(Y, s, tight()).zeta;
  EXPECT_LE(max_rel(outer_objective_grad(Z, Y, s, wd), fd_params(s, obj)), 1e-5);
}

TEST(WeightDecay, GradientIsExactlyWdTheta) {
  num::Rng rng(7);
  ParamBundle p{{randn(3, 2, rng)}, {randv(3, rng)}};
  GradientBundle g = ParamBundle::zeros_like(p);
  add_weight_decay(g, p, {2.5});
  EXPECT_EQ((g.W[0] - 2.5 * p.W[0]).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((g.B[0] - 2.5 * p.B[0]).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(default_weight_decay({50}), std::vector<double>{500.0});
  EXPECT_EQ(default_weight_decay({50, 30}), (std::vector<double>{1000.0, 600.0}));
}

TEST(Adam, ZeroGradientLeavesParameters) {
  num::Rng rng(8);
  ParamBundle p{{randn(3, 2, rng)}, {randv(3, rng)}};
  const ParamBundle before = p;
  auto st = AdamState::fresh(p);
  adam_step(p, ParamBundle::zeros_like(p), st, {});
  EXPECT_EQ((p.W[0] - before.W[0]).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((p.B[0] - before.B[0]).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Adam, ConstantGradientStepTendsToLearningRate) {
  ParamBundle p{{Matrix::Zero(1, 2)}, {Vector::Zero(1)}};
  GradientBundle g{{Matrix(1, 2)}, {Vector::Constant(1, -0.3)}};
  g.W[0] << 2.0, -5.0;
  auto st = AdamState::fresh(p);
  AdamConfig c;
  ParamBundle prev = p;
  for (int i = 0; i < 200; ++i) {
    prev = p;
    adam_step(p, g, st, c);
  }
  EXPECT_NEAR(p.W[0](0) - prev.W[0](0), -c.learning_rate, 1e-9);
  EXPECT_NEAR(p.W[0](1) - prev.W[0](1), c.learning_rate, 1e-9);
  EXPECT_NEAR(p.B[0](0) - prev.B[0](0), c.learning_rate, 1e-9);
}

TEST(Adam, ScalarQuadraticConverges) {
  // minimise (x - 0.1)^2 from 0 with lr 1e-3
  ParamBundle p{{Matrix::Zero(1, 1)}, {Vector::Zero(0)}};
  auto st = AdamState::fresh(p);
  for (int i = 0; i < 500; ++i) {
    GradientBundle g{{Matrix::Constant(1, 1, 2.0 * (p.W[0](0) - 0.1))}, {Vector::Zero(0)}};
    adam_step(p, g, st, {});
  }
  EXPECT_NEAR(p.W[0](0), 0.1, 1e-3);
}

TEST(Adam, InactiveLayersUntouched) {
  num::Rng rng(9);
  ParamBundle p{{randn(2, 2, rng), randn(2, 1, rng)}, {randv(2, rng), randv(2, rng)}};
  const ParamBundle before = p;
  auto st = AdamState::fresh(p);
  GradientBundle g{{randn(2, 2, rng), randn(2, 1, rng)}, {randv(2, rng), randv(2, rng)}};
  adam_step(p, g, st, {}, {1, 0});
  EXPECT_NE((p.W[0] - before.W[0]).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((p.W[1] - before.W[1]).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((p.B[1] - before.B[1]).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(st.step[1], 0);
  EXPECT_EQ(st.step[0], 1);
}

TEST(Init, PolicyAndShapes) {
  auto a = init_layer(50, 2, make_family("gaussian"), make_canonical("identity"), std::nullopt, 0);
  EXPECT_DOUBLE_EQ(a.lambda, 0.1);
  EXPECT_EQ(a.B.cwiseAbs().maxCoeff(), 0.0);
  auto b = init_layer(50, 2, make_family("gaussian"), make_canonical("relu"), std::nullopt, 0);
  EXPECT_DOUBLE_EQ(b.lambda, 1.0);
  EXPECT_EQ((a.W - b.W).cwiseAbs().maxCoeff(), 0.0);
  auto big = init_layer(400, 4, make_family("gaussian"), make_canonical("identity"), std::nullopt, 3);
  const double sd = std::sqrt(big.W.squaredNorm() / static_cast<double>(big.W.size()));
  EXPECT_NEAR(sd, 0.1 / 2.0, 0.005);
}

TEST(FreezeSchedule, DataAndLatentSides) {
  TrainConfig c;
  EXPECT_EQ(active_layers(2, 4, c, true), (std::vector<char>{0, 0}));
  EXPECT_EQ(active_layers(2, 5, c, true), (std::vector<char>{1, 0}));
  EXPECT_EQ(active_layers(2, 10, c, true), (std::vector<char>{1, 1}));
  c.freeze_from = FreezeFrom::latent;
  EXPECT_EQ(active_layers(2, 5, c, true), (std::vector<char>{0, 1}));
  EXPECT_EQ(active_layers(2, 0, c, false), (std::vector<char>{1, 1}));
}

TEST(TrainShallow, EmptyDatasetReturnsInitialLayer) {
  auto init = init_layer(5, 2, make_family("gaussian"), make_canonical("identity"), std::nullopt, 1);
  auto r = train_shallow(Matrix(5, 0), init, {});
  EXPECT_EQ((r.model.W - init.W).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE(r.history.empty());
}

TEST(TrainShallow, GaussianLinearImprovesReprojection) {
  num::Rng rng(10);
  auto truth = make_layer(randn(10, 2, rng, std::sqrt(0.5)), Vector::Zero(10), 1.0, "gaussian", "identity");
  const Matrix Y = sample_Y(truth, 500, rng);
  auto init = init_layer(10, 2, make_family("gaussian"), make_canonical("identity"), std::nullopt, 0);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 50;
  auto mse = [&](const PedLayer& m) {
    const Matrix Z = infer(Y, m).Z;
    return (((m.W * Z).colwise() + m.B) - Y).squaredNorm() / static_cast<double>(Y.size());
  };
  auto r = train_shallow(Y, init, cfg);
  EXPECT_LE(mse(r.model), mse(init));
  const auto means = epoch_means(r.history);
  ASSERT_EQ(means.size(), 10u);
  EXPECT_LT(means.back(), means.front());
  EXPECT_EQ(r.history.front().epoch, 0);
  EXPECT_EQ(r.history.back().batch, 9);
}

TEST(TrainShallow, DeterministicAndResumable) {
  num::Rng rng(11);
  auto truth = make_layer(randn(6, 2, rng, 0.7), Vector::Zero(6), 1.0, "gaussian", "identity");
  const Matrix Y = sample_Y(truth, 120, rng);
  auto init = init_layer(6, 2, make_family("gaussian"), make_canonical("identity"), std::nullopt, 4);
  TrainConfig cfg;
  cfg.batch_size = 40;
  cfg.epochs = 4;
  auto a = train_shallow(Y, init, cfg);
  auto b = train_shallow(Y, init, cfg);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].objective, b.history[i].objective);
  EXPECT_EQ((a.model.W - b.model.W).cwiseAbs().maxCoeff(), 0.0);

  cfg.epochs = 2;
  auto first = train_shallow(Y, init, cfg);
  auto second = train_shallow(Y, first.model, cfg, first.state);
  EXPECT_EQ(second.history.front().epoch, 2);
  EXPECT_EQ((second.model.W - a.model.W).cwiseAbs().maxCoeff(), 0.0);
}

TEST(TrainShallow, AbortsWhenTooManyColumnsFail) {
  num::Rng rng(12);
  auto init = init_layer(6, 2, make_family("gaussian"), make_canonical("identity"), std::nullopt, 4);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.solver.max_iter = 1;
  cfg.solver.tol = 1e-14;
  EXPECT_THROW(train_shallow(randn(6, 30, rng), init, cfg), BatchNonConvergenceError);
}

TEST(TrainDeep, FrozenLayersBitIdentical) {
  num::Rng rng(13);
  const Matrix Y = randn(8, 60, rng);
  auto init = init_deep_spec({8, 4, 2}, {make_canonical("trelu:0.5"), make_canonical("trelu:0.5")}, std::nullopt, 1.0, 5);
  TrainConfig cfg;
  cfg.batch_size = 30;
  auto r = train_deep(Y, init, cfg);
  EXPECT_EQ((r.model.layers[1].W - init.layers[1].W).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((r.model.layers[1].B - init.layers[1].B).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NE((r.model.layers[0].W - init.layers[0].W).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.history.front().frozen, (std::vector<int>{1, 2}));
  EXPECT_EQ(r.history.back().frozen, (std::vector<int>{2}));

  cfg.freeze_epochs_per_layer = 100;
  auto all = train_deep(Y, init, cfg);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ((all.model.layers[k].W - init.layers[k].W).cwiseAbs().maxCoeff(), 0.0);
}

TEST(TrainDeep, GaussianReluObjectiveDecreases) {
  num::Rng rng(14);
  const Matrix Z = randn(2, 600, rng);
  const Matrix W = randn(30, 2, rng, 1.0 / std::sqrt(2.0));
  Matrix Y = W * Z;
  for (Eigen::Index i = 0; i < Y.size(); ++i) Y.data()[i] = std::max(Y.data()[i], 0.0) + rng.normal();
  auto init = init_deep_spec({30, 2}, {make_canonical("relu")}, std::nullopt, 1.0, 2);
  TrainConfig cfg;
  cfg.freeze_epochs_per_layer = 0;
  cfg.batch_size = 100;
  auto r = train_deep(Y, init, cfg);
  const auto means = epoch_means(r.history);
  ASSERT_EQ(means.size(), 10u);
  EXPECT_LT(means.back(), means.front());
}
