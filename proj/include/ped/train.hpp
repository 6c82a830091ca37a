#ifndef PED_TRAIN_HPP
#define PED_TRAIN_HPP

// Outer problem: gradients through the fixed point by the implicit function
// theorem, the joint-MAP objective, Adam and the training loops.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ped/peddeep.hpp"
#include "ped/pedshallow.hpp"

namespace ped {

/// Per-layer W and B; used both for parameters and for their gradients.
struct ParamBundle {
  std::vector<Matrix> W;
  std::vector<Vector> B;

  std::size_t layers() const noexcept { return W.size(); }

  static ParamBundle zeros_like(const ParamBundle& p) {
    ParamBundle z;
    for (const auto& w : p.W) z.W.push_back(Matrix::Zero(w.rows(), w.cols()));
    for (const auto& b : p.B) z.B.push_back(Vector::Zero(b.size()));
    return z;
  }
  ParamBundle& axpy(double a, const ParamBundle& o) {
    for (std::size_t k = 0; k < W.size(); ++k) {
      W[k] += a * o.W[k];
      B[k] += a * o.B[k];
    }
    return *this;
  }
  double squared_norm(std::size_t k) const { return W[k].squaredNorm() + B[k].squaredNorm(); }
  double max_abs() const {
    double m = 0.0;
    for (std::size_t k = 0; k < W.size(); ++k) {
      if (W[k].size()) m = std::max(m, W[k].cwiseAbs().maxCoeff());
      if (B[k].size()) m = std::max(m, B[k].cwiseAbs().maxCoeff());
    }
    return m;
  }
};

using GradientBundle = ParamBundle;

inline ParamBundle params_of(const PedLayer& layer) { return {{layer.W}, {layer.B}}; }
inline ParamBundle params_of(const DeepPedSpec& spec) {
  ParamBundle p;
  for (const auto& l : spec.layers) {
    p.W.push_back(l.W);
    p.B.push_back(l.B);
  }
  return p;
}
inline void install(PedLayer& layer, const ParamBundle& p) {
  layer.W = p.W[0];
  layer.B = p.B[0];
}
inline void install(DeepPedSpec& spec, const ParamBundle& p) {
  for (std::size_t k = 0; k < spec.layers.size(); ++k) {
    spec.layers[k].W = p.W[k];
    spec.layers[k].B = p.B[k];
  }
}

namespace detail {

// w solving (I - J)^T w = v; refuses numerically singular I - J.
inline Vector adjoint_solve(const Matrix& J, const Vector& v) {
  const Matrix M = Matrix::Identity(J.rows(), J.cols()) - J;
  Eigen::JacobiSVD<Matrix> svd(M.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (s.size() && s(s.size() - 1) < 1e-10)
    throw IllPosedError("I - J is singular at the fixed point (min singular value " +
                        std::to_string(s(s.size() - 1)) + ")");
  return svd.solve(v);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Shallow

/// v^T dz*/dtheta at the fixed point z of f(.; y, W, B).
inline GradientBundle implicit_grad(const Vector& v, const Vector& z, const Vector& y, const PedLayer& layer) {
  check_dims(z, y, layer);
  if (v.size() != z.size()) throw ValidationError("implicit_grad: v and z differ in size");
  if (layer.map.has_kink() && on_boundary(layer.W * z + layer.B))
    throw KinkError("implicit gradient undefined on the relu kink");
  const Vector w = detail::adjoint_solve(layer_jacobian(z, y, layer), v);
  const LayerTerms t = layer_terms(z, layer);
  const Vector ty = sufficient_stat(y, layer.family);
  const Vector u = ty.cwiseProduct(t.rho) - t.sigma;
  const Vector u1 = ty.cwiseProduct(t.rho1) - t.sigma1;
  const Vector a = u1.cwiseProduct(layer.W * w) / layer.lambda;
  GradientBundle g;
  g.W.push_back((u * w.transpose()) / layer.lambda + a * z.transpose());
  g.B.push_back(a);
  return g;
}

/// Partial derivatives of the negative log posterior in (W, B) with z held fixed.
inline GradientBundle explicit_grad(const Vector& z, const Vector& y, const PedLayer& layer) {
  const Vector eta = layer.W * z + layer.B;
  Vector u(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double r = layer.map.R(eta(i));
    u(i) = (layer.family.T(y(i)) - layer.family.A1(r)) * layer.map.rho(eta(i));
  }
  return {{-u * z.transpose()}, {-u}};
}

/// Total derivative of NLP(z*(theta), theta) for one sample.
inline GradientBundle sample_objective_grad(const Vector& z, const Vector& y, const PedLayer& layer) {
  GradientBundle g = explicit_grad(z, y, layer);
  return g.axpy(1.0, implicit_grad(neg_log_posterior_grad(z, y, layer), z, y, layer));
}

inline double weight_decay_term(const ParamBundle& p, const std::vector<double>& wd) {
  double v = 0.0;
  for (std::size_t k = 0; k < p.layers(); ++k) v += 0.5 * wd[k] * p.squared_norm(k);
  return v;
}

inline void add_weight_decay(GradientBundle& g, const ParamBundle& p, const std::vector<double>& wd) {
  for (std::size_t k = 0; k < p.layers(); ++k) {
    g.W[k] += wd[k] * p.W[k];
    g.B[k] += wd[k] * p.B[k];
  }
}

/// sum_s NLP(Z_s; Y_s) + (wd/2) |theta|^2
inline double outer_objective(const Matrix& Z, const Matrix& Y, const PedLayer& layer, double wd) {
  double v = 0.0;
  for (Eigen::Index s = 0; s < Y.cols(); ++s) v += neg_log_posterior(Z.col(s), Y.col(s), layer);
  return v + weight_decay_term(params_of(layer), {wd});
}

inline GradientBundle outer_objective_grad(const Matrix& Z, const Matrix& Y, const PedLayer& layer, double wd) {
  GradientBundle g = ParamBundle::zeros_like(params_of(layer));
  for (Eigen::Index s = 0; s < Y.cols(); ++s) g.axpy(1.0, sample_objective_grad(Z.col(s), Y.col(s), layer));
  add_weight_decay(g, params_of(layer), {wd});
  return g;
}

// ---------------------------------------------------------------------------
// Deep

inline GradientBundle implicit_grad(const Vector& v, const Vector& zeta, const Vector& y, const DeepPedSpec& spec) {
  if (v.size() != zeta.size()) throw ValidationError("implicit_grad: v and zeta differ in size");
  const Vector w = detail::adjoint_solve(jacobian_blocks(zeta, y, spec).dense(), v);
  const auto t = detail::deep_terms(zeta, y, spec);
  const AugmentedLayout lay(spec);
  GradientBundle g;
  for (std::size_t l = 1; l <= spec.depth(); ++l) {
    const auto& layer = spec.layers[l - 1];
    const double lam = layer.lambda;
    const Vector& rho = t.rho[l - 1];
    const Vector u = rho.cwiseProduct(t.prev[l - 1] - t.R[l - 1]);
    const Vector sigma1 = rho.cwiseProduct(rho) + t.R[l - 1].cwiseProduct(t.rho1[l - 1]);
    const Vector u1 = t.rho1[l - 1].cwiseProduct(t.prev[l - 1]) - sigma1;
    const Vector wl = lay.slice(w, l);
    const Vector zl = lay.slice(zeta, l);
    Vector a = u1.cwiseProduct(layer.W * wl) / lam;
    Matrix gW = (u * wl.transpose()) / lam;
    if (l > 1) a += rho.cwiseProduct(lay.slice(w, l - 1)) / std::sqrt(spec.precision(l - 1));
    gW += a * zl.transpose();
    g.W.push_back(std::move(gW));
    g.B.push_back(std::move(a));
  }
  return g;
}

inline GradientBundle explicit_grad(const Vector& zeta, const Vector& y, const DeepPedSpec& spec) {
  const auto t = detail::deep_terms(zeta, y, spec);
  const AugmentedLayout lay(spec);
  GradientBundle g;
  for (std::size_t l = 1; l <= spec.depth(); ++l) {
    const Vector u = t.rho[l - 1].cwiseProduct(t.prev[l - 1] - t.R[l - 1]);
    g.W.push_back(-u * lay.slice(zeta, l).transpose());
    g.B.push_back(-u);
  }
  return g;
}

inline GradientBundle sample_objective_grad(const Vector& zeta, const Vector& y, const DeepPedSpec& spec) {
  GradientBundle g = explicit_grad(zeta, y, spec);
  return g.axpy(1.0, implicit_grad(deep_neg_log_posterior_grad(zeta, y, spec), zeta, y, spec));
}

inline double outer_objective(const Matrix& Zeta, const Matrix& Y, const DeepPedSpec& spec,
                              const std::vector<double>& wd) {
  double v = 0.0;
  for (Eigen::Index s = 0; s < Y.cols(); ++s) v += deep_neg_log_posterior(Zeta.col(s), Y.col(s), spec);
  return v + weight_decay_term(params_of(spec), wd);
}

inline GradientBundle outer_objective_grad(const Matrix& Zeta, const Matrix& Y, const DeepPedSpec& spec,
                                           const std::vector<double>& wd) {
  GradientBundle g = ParamBundle::zeros_like(params_of(spec));
  for (Eigen::Index s = 0; s < Y.cols(); ++s)
    g.axpy(1.0, sample_objective_grad(Zeta.col(s), Y.col(s), spec));
  add_weight_decay(g, params_of(spec), wd);
  return g;
}

// ---------------------------------------------------------------------------
// Adam (L2 penalty enters the gradient, no decoupled decay)

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ValidationError("moment decay rates must lie in [0,1)");
    if (!(eps > 0.0)) throw ValidationError("adam eps must be positive");
  }
};

/// Moments and a step counter per layer, so a layer thawed late starts its
/// own bias correction from scratch.
struct AdamState {
  std::vector<long> step;
  ParamBundle m, v;

  static AdamState fresh(const ParamBundle& p) {
    return {std::vector<long>(p.layers(), 0), ParamBundle::zeros_like(p), ParamBundle::zeros_like(p)};
  }
};

/// One Adam step; layers with active[k] == 0 are left untouched (parameters, moments, counter).
inline void adam_step(ParamBundle& params, const GradientBundle& grads, AdamState& st, const AdamConfig& cfg,
                      const std::vector<char>& active = {}) {
  if (grads.layers() != params.layers() || st.step.size() != params.layers())
    throw ValidationError("adam_step: layer counts differ");
  for (std::size_t k = 0; k < params.layers(); ++k) {
    if (!active.empty() && !active[k]) continue;
    if (grads.W[k].rows() != params.W[k].rows() || grads.W[k].cols() != params.W[k].cols() ||
        grads.B[k].size() != params.B[k].size())
      throw ValidationError("adam_step: gradient shape does not match parameters");
    const long t = ++st.step[k];
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    auto upd = [&](auto& p, const auto& g, auto& m, auto& v) {
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
      p.array() -= cfg.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
    };
    upd(params.W[k], grads.W[k], st.m.W[k], st.v.W[k]);
    upd(params.B[k], grads.B[k], st.m.B[k], st.v.B[k]);
  }
}

// ---------------------------------------------------------------------------
// Initialisation

/// lambda = 0.1 for linear maps, 1 otherwise.
inline double default_lambda(const CanonicalMap& map) { return map.is_linear() ? 0.1 : 1.0; }

/// W ~ N(0, (scale/sqrt(l))^2) entrywise, B = 0.
inline PedLayer init_layer(Eigen::Index d, Eigen::Index l, const ExpFamily& family, const CanonicalMap& map,
                           std::optional<double> lambda, std::uint64_t seed, double scale = 0.1) {
  if (d < 1 || l < 1) throw ValidationError("layer dimensions must be positive");
  num::Rng rng(seed);
  Matrix W(d, l);
  const double sd = scale / std::sqrt(static_cast<double>(l));
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < l; ++j) W(i, j) = sd * rng.normal();
  return PedLayer{std::move(W), Vector::Zero(d), lambda.value_or(default_lambda(map)), family, map};
}

/// dims = (d^(0), ..., d^(L)); one map per layer.
inline DeepPedSpec init_deep_spec(const std::vector<Eigen::Index>& dims, const std::vector<CanonicalMap>& maps,
                                  std::optional<double> lambda, double data_precision, std::uint64_t seed,
                                  double scale = 0.1) {
  if (dims.size() < 2) throw ValidationError("deep spec needs at least two dimensions");
  if (maps.size() != dims.size() - 1) throw ValidationError("need one canonical map per layer");
  DeepPedSpec s;
  s.data_precision = data_precision;
  num::Rng root(seed);
  for (std::size_t l = 1; l < dims.size(); ++l)
    s.layers.push_back(init_layer(dims[l - 1], dims[l], make_family("gaussian"), maps[l - 1], lambda,
                                  root.split(l).seed(), scale));
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Training loops

enum class FreezeFrom { data, latent };

struct TrainConfig {
  int batch_size = 500;
  /// Defaults: 30 shallow, 10 deep.
  std::optional<int> epochs;
  AdamConfig adam;
  /// Per-layer weight decay; default 10 L d^(l-1).
  std::optional<std::vector<double>> weight_decay;
  /// Deep: layer l (counted from `freeze_from`) is frozen for the first freeze_epochs_per_layer * l epochs.
  int freeze_epochs_per_layer = 5;
  FreezeFrom freeze_from = FreezeFrom::data;
  std::uint64_t seed = 0;
  SolverConfig solver;
  int workers = 1;
  double max_nonconverged_fraction = 0.1;
  bool warm_start = true;

  void validate() const {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (epochs && *epochs < 0) throw ValidationError("epochs must be >= 0");
    if (freeze_epochs_per_layer < 0) throw ValidationError("freeze_epochs_per_layer must be >= 0");
    if (!(max_nonconverged_fraction >= 0.0 && max_nonconverged_fraction <= 1.0))
      throw ValidationError("max_nonconverged_fraction must lie in [0,1]");
    if (workers < 1) throw ValidationError("workers must be >= 1");
    if (weight_decay)
      for (double w : *weight_decay)
        if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("weight decay must be non-negative");
    adam.validate();
    solver.validate();
  }
};

/// 10 L d^(l-1) for each layer.
inline std::vector<double> default_weight_decay(const std::vector<Eigen::Index>& rows_per_layer) {
  const double L = static_cast<double>(rows_per_layer.size());
  std::vector<double> wd;
  for (auto d : rows_per_layer) wd.push_back(10.0 * L * static_cast<double>(d));
  return wd;
}

struct LossRecord {
  int epoch = 0;
  int batch = 0;
  double objective = 0.0;
  double solver_iters_mean = 0.0;
  std::size_t nonconverged_count = 0;
  std::size_t boundary_dropped = 0;
  /// 1-based indices of layers frozen during this batch.
  std::vector<int> frozen;
};

struct TrainState {
  AdamState adam;
  int next_epoch = 0;
  /// Cached fixed points per sample (state dim x N); empty before the first epoch.
  Matrix warm;
};

template <class Model> struct TrainResult {
  Model model;
  TrainState state;
  std::vector<LossRecord> history;
};

/// Whether each layer is trainable in `epoch` (0-based).
inline std::vector<char> active_layers(std::size_t L, int epoch, const TrainConfig& cfg, bool deep) {
  std::vector<char> a(L, 1);
  if (!deep) return a;
  for (std::size_t k = 0; k < L; ++k) {
    const std::size_t rank = cfg.freeze_from == FreezeFrom::data ? k + 1 : L - k;
    a[k] = epoch >= cfg.freeze_epochs_per_layer * static_cast<int>(rank) ? 1 : 0;
  }
  return a;
}

namespace detail {

struct BatchSolve {
  Matrix Z;
  std::vector<FixedPointResult> columns;
  std::vector<char> boundary;
};

template <class Model> BatchSolve solve_batch(const Matrix& Yb, const Model& m, const InferOptions& opt) {
  if constexpr (std::is_same_v<Model, PedLayer>) {
    auto r = infer(Yb, m, opt);
    return {std::move(r.Z), std::move(r.columns), std::move(r.boundary)};
  } else {
    auto r = infer_deep(Yb, m, opt);
    return {std::move(r.zeta), std::move(r.columns), std::move(r.boundary)};
  }
}

inline double sample_nlp(const Vector& z, const Vector& y, const PedLayer& m) { return neg_log_posterior(z, y, m); }
inline double sample_nlp(const Vector& z, const Vector& y, const DeepPedSpec& m) {
  return deep_neg_log_posterior(z, y, m);
}

inline Eigen::Index state_dim(const PedLayer& m) { return m.l(); }
inline Eigen::Index state_dim(const DeepPedSpec& m) { return m.state_dim(); }
inline Eigen::Index data_dim(const PedLayer& m) { return m.d(); }
inline Eigen::Index data_dim(const DeepPedSpec& m) { return m.data_dim(); }
inline std::vector<Eigen::Index> rows_per_layer(const PedLayer& m) { return {m.d()}; }
inline std::vector<Eigen::Index> rows_per_layer(const DeepPedSpec& m) {
  std::vector<Eigen::Index> r;
  for (const auto& l : m.layers) r.push_back(l.W.rows());
  return r;
}

template <class Model>
TrainResult<Model> train_loop(const Matrix& Y, Model model, const TrainConfig& cfg, std::optional<TrainState> resume,
                              bool deep) {
  cfg.validate();
  model.validate();
  if (Y.rows() != data_dim(model))
    throw ValidationError("Y has " + std::to_string(Y.rows()) + " rows, model expects " +
                          std::to_string(data_dim(model)));
  const int epochs = cfg.epochs.value_or(deep ? 10 : 30);
  const auto N = Y.cols();
  const auto D = state_dim(model);
  const std::vector<double> wd = cfg.weight_decay.value_or(default_weight_decay(rows_per_layer(model)));

  ParamBundle params = params_of(model);
  if (wd.size() != params.layers()) throw ValidationError("weight decay needs one entry per layer");

  TrainResult<Model> out{model, {}, {}};
  TrainState& st = out.state;
  if (resume) {
    st = std::move(*resume);
    if (st.adam.step.size() != params.layers()) throw ValidationError("resume state does not match the model");
  } else {
    st.adam = AdamState::fresh(params);
  }
  if (N == 0) return out;
  if (st.warm.rows() != D || st.warm.cols() != N) st.warm = Matrix::Zero(D, N);

  const num::Rng root(cfg.seed);
  const int first = st.next_epoch;
  for (int epoch = first; epoch < first + epochs; ++epoch) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(N));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    num::Rng rng = root.split(static_cast<std::uint64_t>(epoch) + 1);
    rng.shuffle(order);
    const auto active = active_layers(params.layers(), epoch, cfg, deep);
    std::vector<int> frozen;
    for (std::size_t k = 0; k < active.size(); ++k)
      if (!active[k]) frozen.push_back(static_cast<int>(k) + 1);

    int batch = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const auto nb = static_cast<Eigen::Index>(stop - start);
      Matrix Yb(Y.rows(), nb), Wb(D, nb);
      for (Eigen::Index j = 0; j < nb; ++j) {
        Yb.col(j) = Y.col(order[start + static_cast<std::size_t>(j)]);
        Wb.col(j) = st.warm.col(order[start + static_cast<std::size_t>(j)]);
      }
      InferOptions opt;
      opt.solver = cfg.solver;
      opt.throw_on_failure = false;
      opt.workers = cfg.workers;
      if (cfg.warm_start) opt.warm_start = Wb;
      BatchSolve sol = solve_batch(Yb, out.model, opt);

      std::vector<std::size_t> failed;
      std::size_t dropped = 0;
      double iters = 0.0;
      for (Eigen::Index j = 0; j < nb; ++j) {
        const auto& c = sol.columns[static_cast<std::size_t>(j)];
        iters += c.iterations;
        if (!c.converged) failed.push_back(static_cast<std::size_t>(order[start + static_cast<std::size_t>(j)]));
        else if (sol.boundary[static_cast<std::size_t>(j)]) ++dropped;
      }
      if (static_cast<double>(failed.size()) > cfg.max_nonconverged_fraction * static_cast<double>(nb)) {
        std::string msg = "training aborted at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                          ": " + std::to_string(failed.size()) + " of " + std::to_string(nb) +
                          " samples did not converge";
        throw BatchNonConvergenceError(msg, failed);
      }

      // per-sample objective and gradient; reduced in sample order
      std::vector<std::optional<GradientBundle>> grads(static_cast<std::size_t>(nb));
      std::vector<double> nlp(static_cast<std::size_t>(nb), 0.0);
      parallel_for(static_cast<std::size_t>(nb), cfg.workers, [&](std::size_t j) {
        const auto& c = sol.columns[j];
        if (!c.converged || sol.boundary[j]) return;
        const auto col = static_cast<Eigen::Index>(j);
        nlp[j] = sample_nlp(sol.Z.col(col), Yb.col(col), out.model);
        grads[j] = sample_objective_grad(Vector(sol.Z.col(col)), Vector(Yb.col(col)), out.model);
      });
      GradientBundle g = ParamBundle::zeros_like(params);
      double objective = 0.0;
      for (std::size_t j = 0; j < grads.size(); ++j) {
        if (!grads[j]) continue;
        g.axpy(1.0, *grads[j]);
        objective += nlp[j];
      }
      objective += weight_decay_term(params, wd);
      add_weight_decay(g, params, wd);

      for (Eigen::Index j = 0; j < nb; ++j)
        if (sol.columns[static_cast<std::size_t>(j)].converged)
          st.warm.col(order[start + static_cast<std::size_t>(j)]) = sol.Z.col(j);

      adam_step(params, g, st.adam, cfg.adam, active);
      install(out.model, params);

      LossRecord rec;
      rec.epoch = epoch;
      rec.batch = batch;
      rec.objective = objective;
      rec.solver_iters_mean = iters / static_cast<double>(nb);
      rec.nonconverged_count = failed.size();
      rec.boundary_dropped = dropped;
      rec.frozen = frozen;
      out.history.push_back(std::move(rec));
    }
    st.next_epoch = epoch + 1;
  }
  return out;
}

} // namespace detail

inline TrainResult<PedLayer> train_shallow(const Matrix& Y, const PedLayer& init, const TrainConfig& cfg,
                                           std::optional<TrainState> resume = std::nullopt) {
  return detail::train_loop(Y, init, cfg, std::move(resume), false);
}

inline TrainResult<DeepPedSpec> train_deep(const Matrix& Y, const DeepPedSpec& init, const TrainConfig& cfg,
                                           std::optional<TrainState> resume = std::nullopt) {
  return detail::train_loop(Y, init, cfg, std::move(resume), true);
}

/// Mean of the objective per epoch over the loss history.
inline std::vector<double> epoch_means(const std::vector<LossRecord>& h) {
  std::vector<double> out;
  int cur = -1;
  double sum = 0.0;
  int n = 0;
  for (const auto& r : h) {
    if (r.epoch != cur) {
      if (n) out.push_back(sum / n);
      cur = r.epoch;
      sum = 0.0;
      n = 0;
    }
    sum += r.objective;
    ++n;
  }
  if (n) out.push_back(sum / n);
  return out;
}

} // namespace ped

#endif // PED_TRAIN_HPP
