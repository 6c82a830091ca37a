#ifndef PED_EVALHARNESS_HPP
#define PED_EVALHARNESS_HPP

// Downstream evaluation: a small regression head on top of a latent backbone
// (PCA, a PED model frozen or fine-tuned through its fixed point, or any fixed
// embedding), plus tools for comparing learned and true latents.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ped/train.hpp"

namespace ped {

// ---------------------------------------------------------------------------
// PCA with per-feature standardisation

struct PcaProjector {
  Vector mean;       // d
  Vector scale;      // d, population std (1 where a feature is constant)
  Matrix components; // d x l, orthonormal columns
  Vector variances;  // l, descending

  Eigen::Index dim() const noexcept { return components.cols(); }

  /// l x N scores of the columns of Y.
  Matrix transform(const Matrix& Y) const {
    if (Y.rows() != mean.size()) throw ValidationError("pca: data has the wrong number of features");
    const Matrix Xs = (Y.colwise() - mean).array().colwise() / scale.array();
    return components.transpose() * Xs;
  }

  /// Back to data space from scores.
  Matrix inverse_transform(const Matrix& S) const {
    const Matrix Xs = components * S;
    return (Xs.array().colwise() * scale.array()).matrix().colwise() + mean;
  }
};

/// Y is d x N (samples in columns). Each component's largest-magnitude loading is made positive.
inline PcaProjector pca_fit(const Matrix& Y, Eigen::Index l) {
  const auto d = Y.rows(), N = Y.cols();
  if (l < 1) throw ValidationError("pca: need at least one component");
  if (N < l) throw ValidationError("pca: " + std::to_string(N) + " samples cannot give " + std::to_string(l) +
                                   " components");
  if (l > d) throw ValidationError("pca: more components than features");
  num::require_finite(Y, "pca data");
  PcaProjector p;
  p.mean = Y.rowwise().mean();
  const Matrix centred = Y.colwise() - p.mean;
  p.scale = (centred.rowwise().squaredNorm() / static_cast<double>(N)).cwiseSqrt();
  for (Eigen::Index i = 0; i < d; ++i)
    if (!(p.scale(i) > 0.0)) p.scale(i) = 1.0;
  const Matrix Xs = centred.array().colwise() / p.scale.array();
  Eigen::BDCSVD<Matrix> svd(Xs, Eigen::ComputeThinU);
  p.components = svd.matrixU().leftCols(l);
  p.variances = svd.singularValues().head(l).array().square() / static_cast<double>(N);
  for (Eigen::Index k = 0; k < l; ++k) {
    Eigen::Index i;
    p.components.col(k).cwiseAbs().maxCoeff(&i);
    if (p.components(i, k) < 0.0) p.components.col(k) *= -1.0;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Head network: Linear(hidden) -> ReLU -> Linear(1)

struct HeadNet {
  Matrix W1; // hidden x l
  Vector b1; // hidden
  Matrix W2; // 1 x hidden
  double b2 = 0.0;

  Eigen::Index in_dim() const noexcept { return W1.cols(); }
  Eigen::Index hidden() const noexcept { return W1.rows(); }

  static HeadNet zeros(Eigen::Index l, Eigen::Index hidden = 100) {
    return {Matrix::Zero(hidden, l), Vector::Zero(hidden), Matrix::Zero(1, hidden), 0.0};
  }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
inline HeadNet init_head(Eigen::Index l, std::uint64_t seed, Eigen::Index hidden = 100) {
  if (l < 1 || hidden < 1) throw ValidationError("head: dimensions must be positive");
  num::Rng rng(seed);
  HeadNet h = HeadNet::zeros(l, hidden);
  const double a1 = 1.0 / std::sqrt(static_cast<double>(l));
  const double a2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (Eigen::Index i = 0; i < hidden; ++i)
    for (Eigen::Index j = 0; j < l; ++j) h.W1(i, j) = rng.uniform(-a1, a1);
  for (Eigen::Index i = 0; i < hidden; ++i) h.b1(i) = rng.uniform(-a1, a1);
  for (Eigen::Index i = 0; i < hidden; ++i) h.W2(0, i) = rng.uniform(-a2, a2);
  h.b2 = rng.uniform(-a2, a2);
  return h;
}

inline double head_forward(const HeadNet& h, const Vector& x) {
  if (x.size() != h.in_dim()) throw ValidationError("head: input has the wrong size");
  const Vector a = (h.W1 * x + h.b1).cwiseMax(0.0);
  return (h.W2 * a)(0) + h.b2;
}

struct HeadGrad {
  HeadNet params; // same layout as the head
  Vector input;   // d out / d x
};

/// Gradient of dout * head(x) in the parameters and the input. ReLU'(0) = 0.
inline HeadGrad head_backward(const HeadNet& h, const Vector& x, double dout = 1.0) {
  if (x.size() != h.in_dim()) throw ValidationError("head: input has the wrong size");
  const Vector pre = h.W1 * x + h.b1;
  const Vector act = pre.cwiseMax(0.0);
  Vector dpre = dout * h.W2.row(0).transpose();
  for (Eigen::Index i = 0; i < pre.size(); ++i)
    if (!(pre(i) > 0.0)) dpre(i) = 0.0;
  HeadGrad g;
  g.params.W2 = dout * act.transpose();
  g.params.b2 = dout;
  g.params.W1 = dpre * x.transpose();
  g.params.b1 = dpre;
  g.input = h.W1.transpose() * dpre;
  return g;
}

namespace detail {

// The head as a two-layer ParamBundle so the training Adam can drive it.
inline ParamBundle head_params(const HeadNet& h) { return {{h.W1, h.W2}, {h.b1, Vector::Constant(1, h.b2)}}; }
inline HeadNet head_from(const ParamBundle& p) { return {p.W[0], p.B[0], p.W[1], p.B[1](0)}; }

inline void accumulate(HeadNet& acc, const HeadNet& g) {
  acc.W1 += g.W1;
  acc.b1 += g.b1;
  acc.W2 += g.W2;
  acc.b2 += g.b2;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Downstream protocol

enum class BackboneKind { frozen_pca, ped_finetune, ped_frozen, oracle, constant_zero, external };

inline const char* backbone_name(BackboneKind k) {
  switch (k) {
  case BackboneKind::frozen_pca: return "frozen-pca";
  case BackboneKind::ped_finetune: return "ped-finetune";
  case BackboneKind::ped_frozen: return "ped-frozen";
  case BackboneKind::oracle: return "oracle";
  case BackboneKind::constant_zero: return "constant-zero";
  case BackboneKind::external: return "external";
  }
  return "?";
}

inline BackboneKind parse_backbone(const std::string& s) {
  for (auto k : {BackboneKind::frozen_pca, BackboneKind::ped_finetune, BackboneKind::ped_frozen, BackboneKind::oracle,
                 BackboneKind::constant_zero, BackboneKind::external})
    if (s == backbone_name(k)) return k;
  throw ValidationError("unknown backbone '" + s + "'");
}

struct DownstreamConfig {
  int epochs = 200;
  int batch_size = 500;
  double train_fraction = 0.8;
  Eigen::Index hidden = 100;
  AdamConfig adam;
  /// Fixed-point solves of the fine-tuned backbone.
  SolverConfig solver;
  double max_nonconverged_fraction = 0.1;
  /// Seeds run in parallel; each seed is sequential.
  int workers = 1;

  void validate() const {
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train_fraction must lie in (0,1)");
    if (hidden < 1) throw ValidationError("hidden width must be >= 1");
    if (workers < 1) throw ValidationError("workers must be >= 1");
    adam.validate();
    solver.validate();
  }
};

struct Split {
  std::vector<Eigen::Index> train, test;
};

struct SeedResult {
  std::uint64_t seed = 0;
  double train_mse = 0.0;
  double test_mse = 0.0;
  Split split;
};

struct DownstreamReport {
  std::string backbone;
  std::vector<SeedResult> seeds;
  long wins = 0;
};

namespace detail {

// Streams of one downstream seed: 1 split, 2 head init, 100 + e batch order of epoch e.
inline num::Rng seed_stream(std::uint64_t seed, std::uint64_t k) {
  return num::Rng(seed).split(k * 0x9E3779B97F4A7C15ull);
}

} // namespace detail

/// Disjoint train/test indices; the test set holds round((1 - train_fraction) M) samples.
inline Split split_indices(Eigen::Index M, double train_fraction, std::uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(M));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  num::Rng rng = detail::seed_stream(seed, 1);
  rng.shuffle(idx);
  const auto ntest = static_cast<std::size_t>(std::llround((1.0 - train_fraction) * static_cast<double>(M)));
  Split s;
  s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(ntest));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(ntest), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

/// Target g(z) = z_1 + z_2 for every column of the true latents.
inline Vector sum_target(const Matrix& Z_true) {
  if (Z_true.rows() < 2) throw ValidationError("target needs two latent coordinates");
  return (Z_true.row(0) + Z_true.row(1)).transpose();
}

inline double head_mse(const HeadNet& h, const Matrix& F, const Vector& target, const std::vector<Eigen::Index>& idx) {
  if (idx.empty()) return 0.0;
  double s = 0.0;
  for (auto j : idx) {
    const double e = head_forward(h, F.col(j)) - target(j);
    s += e * e;
  }
  return s / static_cast<double>(idx.size());
}

namespace detail {

inline void check_features(const Matrix& F, const Vector& target) {
  if (F.cols() != target.size()) throw ValidationError("features and targets have different sample counts");
  if (F.rows() < 1) throw ValidationError("features need at least one row");
  num::require_finite(F, "features");
}

// Adam over the head on fixed features for one seed.
inline SeedResult frozen_seed(const Matrix& F, const Vector& target, std::uint64_t seed, const DownstreamConfig& cfg,
                              HeadNet* trained = nullptr) {
  SeedResult res;
  res.seed = seed;
  res.split = split_indices(F.cols(), cfg.train_fraction, seed);
  HeadNet head = init_head(F.rows(), seed_stream(seed, 2).next_u64(), cfg.hidden);
  ParamBundle params = head_params(head);
  AdamState st = AdamState::fresh(params);
  std::vector<Eigen::Index> order = res.split.train;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    num::Rng rng = seed_stream(seed, 100 + static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double nb = static_cast<double>(stop - start);
      HeadNet g = HeadNet::zeros(F.rows(), cfg.hidden);
      for (std::size_t k = start; k < stop; ++k) {
        const auto j = order[k];
        const double err = head_forward(head, F.col(j)) - target(j);
        accumulate(g, head_backward(head, F.col(j), 2.0 * err / nb).params);
      }
      adam_step(params, head_params(g), st, cfg.adam);
      head = head_from(params);
    }
  }
  res.train_mse = head_mse(head, F, target, res.split.train);
  res.test_mse = head_mse(head, F, target, res.split.test);
  if (trained) *trained = head;
  return res;
}

inline Eigen::Index bottleneck_offset(const PedLayer&) { return 0; }
inline Eigen::Index bottleneck_offset(const DeepPedSpec& m) { return m.offset(m.depth()); }
inline Eigen::Index bottleneck_dim(const PedLayer& m) { return m.l(); }
inline Eigen::Index bottleneck_dim(const DeepPedSpec& m) { return m.dim(m.depth()); }

// Head and backbone trained jointly; the backbone gradient goes through the fixed point.
template <class Model>
SeedResult finetune_seed(const Matrix& Y, Model model, const Vector& target, std::uint64_t seed,
                         const DownstreamConfig& cfg, Model* tuned = nullptr, HeadNet* trained = nullptr) {
  const auto M = Y.cols();
  const auto D = state_dim(model);
  const auto off = bottleneck_offset(model), k = bottleneck_dim(model);
  SeedResult res;
  res.seed = seed;
  res.split = split_indices(M, cfg.train_fraction, seed);
  HeadNet head = init_head(k, seed_stream(seed, 2).next_u64(), cfg.hidden);
  ParamBundle hp = head_params(head), mp = params_of(model);
  AdamState hs = AdamState::fresh(hp), ms = AdamState::fresh(mp);
  Matrix warm = Matrix::Zero(D, M);

  InferOptions opt;
  opt.solver = cfg.solver;
  opt.throw_on_failure = false;

  std::vector<Eigen::Index> order = res.split.train;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    num::Rng rng = seed_stream(seed, 100 + static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const auto nb = static_cast<Eigen::Index>(stop - start);
      Matrix Yb(Y.rows(), nb), Wb(D, nb);
      for (Eigen::Index j = 0; j < nb; ++j) {
        Yb.col(j) = Y.col(order[start + static_cast<std::size_t>(j)]);
        Wb.col(j) = warm.col(order[start + static_cast<std::size_t>(j)]);
      }
      opt.warm_start = Wb;
      BatchSolve sol = solve_batch(Yb, model, opt);
      std::vector<std::size_t> failed;
      for (Eigen::Index j = 0; j < nb; ++j)
        if (!sol.columns[static_cast<std::size_t>(j)].converged)
          failed.push_back(static_cast<std::size_t>(order[start + static_cast<std::size_t>(j)]));
      if (static_cast<double>(failed.size()) > cfg.max_nonconverged_fraction * static_cast<double>(nb))
        throw BatchNonConvergenceError("fine-tuning aborted at epoch " + std::to_string(epoch) + ": " +
                                           std::to_string(failed.size()) + " of " + std::to_string(nb) +
                                           " samples did not converge",
                                       failed);

      HeadNet gh = HeadNet::zeros(k, cfg.hidden);
      GradientBundle gm = ParamBundle::zeros_like(mp);
      const double scale = 2.0 / static_cast<double>(nb);
      for (Eigen::Index j = 0; j < nb; ++j) {
        const auto& c = sol.columns[static_cast<std::size_t>(j)];
        if (!c.converged) continue;
        const auto s = order[start + static_cast<std::size_t>(j)];
        warm.col(s) = sol.Z.col(j);
        const Vector x = sol.Z.col(j).segment(off, k);
        const double err = head_forward(head, x) - target(s);
        const HeadGrad hg = head_backward(head, x, scale * err);
        accumulate(gh, hg.params);
        if (sol.boundary[static_cast<std::size_t>(j)]) continue; // no derivative on the kink
        Vector v = Vector::Zero(D);
        v.segment(off, k) = hg.input;
        gm.axpy(1.0, implicit_grad(v, Vector(sol.Z.col(j)), Vector(Yb.col(j)), model));
      }
      adam_step(hp, head_params(gh), hs, cfg.adam);
      adam_step(mp, gm, ms, cfg.adam);
      head = head_from(hp);
      install(model, mp);
    }
  }

  opt.warm_start = warm;
  const BatchSolve fin = solve_batch(Y, model, opt);
  const Matrix F = fin.Z.middleRows(off, k);
  res.train_mse = head_mse(head, F, target, res.split.train);
  res.test_mse = head_mse(head, F, target, res.split.test);
  if (tuned) *tuned = std::move(model);
  if (trained) *trained = head;
  return res;
}

} // namespace detail

/// Head trained on fixed features F (k x M) for each seed.
inline DownstreamReport run_frozen(const std::string& name, const Matrix& F, const Vector& target,
                                   const std::vector<std::uint64_t>& seeds, const DownstreamConfig& cfg) {
  cfg.validate();
  detail::check_features(F, target);
  DownstreamReport rep;
  rep.backbone = name;
  rep.seeds.resize(seeds.size());
  parallel_for(seeds.size(), cfg.workers,
               [&](std::size_t i) { rep.seeds[i] = detail::frozen_seed(F, target, seeds[i], cfg); });
  return rep;
}

/// Backbone (shallow layer or deep spec) fine-tuned together with the head for each seed.
template <class Model>
DownstreamReport run_finetune(const std::string& name, const Matrix& Y, const Model& model, const Vector& target,
                              const std::vector<std::uint64_t>& seeds, const DownstreamConfig& cfg,
                              std::vector<Model>* tuned = nullptr) {
  cfg.validate();
  model.validate();
  if (Y.rows() != detail::data_dim(model)) throw ValidationError("data and backbone dimensions differ");
  if (Y.cols() != target.size()) throw ValidationError("data and targets have different sample counts");
  DownstreamReport rep;
  rep.backbone = name;
  rep.seeds.resize(seeds.size());
  std::vector<Model> out(seeds.size(), model);
  parallel_for(seeds.size(), cfg.workers, [&](std::size_t i) {
    rep.seeds[i] = detail::finetune_seed(Y, model, target, seeds[i], cfg, &out[i]);
  });
  if (tuned) *tuned = std::move(out);
  return rep;
}

/// Bottleneck latents of a backbone on all of Y.
template <class Model> Matrix backbone_features(const Matrix& Y, const Model& model, const SolverConfig& solver = {},
                                                int workers = 1) {
  InferOptions opt;
  opt.solver = solver;
  opt.throw_on_failure = false;
  opt.workers = workers;
  const auto sol = detail::solve_batch(Y, model, opt);
  return sol.Z.middleRows(detail::bottleneck_offset(model), detail::bottleneck_dim(model));
}

using Backbone = std::variant<std::monostate, PedLayer, DeepPedSpec>;

struct DownstreamData {
  Matrix Y;      // d x M
  Matrix Z_true; // 2 x M
  /// Trained PED model for the ped-* backbones.
  Backbone model;
  /// k x M embedding for the external backbone.
  std::optional<Matrix> external;
  /// PCA components; defaults to the bottleneck width of the model, else 2.
  std::optional<Eigen::Index> pca_dim;
};

inline DownstreamReport downstream_run(BackboneKind kind, const DownstreamData& data,
                                       const std::vector<std::uint64_t>& seeds, const DownstreamConfig& cfg) {
  const Vector target = sum_target(data.Z_true);
  if (data.Y.cols() != data.Z_true.cols()) throw ValidationError("Y and Z_true have different sample counts");
  const std::string name = backbone_name(kind);
  auto need_model = [&] {
    if (std::holds_alternative<std::monostate>(data.model))
      throw ValidationError("backbone " + name + " needs a trained model");
  };
  switch (kind) {
  case BackboneKind::frozen_pca: {
    Eigen::Index l = 2;
    if (data.pca_dim) l = *data.pca_dim;
    else if (auto* p = std::get_if<PedLayer>(&data.model)) l = p->l();
    else if (auto* s = std::get_if<DeepPedSpec>(&data.model)) l = s->dim(s->depth());
    return run_frozen(name, pca_fit(data.Y, l).transform(data.Y), target, seeds, cfg);
  }
  case BackboneKind::ped_frozen:
    need_model();
    return std::visit(
        [&](const auto& m) -> DownstreamReport {
          if constexpr (std::is_same_v<std::decay_t<decltype(m)>, std::monostate>) return {};
          else return run_frozen(name, backbone_features(data.Y, m, cfg.solver, cfg.workers), target, seeds, cfg);
        },
        data.model);
  case BackboneKind::ped_finetune:
    need_model();
    return std::visit(
        [&](const auto& m) -> DownstreamReport {
          if constexpr (std::is_same_v<std::decay_t<decltype(m)>, std::monostate>) return {};
          else return run_finetune(name, data.Y, m, target, seeds, cfg);
        },
        data.model);
  case BackboneKind::oracle: return run_frozen(name, data.Z_true, target, seeds, cfg);
  case BackboneKind::constant_zero:
    return run_frozen(name, Matrix::Zero(1, data.Y.cols()), target, seeds, cfg);
  case BackboneKind::external:
    if (!data.external) throw ValidationError("external backbone needs an embedding");
    return run_frozen(name, *data.external, target, seeds, cfg);
  }
  throw ValidationError("unknown backbone");
}

/// Per seed the backbone with strictly lowest test MSE gets the win; exact ties
/// go to the earlier report. Non-finite errors never win.
inline void tally_wins(std::vector<DownstreamReport>& reports) {
  for (auto& r : reports) r.wins = 0;
  if (reports.empty()) return;
  const std::size_t S = reports.front().seeds.size();
  for (const auto& r : reports)
    if (r.seeds.size() != S) throw ValidationError("reports cover different numbers of seeds");
  for (std::size_t i = 0; i < S; ++i) {
    std::optional<std::size_t> best;
    for (std::size_t b = 0; b < reports.size(); ++b) {
      if (reports[b].seeds[i].seed != reports.front().seeds[i].seed)
        throw ValidationError("reports use different seeds");
      const double e = reports[b].seeds[i].test_mse;
      if (!std::isfinite(e)) continue;
      if (!best || e < reports[*best].seeds[i].test_mse) best = b;
    }
    if (best) ++reports[*best].wins;
  }
}

// ---------------------------------------------------------------------------
// Latent alignment

struct Alignment {
  Matrix A;  // 2 x l
  Vector c;  // 2; Z_true ~ A Z_learned + c
  Vector r2; // per true coordinate
  bool rank_deficient = false;
};

/// Least-squares affine map from learned to true latents and its R^2.
inline Alignment align_latents(const Matrix& Z_learned, const Matrix& Z_true) {
  const auto M = Z_learned.cols(), l = Z_learned.rows();
  if (Z_true.cols() != M) throw ValidationError("align: sample counts differ");
  if (M < 3) throw ValidationError("align: need at least 3 samples");
  num::require_finite(Z_learned, "learned latents");
  Matrix X(M, l + 1);
  X.leftCols(l) = Z_learned.transpose();
  X.col(l).setOnes();
  Alignment out;
  out.r2 = Vector::Zero(Z_true.rows());
  out.A = Matrix::Zero(Z_true.rows(), l);
  out.c = Vector::Zero(Z_true.rows());
  Eigen::ColPivHouseholderQR<Matrix> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < l + 1) {
    out.rank_deficient = true;
    return out;
  }
  const Matrix beta = qr.solve(Matrix(Z_true.transpose())); // (l+1) x k
  out.A = beta.topRows(l).transpose();
  out.c = beta.row(l).transpose();
  const Matrix resid = X * beta - Z_true.transpose();
  for (Eigen::Index k = 0; k < Z_true.rows(); ++k) {
    const double tot = (Z_true.row(k).array() - Z_true.row(k).mean()).square().sum();
    out.r2(k) = tot > 0.0 ? 1.0 - resid.col(k).squaredNorm() / tot : 0.0;
  }
  return out;
}

/// R Z with W = Q R a thin QR decomposition (diag(R) >= 0), i.e. the latents
/// expressed in an orthonormal basis of the column space of W.
inline Matrix qr_view(const Matrix& W, const Matrix& Z) {
  if (W.cols() != Z.rows()) throw ValidationError("qr_view: W and Z do not conform");
  if (W.rows() < W.cols()) throw ValidationError("qr_view: W must have at least as many rows as columns");
  Eigen::HouseholderQR<Matrix> qr(W);
  Matrix R = qr.matrixQR().topRows(W.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < R.rows(); ++i)
    if (R(i, i) < 0.0) R.row(i) *= -1.0;
  return R * Z;
}

} // namespace ped

#endif // PED_EVALHARNESS_HPP
