// ped: command-line driver for data generation, training, embedding,
// diagnostics and downstream evaluation.
//
// Exit codes: 0 success, 2 config/validation error, 3 solver abort, 4 IO error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "ped/ped.hpp"

namespace fs = std::filesystem;
using namespace ped;
using io::Json;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::string config;
  std::string out;
};

std::string fmt(double x) { return num::format_double(x); }

Json load_config_json(const std::string& path) {
  if (path.empty()) return Json::object();
  return io::read_json(path);
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw ValidationError("--out is required for this command");
  io::ensure_dir(g.out);
  return g.out;
}

// ---------------------------------------------------------------------------
// Models on disk

using Model = std::variant<PedLayer, DeepPedSpec>;

Json model_to_json(const Model& m) {
  if (auto* l = std::get_if<PedLayer>(&m)) return Json{{"kind", "shallow"}, {"layer", io::layer_to_json(*l)}};
  return Json{{"kind", "deep"}, {"spec", io::spec_to_json(std::get<DeepPedSpec>(m))}};
}

Model model_from_json(const Json& j, const std::string& path) {
  io::require_object(j, path);
  const auto kind = io::get_string(j, path, "kind");
  if (kind == "shallow") {
    io::allow_keys(j, path, {"kind", "layer"});
    return io::layer_from_json(io::field(j, path, "layer"), path + ".layer");
  }
  if (kind == "deep") {
    io::allow_keys(j, path, {"kind", "spec"});
    return io::spec_from_json(io::field(j, path, "spec"), path + ".spec");
  }
  throw ValidationError(path + ".kind: expected 'shallow' or 'deep'");
}

Model load_model(const fs::path& dir) {
  const fs::path p = dir / "model.json";
  return model_from_json(io::read_json(p), p.string());
}

ParamBundle params_of_model(const Model& m) {
  return std::visit([](const auto& x) { return params_of(x); }, m);
}

Eigen::Index model_data_dim(const Model& m) {
  return std::visit([](const auto& x) { return ped::detail::data_dim(x); }, m);
}

Matrix load_data(const fs::path& dir, const Model* m = nullptr) {
  Matrix Y = num::read_matrix_csv((dir / "Y.csv").string());
  if (m && Y.rows() != model_data_dim(*m))
    throw ValidationError("data has " + std::to_string(Y.rows()) + " rows, checkpoint expects " +
                          std::to_string(model_data_dim(*m)));
  return Y;
}

std::optional<Json> load_meta(const fs::path& dir) {
  const fs::path p = dir / "meta.json";
  if (!fs::exists(p)) return std::nullopt;
  return io::read_json(p);
}

// ---------------------------------------------------------------------------
// gen-data

void write_dataset(const fs::path& dir, const cfg::DatasetBlock& b, std::uint64_t seed) {
  io::ensure_dir(dir);
  ShapeLatents lat = make_shape_latents(b.resolution);
  const Eigen::Index total = lat.Z.cols();
  if (b.subsample) lat = subsample_latents(lat, *b.subsample, num::Rng(seed).split(7).seed());
  Json meta;
  meta["kind"] = b.deep() ? "deep" : "shallow";
  meta["family"] = make_family(b.family).name();
  meta["seed"] = seed;
  meta["resolution"] = b.resolution;
  meta["grid_points"] = total;
  meta["M"] = lat.Z.cols();
  num::write_matrix_csv((dir / "Z_true.csv").string(), lat.Z);
  if (!b.deep()) {
    const auto map = make_canonical(b.map);
    const Dataset ds = sample_dataset(lat, b.d, make_family(b.family), map, seed, b.w_variance);
    meta["map"] = map.name();
    meta["dims"] = {b.d, lat.Z.rows()};
    meta["w_variance"] = b.w_variance;
    meta["clamp_count"] = ds.clamp_count;
    num::write_matrix_csv((dir / "W_true.csv").string(), ds.W_true);
    num::write_matrix_csv((dir / "Y.csv").string(), ds.Y);
  } else {
    std::vector<Eigen::Index> dims(b.dims.begin(), b.dims.end());
    std::vector<CanonicalMap> maps;
    Json names = Json::array();
    for (const auto& s : b.maps) {
      maps.push_back(make_canonical(s));
      names.push_back(maps.back().name());
    }
    const DeepDataset ds = sample_deep_dataset(lat, dims, maps, seed, make_family(b.family));
    Json all = b.dims;
    all.push_back(lat.Z.rows());
    meta["maps"] = names;
    meta["dims"] = all;
    meta["clamp_count"] = ds.clamp_count;
    for (std::size_t l = 0; l < ds.W.size(); ++l) {
      const std::string name = l == 0 ? "W_true.csv" : "W_true_" + std::to_string(l + 1) + ".csv";
      num::write_matrix_csv((dir / name).string(), ds.W[l]);
    }
    num::write_matrix_csv((dir / "Y.csv").string(), ds.Y);
  }
  io::write_json(dir / "meta.json", meta);
}

int cmd_gen_data(const Globals& g, int sweep) {
  const auto c = cfg::parse_config(load_config_json(g.config));
  const fs::path out = require_out(g);
  const std::uint64_t base = g.seed.value_or(c.dataset.seed);
  if (sweep <= 0) {
    write_dataset(out, c.dataset, base);
    std::cout << "wrote dataset to " << out.string() << " (seed " << base << ")\n";
    return 0;
  }
  const num::Rng root(base);
  parallel_for(static_cast<std::size_t>(sweep), g.workers, [&](std::size_t k) {
    write_dataset(out / ("seed" + std::to_string(k)), c.dataset, root.split(k).seed());
  });
  std::cout << "wrote " << sweep << " datasets to " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

const char* kLossHeader = "epoch,batch,objective,solver_iters_mean,nonconverged_count,boundary_dropped,frozen_layers";

std::string loss_row(const LossRecord& r) {
  std::string frozen;
  for (std::size_t k = 0; k < r.frozen.size(); ++k) frozen += (k ? ";" : "") + std::to_string(r.frozen[k]);
  std::ostringstream os;
  os << r.epoch << ',' << r.batch << ',' << fmt(r.objective) << ',' << fmt(r.solver_iters_mean) << ','
     << r.nonconverged_count << ',' << r.boundary_dropped << ',' << frozen;
  return os.str();
}

std::vector<std::string> read_loss_rows(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  std::string line;
  std::vector<std::string> rows;
  if (!std::getline(in, line) || line != kLossHeader) throw ValidationError(p.string() + ": unexpected header");
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(line);
  return rows;
}

Model init_model(const cfg::ModelBlock& m, Eigen::Index d, const std::optional<Json>& meta, std::uint64_t seed) {
  auto from_meta = [&](const char* key, const char* fallback) {
    if (meta && meta->contains(key) && (*meta)[key].is_string()) return (*meta)[key].get<std::string>();
    return std::string(fallback);
  };
  if (!m.deep()) {
    const auto family = make_family(m.family.value_or(from_meta("family", "gaussian")));
    const auto map = make_canonical(m.map.value_or(from_meta("map", "identity")));
    return init_layer(d, m.l, family, map, m.lambda, seed, m.init_scale);
  }
  std::vector<Eigen::Index> dims{d};
  for (long w : m.dims) dims.push_back(w);
  std::vector<CanonicalMap> maps;
  for (const auto& s : m.maps) maps.push_back(make_canonical(s));
  return init_deep_spec(dims, maps, m.lambda, m.data_precision, seed, m.init_scale);
}

int cmd_train(const Globals& g, const std::string& data_dir, const std::string& resume_dir) {
  Json raw;
  if (!g.config.empty()) raw = io::read_json(g.config);
  else if (!resume_dir.empty()) raw = io::read_json(fs::path(resume_dir) / "config.json");
  else raw = Json::object();
  auto c = cfg::parse_config(raw);
  if (g.seed) c.train.seed = *g.seed;
  c.train.workers = g.workers;
  const fs::path out = require_out(g);

  const auto meta = load_meta(data_dir);
  const Matrix Y = load_data(data_dir);
  Model model;
  std::optional<TrainState> state;
  std::vector<std::string> history;
  if (!resume_dir.empty()) {
    const fs::path r(resume_dir);
    model = load_model(r);
    if (std::holds_alternative<DeepPedSpec>(model) != c.model.deep())
      throw ValidationError("checkpoint kind does not match model.kind in the config");
    if (Y.rows() != model_data_dim(model)) throw ValidationError("data and checkpoint dimensions differ");
    const fs::path op = r / "optimizer.json";
    state = io::optimizer_from_json(io::read_json(op), params_of_model(model), op.string());
    if (fs::exists(r / "warm.csv")) state->warm = num::read_matrix_csv((r / "warm.csv").string());
    history = read_loss_rows(r / "losses.csv");
  } else {
    model = init_model(c.model, Y.rows(), meta, c.train.seed);
  }

  TrainState final_state;
  std::vector<LossRecord> recs;
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        TrainResult<M> res;
        if constexpr (std::is_same_v<M, PedLayer>) res = train_shallow(Y, m, c.train, state);
        else res = train_deep(Y, m, c.train, state);
        model = res.model;
        final_state = std::move(res.state);
        recs = std::move(res.history);
      },
      model);

  std::string losses = std::string(kLossHeader) + "\n";
  for (const auto& row : history) losses += row + "\n";
  for (const auto& r : recs) losses += loss_row(r) + "\n";
  raw["train"] = cfg::train_to_json(c.train);
  raw["train"].erase("seed");
  raw["train"]["seed"] = c.train.seed;
  io::write_json(out / "config.json", raw);
  io::write_json(out / "model.json", model_to_json(model));
  io::write_json(out / "optimizer.json", io::optimizer_to_json(final_state));
  num::write_matrix_csv((out / "warm.csv").string(), final_state.warm);
  io::write_text(out / "losses.csv", losses);

  const auto means = epoch_means(recs);
  std::size_t nonconv = 0, dropped = 0;
  for (const auto& r : recs) {
    nonconv += r.nonconverged_count;
    dropped += r.boundary_dropped;
  }
  std::cout << "trained epochs " << (final_state.next_epoch - static_cast<int>(means.size())) << ".."
            << final_state.next_epoch - 1 << "\n";
  if (!means.empty()) std::cout << "final epoch mean objective " << fmt(means.back()) << "\n";
  std::cout << "nonconverged samples " << nonconv << ", boundary samples dropped " << dropped << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// embed

struct Embedding {
  Matrix Z;     // bottleneck latents
  Matrix W;     // bottleneck weights (rows x bottleneck dim)
  std::size_t failed = 0, boundary = 0;
};

Embedding embed_model(const Model& model, const Matrix& Y, int workers, const SolverConfig& solver = {}) {
  InferOptions opt;
  opt.solver = solver;
  opt.throw_on_failure = false;
  opt.workers = workers;
  Embedding e;
  if (auto* l = std::get_if<PedLayer>(&model)) {
    const auto r = infer(Y, *l, opt);
    e.Z = r.Z;
    e.W = l->W;
    e.failed = r.failed_columns().size();
    e.boundary = r.boundary_count();
  } else {
    const auto& s = std::get<DeepPedSpec>(model);
    const auto r = infer_deep(Y, s, opt);
    e.Z = r.bottleneck;
    e.W = s.layers.back().W;
    e.failed = r.failed_columns().size();
    e.boundary = r.boundary_count();
  }
  return e;
}

int cmd_embed(const Globals& g, const std::string& ckpt, const std::string& data_dir) {
  const Model model = load_model(ckpt);
  const Matrix Y = load_data(data_dir, &model);
  const fs::path out = require_out(g);
  const Embedding e = embed_model(model, Y, g.workers);
  num::write_matrix_csv((out / "embedding.csv").string(), e.Z);
  if (e.W.rows() >= e.W.cols()) num::write_matrix_csv((out / "embedding_qr.csv").string(), qr_view(e.W, e.Z));
  std::cout << "embedded " << e.Z.cols() << " samples into " << e.Z.rows() << " dims\n";
  std::cout << "nonconverged " << e.failed << ", boundary " << e.boundary << "\n";
  const fs::path zt = fs::path(data_dir) / "Z_true.csv";
  if (fs::exists(zt)) {
    const Matrix Zt = num::read_matrix_csv(zt.string());
    if (Zt.cols() == e.Z.cols() && e.Z.cols() >= 3) {
      const auto a = align_latents(e.Z, Zt);
      std::cout << "alignment R2";
      for (Eigen::Index k = 0; k < a.r2.size(); ++k) std::cout << ' ' << fmt(a.r2(k));
      if (a.rank_deficient) std::cout << " (rank deficient)";
      std::cout << "\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// diagnose

std::string pattern_str(const std::vector<int>& p) {
  std::string s;
  for (std::size_t i = 0; i < p.size(); ++i) s += (i ? " " : "") + std::to_string(p[i]);
  return s;
}

std::string vec_str(const Vector& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(v(i));
  return s;
}

void print_assumption(std::ostream& os, const std::string& prefix, const AssumptionReport& a) {
  os << prefix << "kappa " << fmt(a.kappa) << "\n";
  os << prefix << "|W^T W|_2 " << fmt(a.gram_norm) << "\n";
  os << prefix << "kappa*|W^T W|_2 " << fmt(a.kappa * a.gram_norm) << "\n";
  os << prefix << "verdict " << a.verdict();
  if (a.which == AssumptionKind::assumption1 || a.which == AssumptionKind::assumption2)
    os << " (" << verdict_name(a.which) << ")";
  if (a.numerical) os << " [numerical supremum]";
  os << "\n";
  if (!a.note.empty()) os << prefix << "note " << a.note << "\n";
}

void print_solver_stats(std::ostream& os, const std::vector<FixedPointResult>& cols, std::size_t boundary) {
  std::size_t failed = 0;
  int max_it = 0;
  double mean_it = 0.0, max_res = 0.0;
  for (const auto& c : cols) {
    if (!c.converged) ++failed;
    max_it = std::max(max_it, c.iterations);
    mean_it += c.iterations;
    if (c.converged) max_res = std::max(max_res, c.residual);
  }
  if (!cols.empty()) mean_it /= static_cast<double>(cols.size());
  os << "samples " << cols.size() << ", converged " << cols.size() - failed << ", failed " << failed << "\n";
  os << "iterations mean " << fmt(mean_it) << ", max " << max_it << "\n";
  os << "max converged residual " << fmt(max_res) << "\n";
  os << "boundary-flagged " << boundary << "\n";
}

void print_eig_summary(std::ostream& os, std::vector<double> e, std::size_t skipped) {
  if (e.empty()) {
    os << "hessian min-eigenvalue: no eligible samples\n";
    return;
  }
  std::sort(e.begin(), e.end());
  const std::size_t n = e.size();
  const std::size_t neg = static_cast<std::size_t>(std::count_if(e.begin(), e.end(), [](double x) { return x <= 0.0; }));
  os << "hessian min-eigenvalue min " << fmt(e.front()) << ", median " << fmt(e[n / 2]) << ", max " << fmt(e.back())
     << " over " << n << " samples (" << neg << " non-positive, " << skipped << " skipped)\n";
}

int cmd_diagnose(const Globals& g, const std::string& ckpt, const std::string& data_dir, bool enumerate, int limit) {
  const Model model = load_model(ckpt);
  const Matrix Y = load_data(data_dir, &model);
  std::ostringstream os;
  InferOptions opt;
  opt.throw_on_failure = false;
  opt.workers = g.workers;

  if (auto* lp = std::get_if<PedLayer>(&model)) {
    const PedLayer& layer = *lp;
    os << "model shallow d=" << layer.d() << " l=" << layer.l() << " family=" << layer.family.name()
       << " canonical=" << layer.map.name() << " lambda=" << fmt(layer.lambda) << "\n";
    print_assumption(os, "", kappa(layer, Y));
    try {
      const auto r = infer(Y, layer, opt);
      print_solver_stats(os, r.columns, r.boundary_count());
      os << "poisson clamps " << r.clamp_count << "\n";
      std::vector<double> eig;
      std::size_t skipped = 0;
      for (Eigen::Index s = 0; s < Y.cols(); ++s) {
        const auto k = static_cast<std::size_t>(s);
        if (!r.columns[k].converged || r.boundary[k]) {
          ++skipped;
          continue;
        }
        try {
          eig.push_back(num::min_eig_symmetric(hessian_latent(r.Z.col(s), Y.col(s), layer)));
        } catch (const Error&) {
          ++skipped;
        }
      }
      print_eig_summary(os, eig, skipped);
    } catch (const Error& e) {
      os << "inference failed: " << e.what() << "\n";
    }
    if (enumerate) {
      if (layer.map.kind() != CanonicalKind::relu || layer.map.negated() || layer.d() > 16) {
        os << "enumeration skipped: needs a relu layer with d <= 16\n";
      } else {
        for (Eigen::Index s = 0; s < std::min<Eigen::Index>(limit, Y.cols()); ++s) {
          os << "catalog sample " << s << "\n";
          try {
            const auto cat = enumerate_relu_fixed_points(Y.col(s), layer);
            for (const auto& e : cat.entries)
              os << "  pattern " << pattern_str(e.pattern) << " | z* " << vec_str(e.z_star)
                 << " | consistent " << e.pattern_consistent << " | hessian_pd " << e.hessian_pd << " | boundary "
                 << e.boundary_flag << "\n";
            os << "  consistent patterns " << cat.consistent_count() << " of " << cat.entries.size() << "\n";
          } catch (const Error& e) {
            os << "  enumeration failed: " << e.what() << "\n";
          }
        }
      }
    }
  } else {
    const auto& spec = std::get<DeepPedSpec>(model);
    os << "model deep L=" << spec.depth() << " data_precision=" << fmt(spec.data_precision) << " dims "
       << spec.data_dim();
    for (std::size_t l = 1; l <= spec.depth(); ++l) os << ' ' << spec.dim(l);
    os << "\n";
    for (std::size_t l = 1; l <= spec.depth(); ++l) {
      const auto& layer = spec.layers[l - 1];
      os << "layer " << l << " canonical=" << layer.map.name() << " lambda=" << fmt(layer.lambda) << "\n";
      print_assumption(os, "  ", kappa(layer, l == 1 ? std::optional<Matrix>(Y) : std::nullopt));
    }
    try {
      const auto r = infer_deep(Y, spec, opt);
      print_solver_stats(os, r.columns, r.boundary_count());
      std::vector<double> eig;
      std::size_t skipped = 0;
      for (Eigen::Index s = 0; s < Y.cols(); ++s) {
        const auto k = static_cast<std::size_t>(s);
        if (!r.columns[k].converged || r.boundary[k]) {
          ++skipped;
          continue;
        }
        try {
          const Matrix H = hessian_blocks(r.zeta.col(s), Y.col(s), spec).dense();
          eig.push_back(num::min_eig_symmetric(0.5 * (H + H.transpose())));
        } catch (const Error&) {
          ++skipped;
        }
      }
      print_eig_summary(os, eig, skipped);
    } catch (const Error& e) {
      os << "inference failed: " << e.what() << "\n";
    }
    if (enumerate) {
      bool relu = true;
      Eigen::Index units = 0;
      for (const auto& layer : spec.layers) {
        relu = relu && layer.map.kind() == CanonicalKind::relu && !layer.map.negated();
        units += layer.d();
      }
      if (!relu || units > 16) {
        os << "enumeration skipped: needs relu layers with at most 16 units in total\n";
      } else {
        for (Eigen::Index s = 0; s < std::min<Eigen::Index>(limit, Y.cols()); ++s) {
          os << "catalog sample " << s << "\n";
          try {
            std::size_t consistent = 0;
            const auto cat = enumerate_deep_relu_fixed_points(Y.col(s), spec);
            for (const auto& e : cat) {
              os << "  pattern " << pattern_str(e.pattern) << " | zeta " << (e.solvable ? vec_str(e.zeta) : "-")
                 << " | consistent " << e.pattern_consistent << "\n";
              consistent += e.pattern_consistent;
            }
            os << "  consistent patterns " << consistent << " of " << cat.size() << "\n";
          } catch (const Error& e) {
            os << "  enumeration failed: " << e.what() << "\n";
          }
        }
      }
    }
  }
  std::cout << os.str();
  if (!g.out.empty()) io::write_text(require_out(g) / "diagnose.txt", os.str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval-downstream

int cmd_eval(const Globals& g, const std::string& data_dir, const std::string& ckpt,
             const std::vector<std::string>& embeddings) {
  auto c = cfg::parse_config(load_config_json(g.config));
  auto& e = c.eval;
  if (g.seed)
    for (auto& s : e.seeds) s += *g.seed;
  e.downstream.workers = g.workers;
  for (const auto& spec : embeddings) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("--embedding expects name=path, got '" + spec + "'");
    e.external.push_back({spec.substr(0, eq), spec.substr(eq + 1)});
  }
  if (e.backbones.empty() && e.external.empty()) throw ValidationError("nothing to evaluate");
  const fs::path out = require_out(g);

  DownstreamData data;
  data.Y = load_data(data_dir);
  data.Z_true = num::read_matrix_csv((fs::path(data_dir) / "Z_true.csv").string());
  if (data.Z_true.cols() != data.Y.cols()) throw ValidationError("Y.csv and Z_true.csv have different sample counts");
  if (e.pca_dim) data.pca_dim = *e.pca_dim;
  if (!ckpt.empty()) {
    const Model m = load_model(ckpt);
    if (model_data_dim(m) != data.Y.rows()) throw ValidationError("data and checkpoint dimensions differ");
    std::visit([&](const auto& x) { data.model = x; }, m);
  }

  std::vector<DownstreamReport> reports;
  for (const auto& name : e.backbones) reports.push_back(downstream_run(parse_backbone(name), data, e.seeds, e.downstream));
  for (const auto& x : e.external) {
    DownstreamData d = data;
    d.external = num::read_matrix_csv(x.path);
    if (d.external->cols() != data.Y.cols())
      throw ValidationError("embedding " + x.name + " has " + std::to_string(d.external->cols()) + " samples, data has " +
                            std::to_string(data.Y.cols()));
    auto r = downstream_run(BackboneKind::external, d, e.seeds, e.downstream);
    r.backbone = "external:" + x.name;
    reports.push_back(std::move(r));
  }
  tally_wins(reports);

  Json arr = Json::array();
  for (const auto& r : reports) arr.push_back(io::report_to_json(r));
  io::write_json(out / "report.json", arr);
  for (const auto& r : reports) {
    std::vector<double> t;
    for (const auto& s : r.seeds) t.push_back(s.test_mse);
    std::sort(t.begin(), t.end());
    std::cout << r.backbone << ": median test mse " << fmt(t[t.size() / 2]) << ", wins " << r.wins << " of "
              << r.seeds.size() << "\n";
  }
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"PED: MAP latent estimation through a deep-equilibrium fixed point"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Override the seed of the active config block");
  app.add_option("--workers", g.workers, "Worker threads (default: available cores)")->check(CLI::PositiveNumber);
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--out", g.out, "Output directory");

  int sweep = 0;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset (or a seeded sweep)");
  gen->add_option("--sweep", sweep, "Write N datasets into seed0..seed<N-1>")->check(CLI::NonNegativeNumber);

  std::string data_dir, resume, ckpt;
  auto* train = app.add_subcommand("train", "Train a PED model on a dataset");
  train->add_option("--data", data_dir, "Dataset directory")->required();
  train->add_option("--resume", resume, "Checkpoint directory to continue from");

  auto* embed = app.add_subcommand("embed", "Write bottleneck latents for a dataset");
  embed->add_option("--checkpoint", ckpt, "Checkpoint directory")->required();
  embed->add_option("--data", data_dir, "Dataset directory")->required();

  bool enumerate = false;
  int limit = 3;
  auto* diag = app.add_subcommand("diagnose", "Well-posedness and solver diagnostics");
  diag->add_option("--checkpoint", ckpt, "Checkpoint directory")->required();
  diag->add_option("--data", data_dir, "Dataset directory")->required();
  diag->add_flag("--enumerate", enumerate, "Print the relu fixed-point catalog (small models)");
  diag->add_option("--limit", limit, "Samples to enumerate")->check(CLI::PositiveNumber);

  std::vector<std::string> embeddings;
  auto* ev = app.add_subcommand("eval-downstream", "Downstream regression of z1 + z2 on top of each backbone");
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--checkpoint", ckpt, "Checkpoint for the ped-* backbones");
  ev->add_option("--embedding", embeddings, "Extra frozen backbone as name=path.csv (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (gen->parsed()) return cmd_gen_data(g, sweep);
  if (train->parsed()) return cmd_train(g, data_dir, resume);
  if (embed->parsed()) return cmd_embed(g, ckpt, data_dir);
  if (diag->parsed()) return cmd_diagnose(g, ckpt, data_dir, enumerate, limit);
  if (ev->parsed()) return cmd_eval(g, data_dir, ckpt, embeddings);
  return 2;
}

} // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const BatchNonConvergenceError& e) {
    std::cerr << "solver abort: " << e.what() << "\n";
    return 3;
  } catch (const NonConvergenceError& e) {
    std::cerr << "solver abort: " << e.what() << "\n";
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "solver abort: " << e.what() << "\n";
    return 3;
  } catch (const IllPosedError& e) {
    std::cerr << "solver abort: " << e.what() << "\n";
    return 3;
  } catch (const KinkError& e) {
    std::cerr << "solver abort: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
