#ifndef PED_RUNCONFIG_HPP
#define PED_RUNCONFIG_HPP

// Command configuration: one JSON object with optional blocks
//   dataset, model, train, eval
// Every block is validated before any work starts; unknown keys are errors.

#include <optional>
#include <string>
#include <vector>

#include "ped/serialize.hpp"

namespace ped::cfg {

using io::Json;

struct DatasetBlock {
  std::string family = "gaussian";
  std::string map = "identity";
  /// Shallow observation dimension.
  long d = 50;
  /// Deep: (d^(0), ..., d^(L-1)) and one map per layer; the shape latents are layer L.
  std::vector<long> dims;
  std::vector<std::string> maps;
  int resolution = 317;
  std::optional<long> subsample;
  std::uint64_t seed = 0;
  double w_variance = 0.5;

  bool deep() const { return !dims.empty(); }
};

struct ModelBlock {
  std::string kind = "shallow";
  long l = 2;
  /// Default to the dataset's family and map.
  std::optional<std::string> family, map;
  /// Deep latent widths (d^(1), ..., d^(L)) and their maps.
  std::vector<long> dims;
  std::vector<std::string> maps;
  std::optional<double> lambda;
  double data_precision = 1.0;
  double init_scale = 0.1;

  bool deep() const { return kind == "deep"; }
};

struct EvalExternal {
  std::string name, path;
};

struct EvalBlock {
  std::vector<std::string> backbones{"ped-finetune", "frozen-pca"};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  DownstreamConfig downstream;
  std::optional<long> pca_dim;
  std::vector<EvalExternal> external;
};

struct RunConfig {
  DatasetBlock dataset;
  ModelBlock model;
  TrainConfig train;
  EvalBlock eval;
};

namespace detail {

inline SolverConfig solver_from(const Json& j, const std::string& path) {
  io::allow_keys(j, path, {"tol", "max_iter", "anderson_memory", "damping"});
  SolverConfig s;
  if (j.contains("tol")) s.tol = io::get_number(j, path, "tol");
  if (j.contains("max_iter")) s.max_iter = static_cast<int>(io::get_integer(j, path, "max_iter"));
  if (j.contains("anderson_memory")) s.anderson_memory = static_cast<int>(io::get_integer(j, path, "anderson_memory"));
  if (j.contains("damping")) s.damping = io::get_number(j, path, "damping");
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return s;
}

inline Json solver_to(const SolverConfig& s) {
  return Json{{"tol", s.tol}, {"max_iter", s.max_iter}, {"anderson_memory", s.anderson_memory}, {"damping", s.damping}};
}

inline std::vector<long> int_list(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ValidationError(path + ": expected an array of integers");
  std::vector<long> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(io::as_integer(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline std::vector<std::string> string_list(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ValidationError(path + ": expected an array of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(io::as_string(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

// name checks surface as field errors
template <class F> void check(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  } catch (const DomainError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline DatasetBlock dataset_from(const Json& j) {
  const std::string p = "dataset";
  io::allow_keys(j, p, {"family", "map", "d", "dims", "maps", "resolution", "subsample", "seed", "w_variance"});
  DatasetBlock b;
  if (j.contains("family")) b.family = io::get_string(j, p, "family");
  if (j.contains("map")) b.map = io::get_string(j, p, "map");
  if (j.contains("d")) b.d = io::get_integer(j, p, "d");
  if (j.contains("dims")) b.dims = int_list(j["dims"], p + ".dims");
  if (j.contains("maps")) b.maps = string_list(j["maps"], p + ".maps");
  if (j.contains("resolution")) b.resolution = static_cast<int>(io::get_integer(j, p, "resolution"));
  if (j.contains("subsample")) b.subsample = io::get_integer(j, p, "subsample");
  if (j.contains("seed")) b.seed = io::as_seed(j["seed"], p + ".seed");
  if (j.contains("w_variance")) b.w_variance = io::get_number(j, p, "w_variance");
  check(p + ".family", [&] { make_family(b.family); });
  check(p + ".map", [&] { make_canonical(b.map); });
  if (b.d < 1) throw ValidationError(p + ".d: must be >= 1");
  if (b.resolution < 2) throw ValidationError(p + ".resolution: must be >= 2");
  if (b.subsample && *b.subsample < 1) throw ValidationError(p + ".subsample: must be >= 1");
  if (!(b.w_variance > 0.0)) throw ValidationError(p + ".w_variance: must be positive");
  if (b.deep()) {
    if (b.maps.empty()) b.maps.assign(b.dims.size(), b.map);
    if (b.maps.size() != b.dims.size()) throw ValidationError(p + ".maps: need one map per entry of dims");
    for (std::size_t i = 0; i < b.dims.size(); ++i) {
      if (b.dims[i] < 1) throw ValidationError(p + ".dims[" + std::to_string(i) + "]: must be >= 1");
      check(p + ".maps[" + std::to_string(i) + "]", [&] { make_canonical(b.maps[i]); });
    }
  } else if (!b.maps.empty()) {
    throw ValidationError(p + ".maps: only valid together with dims");
  }
  return b;
}

inline ModelBlock model_from(const Json& j) {
  const std::string p = "model";
  io::allow_keys(j, p, {"kind", "l", "family", "map", "dims", "maps", "lambda", "data_precision", "init_scale"});
  ModelBlock b;
  if (j.contains("kind")) b.kind = io::get_string(j, p, "kind");
  if (b.kind != "shallow" && b.kind != "deep") throw ValidationError(p + ".kind: expected 'shallow' or 'deep'");
  if (j.contains("l")) b.l = io::get_integer(j, p, "l");
  if (j.contains("family")) b.family = io::get_string(j, p, "family");
  if (j.contains("map")) b.map = io::get_string(j, p, "map");
  if (j.contains("dims")) b.dims = int_list(j["dims"], p + ".dims");
  if (j.contains("maps")) b.maps = string_list(j["maps"], p + ".maps");
  if (j.contains("lambda")) b.lambda = io::get_number(j, p, "lambda");
  if (j.contains("data_precision")) b.data_precision = io::get_number(j, p, "data_precision");
  if (j.contains("init_scale")) b.init_scale = io::get_number(j, p, "init_scale");
  if (b.family) check(p + ".family", [&] { make_family(*b.family); });
  if (b.map) check(p + ".map", [&] { make_canonical(*b.map); });
  if (b.l < 1) throw ValidationError(p + ".l: must be >= 1");
  if (b.lambda && !(*b.lambda > 0.0)) throw ValidationError(p + ".lambda: must be positive");
  if (!(b.data_precision > 0.0)) throw ValidationError(p + ".data_precision: must be positive");
  if (!(b.init_scale >= 0.0)) throw ValidationError(p + ".init_scale: must be non-negative");
  if (b.deep()) {
    if (b.dims.empty()) throw ValidationError(p + ".dims: a deep model needs its latent widths");
    if (b.family && *b.family != "gaussian") throw ValidationError(p + ".family: deep models are gaussian");
    if (b.maps.empty()) b.maps.assign(b.dims.size(), b.map.value_or("identity"));
    if (b.maps.size() != b.dims.size()) throw ValidationError(p + ".maps: need one map per entry of dims");
    for (std::size_t i = 0; i < b.dims.size(); ++i) {
      if (b.dims[i] < 1) throw ValidationError(p + ".dims[" + std::to_string(i) + "]: must be >= 1");
      check(p + ".maps[" + std::to_string(i) + "]", [&] { make_canonical(b.maps[i]); });
    }
  } else if (!b.dims.empty() || !b.maps.empty()) {
    throw ValidationError(p + ": dims/maps are for deep models");
  }
  return b;
}

inline TrainConfig train_from(const Json& j) {
  const std::string p = "train";
  io::allow_keys(j, p,
                 {"batch_size", "epochs", "learning_rate", "beta1", "beta2", "eps", "weight_decay",
                  "freeze_epochs_per_layer", "freeze_from", "seed", "solver", "max_nonconverged_fraction",
                  "warm_start"});
  TrainConfig t;
  if (j.contains("batch_size")) t.batch_size = static_cast<int>(io::get_integer(j, p, "batch_size"));
  if (j.contains("epochs")) t.epochs = static_cast<int>(io::get_integer(j, p, "epochs"));
  if (j.contains("learning_rate")) t.adam.learning_rate = io::get_number(j, p, "learning_rate");
  if (j.contains("beta1")) t.adam.beta1 = io::get_number(j, p, "beta1");
  if (j.contains("beta2")) t.adam.beta2 = io::get_number(j, p, "beta2");
  if (j.contains("eps")) t.adam.eps = io::get_number(j, p, "eps");
  if (j.contains("weight_decay")) {
    const Json& w = j["weight_decay"];
    std::vector<double> wd;
    if (w.is_number()) wd.push_back(w.get<double>());
    else if (w.is_array())
      for (std::size_t i = 0; i < w.size(); ++i) wd.push_back(io::as_number(w[i], p + ".weight_decay[" + std::to_string(i) + "]"));
    else throw ValidationError(p + ".weight_decay: expected a number or an array of numbers");
    t.weight_decay = wd;
  }
  if (j.contains("freeze_epochs_per_layer"))
    t.freeze_epochs_per_layer = static_cast<int>(io::get_integer(j, p, "freeze_epochs_per_layer"));
  if (j.contains("freeze_from")) {
    const auto f = io::get_string(j, p, "freeze_from");
    if (f == "data") t.freeze_from = FreezeFrom::data;
    else if (f == "latent") t.freeze_from = FreezeFrom::latent;
    else throw ValidationError(p + ".freeze_from: expected 'data' or 'latent'");
  }
  if (j.contains("seed")) t.seed = io::as_seed(j["seed"], p + ".seed");
  if (j.contains("solver")) t.solver = solver_from(j["solver"], p + ".solver");
  if (j.contains("max_nonconverged_fraction"))
    t.max_nonconverged_fraction = io::get_number(j, p, "max_nonconverged_fraction");
  if (j.contains("warm_start")) t.warm_start = io::as_bool(j["warm_start"], p + ".warm_start");
  check(p, [&] { t.validate(); });
  return t;
}

inline EvalBlock eval_from(const Json& j) {
  const std::string p = "eval";
  io::allow_keys(j, p,
                 {"backbones", "seeds", "epochs", "batch_size", "train_fraction", "hidden", "learning_rate",
                  "pca_dim", "external", "solver", "max_nonconverged_fraction"});
  EvalBlock e;
  if (j.contains("backbones")) e.backbones = string_list(j["backbones"], p + ".backbones");
  if (j.contains("seeds")) {
    const Json& s = j["seeds"];
    e.seeds.clear();
    if (s.is_number_integer()) {
      const long n = s.get<long>();
      if (n < 1) throw ValidationError(p + ".seeds: need at least one seed");
      for (long i = 0; i < n; ++i) e.seeds.push_back(static_cast<std::uint64_t>(i));
    } else if (s.is_array()) {
      for (std::size_t i = 0; i < s.size(); ++i) e.seeds.push_back(io::as_seed(s[i], p + ".seeds[" + std::to_string(i) + "]"));
    } else {
      throw ValidationError(p + ".seeds: expected a count or an array of seeds");
    }
  }
  auto& d = e.downstream;
  if (j.contains("epochs")) d.epochs = static_cast<int>(io::get_integer(j, p, "epochs"));
  if (j.contains("batch_size")) d.batch_size = static_cast<int>(io::get_integer(j, p, "batch_size"));
  if (j.contains("train_fraction")) d.train_fraction = io::get_number(j, p, "train_fraction");
  if (j.contains("hidden")) d.hidden = io::get_integer(j, p, "hidden");
  if (j.contains("learning_rate")) d.adam.learning_rate = io::get_number(j, p, "learning_rate");
  if (j.contains("solver")) d.solver = solver_from(j["solver"], p + ".solver");
  if (j.contains("max_nonconverged_fraction")) d.max_nonconverged_fraction = io::get_number(j, p, "max_nonconverged_fraction");
  if (j.contains("pca_dim")) e.pca_dim = io::get_integer(j, p, "pca_dim");
  if (j.contains("external")) {
    const Json& x = j["external"];
    if (!x.is_array()) throw ValidationError(p + ".external: expected an array");
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::string q = p + ".external[" + std::to_string(i) + "]";
      io::allow_keys(x[i], q, {"name", "path"});
      e.external.push_back({io::get_string(x[i], q, "name"), io::get_string(x[i], q, "path")});
    }
  }
  if (e.backbones.empty() && e.external.empty()) throw ValidationError(p + ".backbones: nothing to evaluate");
  for (std::size_t i = 0; i < e.backbones.size(); ++i) {
    const std::string q = p + ".backbones[" + std::to_string(i) + "]";
    check(q, [&] { parse_backbone(e.backbones[i]); });
    if (e.backbones[i] == "external") throw ValidationError(q + ": list external embeddings under eval.external");
  }
  if (e.seeds.empty()) throw ValidationError(p + ".seeds: need at least one seed");
  if (e.pca_dim && *e.pca_dim < 1) throw ValidationError(p + ".pca_dim: must be >= 1");
  check(p, [&] { d.validate(); });
  return e;
}

} // namespace detail

/// Strict parse of a whole configuration; absent blocks take their defaults.
inline RunConfig parse_config(const Json& j) {
  io::allow_keys(j, "config", {"dataset", "model", "train", "eval"});
  RunConfig c;
  if (j.contains("dataset")) c.dataset = detail::dataset_from(j["dataset"]);
  if (j.contains("model")) c.model = detail::model_from(j["model"]);
  if (j.contains("train")) c.train = detail::train_from(j["train"]);
  if (j.contains("eval")) c.eval = detail::eval_from(j["eval"]);
  return c;
}

inline Json train_to_json(const TrainConfig& t) {
  Json j;
  j["batch_size"] = t.batch_size;
  if (t.epochs) j["epochs"] = *t.epochs;
  j["learning_rate"] = t.adam.learning_rate;
  j["beta1"] = t.adam.beta1;
  j["beta2"] = t.adam.beta2;
  j["eps"] = t.adam.eps;
  if (t.weight_decay) j["weight_decay"] = *t.weight_decay;
  j["freeze_epochs_per_layer"] = t.freeze_epochs_per_layer;
  j["freeze_from"] = t.freeze_from == FreezeFrom::data ? "data" : "latent";
  j["seed"] = t.seed;
  j["solver"] = detail::solver_to(t.solver);
  j["max_nonconverged_fraction"] = t.max_nonconverged_fraction;
  j["warm_start"] = t.warm_start;
  return j;
}

} // namespace ped::cfg

#endif // PED_RUNCONFIG_HPP
