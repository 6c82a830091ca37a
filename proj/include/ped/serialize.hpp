#ifndef PED_SERIALIZE_HPP
#define PED_SERIALIZE_HPP

// JSON forms of layers, deep specs, optimizer state and downstream reports,
// plus small file helpers. Readers are strict: unknown keys, missing keys and
// wrong types raise ValidationError naming the offending field.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ped/csv.hpp"
#include "ped/evalharness.hpp"

namespace ped::io {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Field access with paths in error messages

inline void require_object(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ValidationError(path + ": expected an object");
}

inline void allow_keys(const Json& j, const std::string& path, std::initializer_list<const char*> keys) {
  require_object(j, path);
  std::set<std::string> ok(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw ValidationError(path + ": unknown key '" + it.key() + "'");
}

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline const Json& field(const Json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) throw ValidationError(join(path, key) + ": missing");
  return j.at(key);
}

inline double as_number(const Json& v, const std::string& path) {
  if (!v.is_number()) throw ValidationError(path + ": expected a number");
  return v.get<double>();
}

inline long as_integer(const Json& v, const std::string& path) {
  if (!v.is_number_integer()) throw ValidationError(path + ": expected an integer");
  return v.get<long>();
}

inline std::uint64_t as_seed(const Json& v, const std::string& path) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long>() >= 0))
    throw ValidationError(path + ": expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline bool as_bool(const Json& v, const std::string& path) {
  if (!v.is_boolean()) throw ValidationError(path + ": expected true or false");
  return v.get<bool>();
}

inline std::string as_string(const Json& v, const std::string& path) {
  if (!v.is_string()) throw ValidationError(path + ": expected a string");
  return v.get<std::string>();
}

inline double get_number(const Json& j, const std::string& path, const char* key) {
  return as_number(field(j, path, key), join(path, key));
}
inline long get_integer(const Json& j, const std::string& path, const char* key) {
  return as_integer(field(j, path, key), join(path, key));
}
inline std::string get_string(const Json& j, const std::string& path, const char* key) {
  return as_string(field(j, path, key), join(path, key));
}

// ---------------------------------------------------------------------------
// Matrices as arrays of rows

inline Json to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Json to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

/// `cols` fixes the width of an empty-row matrix (a d x 0 or 0 x l shape).
inline Matrix matrix_from(const Json& j, const std::string& path, Eigen::Index cols = -1) {
  if (!j.is_array()) throw ValidationError(path + ": expected an array of rows");
  const auto r = static_cast<Eigen::Index>(j.size());
  Eigen::Index c = cols;
  if (r > 0) {
    if (!j[0].is_array()) throw ValidationError(path + ": expected an array of rows");
    c = static_cast<Eigen::Index>(j[0].size());
  }
  Matrix m(r, std::max<Eigen::Index>(c, 0));
  for (Eigen::Index i = 0; i < r; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c)
      throw ValidationError(path + "[" + std::to_string(i) + "]: rows must have equal length");
    for (Eigen::Index k = 0; k < c; ++k)
      m(i, k) = as_number(row[static_cast<std::size_t>(k)], path + "[" + std::to_string(i) + "][" + std::to_string(k) + "]");
  }
  return m;
}

inline Vector vector_from(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ValidationError(path + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = as_number(j[i], path + "[" + std::to_string(i) + "]");
  return v;
}

// ---------------------------------------------------------------------------
// Models

inline Json layer_to_json(const PedLayer& layer) {
  Json j;
  j["d"] = layer.d();
  j["l"] = layer.l();
  j["lambda"] = layer.lambda;
  j["family"] = layer.family.name();
  j["canonical"] = layer.map.name();
  j["W"] = to_json(layer.W);
  j["B"] = to_json(layer.B);
  return j;
}

inline PedLayer layer_from_json(const Json& j, const std::string& path = "layer") {
  allow_keys(j, path, {"d", "l", "lambda", "family", "canonical", "W", "B"});
  const long d = get_integer(j, path, "d"), l = get_integer(j, path, "l");
  if (d < 1 || l < 1) throw ValidationError(path + ": d and l must be positive");
  PedLayer layer;
  layer.lambda = get_number(j, path, "lambda");
  layer.family = make_family(get_string(j, path, "family"));
  layer.map = make_canonical(get_string(j, path, "canonical"));
  layer.W = matrix_from(field(j, path, "W"), join(path, "W"), l);
  layer.B = vector_from(field(j, path, "B"), join(path, "B"));
  if (layer.W.rows() != d || layer.W.cols() != l)
    throw ValidationError(join(path, "W") + ": expected " + std::to_string(d) + "x" + std::to_string(l));
  if (layer.B.size() != d) throw ValidationError(join(path, "B") + ": expected " + std::to_string(d) + " entries");
  layer.validate();
  return layer;
}

inline Json spec_to_json(const DeepPedSpec& spec) {
  Json j;
  j["data_precision"] = spec.data_precision;
  Json layers = Json::array();
  for (const auto& layer : spec.layers) {
    Json lj;
    lj["W"] = to_json(layer.W);
    lj["B"] = to_json(layer.B);
    lj["lambda"] = layer.lambda;
    lj["canonical"] = layer.map.name();
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j;
}

inline DeepPedSpec spec_from_json(const Json& j, const std::string& path = "spec") {
  allow_keys(j, path, {"data_precision", "layers"});
  DeepPedSpec spec;
  spec.data_precision = get_number(j, path, "data_precision");
  const Json& layers = field(j, path, "layers");
  if (!layers.is_array() || layers.empty()) throw ValidationError(join(path, "layers") + ": expected a non-empty array");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const std::string p = join(path, "layers") + "[" + std::to_string(k) + "]";
    const Json& lj = layers[k];
    allow_keys(lj, p, {"W", "B", "lambda", "canonical"});
    PedLayer layer;
    layer.W = matrix_from(field(lj, p, "W"), join(p, "W"));
    layer.B = vector_from(field(lj, p, "B"), join(p, "B"));
    layer.lambda = get_number(lj, p, "lambda");
    layer.family = make_family("gaussian");
    layer.map = make_canonical(get_string(lj, p, "canonical"));
    spec.layers.push_back(std::move(layer));
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Optimizer state

inline Json bundle_to_json(const ParamBundle& p) {
  Json W = Json::array(), B = Json::array();
  for (const auto& w : p.W) W.push_back(to_json(w));
  for (const auto& b : p.B) B.push_back(to_json(b));
  return Json{{"W", std::move(W)}, {"B", std::move(B)}};
}

inline ParamBundle bundle_from_json(const Json& j, const std::string& path, const ParamBundle& like) {
  allow_keys(j, path, {"W", "B"});
  const Json &W = field(j, path, "W"), &B = field(j, path, "B");
  if (!W.is_array() || !B.is_array() || W.size() != like.layers() || B.size() != like.layers())
    throw ValidationError(path + ": expected one entry per layer");
  ParamBundle p = ParamBundle::zeros_like(like);
  for (std::size_t k = 0; k < like.layers(); ++k) {
    const std::string pk = "[" + std::to_string(k) + "]";
    p.W[k] = matrix_from(W[k], join(path, "W") + pk, like.W[k].cols());
    p.B[k] = vector_from(B[k], join(path, "B") + pk);
    if (p.W[k].rows() != like.W[k].rows() || p.W[k].cols() != like.W[k].cols() || p.B[k].size() != like.B[k].size())
      throw ValidationError(path + pk + ": shape does not match the model");
  }
  return p;
}

inline Json optimizer_to_json(const TrainState& st) {
  Json j;
  j["next_epoch"] = st.next_epoch;
  j["step"] = st.adam.step;
  j["m"] = bundle_to_json(st.adam.m);
  j["v"] = bundle_to_json(st.adam.v);
  return j;
}

/// The warm-start cache is kept in a separate CSV and is not part of this object.
inline TrainState optimizer_from_json(const Json& j, const ParamBundle& like, const std::string& path = "optimizer") {
  allow_keys(j, path, {"next_epoch", "step", "m", "v"});
  TrainState st;
  st.next_epoch = static_cast<int>(get_integer(j, path, "next_epoch"));
  if (st.next_epoch < 0) throw ValidationError(join(path, "next_epoch") + ": must be >= 0");
  const Json& step = field(j, path, "step");
  if (!step.is_array() || step.size() != like.layers())
    throw ValidationError(join(path, "step") + ": expected one counter per layer");
  for (std::size_t k = 0; k < step.size(); ++k)
    st.adam.step.push_back(as_integer(step[k], join(path, "step") + "[" + std::to_string(k) + "]"));
  st.adam.m = bundle_from_json(field(j, path, "m"), join(path, "m"), like);
  st.adam.v = bundle_from_json(field(j, path, "v"), join(path, "v"), like);
  return st;
}

// ---------------------------------------------------------------------------
// Reports

inline Json report_to_json(const DownstreamReport& r) {
  Json seeds = Json::array();
  for (const auto& s : r.seeds) seeds.push_back(Json{{"seed", s.seed}, {"train_mse", s.train_mse}, {"test_mse", s.test_mse}});
  return Json{{"backbone", r.backbone}, {"seeds", std::move(seeds)}, {"wins", r.wins}};
}

// ---------------------------------------------------------------------------
// Files

inline Json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed: " + p.string());
}

inline void write_json(const std::filesystem::path& p, const Json& j) { write_text(p, j.dump(2) + "\n"); }

inline void ensure_dir(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec || !std::filesystem::is_directory(p)) throw IoError("cannot create directory " + p.string());
}

} // namespace ped::io

#endif // PED_SERIALIZE_HPP
