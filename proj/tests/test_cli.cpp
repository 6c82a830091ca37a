#include <array>
#include <chrono>
#include <map>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "ped/ped.hpp"

namespace fs = std::filesystem;
using namespace ped;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun ped_cli(const std::string& args) {
  const std::string cmd = std::string(PED_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

class Cli : public ::testing::Test {
protected:
  fs::path dir;
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() / ("ped_cli_" + std::string(info->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string p(const std::string& rel) const { return (dir / rel).string(); }
  std::string config(const std::string& name, const std::string& json) const {
    write(dir / name, json);
    return p(name);
  }
};

// Directory listing with file contents, for byte-level comparisons.
std::map<std::string, std::string> snapshot(const fs::path& d) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(d))
    if (e.is_regular_file()) m[fs::relative(e.path(), d).string()] = slurp(e.path());
  return m;
}

const char* kSmall = R"({"dataset": {"d": 8, "resolution": 41, "subsample": 100},
  "train": {"epochs": 1, "batch_size": 50}})";

} // namespace

TEST_F(Cli, GenDataWritesConsistentFiles) {
  const auto c = config("c.json", R"({"dataset": {"d": 7, "resolution": 31}})");
  const CliRun r = ped_cli("gen-data --config " + c + " --out " + p("d"));
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* f : {"Z_true.csv", "W_true.csv", "Y.csv", "meta.json"}) EXPECT_TRUE(fs::exists(dir / "d" / f)) << f;
  const auto meta = io::read_json(dir / "d" / "meta.json");
  const Matrix Y = num::read_matrix_csv(p("d/Y.csv")), Z = num::read_matrix_csv(p("d/Z_true.csv")),
               W = num::read_matrix_csv(p("d/W_true.csv"));
  EXPECT_EQ(Y.rows(), 7);
  EXPECT_EQ(Y.cols(), meta["M"].get<long>());
  EXPECT_EQ(Z.rows(), 2);
  EXPECT_EQ(Z.cols(), Y.cols());
  EXPECT_EQ(W.rows(), 7);
  EXPECT_EQ(W.cols(), 2);
  EXPECT_EQ(meta["family"], "gaussian");
  EXPECT_EQ(meta["map"], "identity");
  EXPECT_EQ(meta["dims"][0], 7);
}

TEST_F(Cli, GenDataIsByteIdentical) {
  const auto c = config("c.json", R"({"dataset": {"d": 5, "resolution": 31, "family": "poisson"}})");
  ASSERT_EQ(ped_cli("gen-data --config " + c + " --out " + p("a")).code, 0);
  ASSERT_EQ(ped_cli("gen-data --config " + c + " --out " + p("b") + " --workers 3").code, 0);
  EXPECT_EQ(snapshot(dir / "a"), snapshot(dir / "b"));
}

TEST_F(Cli, SweepWritesDistinctSeeds) {
  const auto c = config("c.json", R"({"dataset": {"d": 5, "resolution": 21}})");
  ASSERT_EQ(ped_cli("gen-data --sweep 3 --config " + c + " --out " + p("s")).code, 0);
  std::vector<std::string> W;
  for (int k = 0; k < 3; ++k) {
    const auto d = dir / "s" / ("seed" + std::to_string(k));
    ASSERT_TRUE(fs::exists(d / "W_true.csv"));
    W.push_back(slurp(d / "W_true.csv"));
  }
  EXPECT_FALSE(fs::exists(dir / "s" / "seed3"));
  EXPECT_NE(W[0], W[1]);
  EXPECT_NE(W[1], W[2]);
  EXPECT_NE(W[0], W[2]);
}

TEST_F(Cli, DeepDatasetWritesEveryLayer) {
  const auto c = config("c.json", R"({"dataset": {"dims": [9, 4], "maps": ["trelu:0.5", "identity"], "resolution": 21}})");
  ASSERT_EQ(ped_cli("gen-data --config " + c + " --out " + p("d")).code, 0);
  EXPECT_EQ(num::read_matrix_csv(p("d/W_true.csv")).rows(), 9);
  EXPECT_EQ(num::read_matrix_csv(p("d/W_true_2.csv")).cols(), 2);
  EXPECT_EQ(num::read_matrix_csv(p("d/Y.csv")).rows(), 9);
}

TEST_F(Cli, TrainSmokeAndResume) {
  const auto c = config("c.json", kSmall);
  ASSERT_EQ(ped_cli("gen-data --config " + c + " --out " + p("d")).code, 0);
  const auto t0 = std::chrono::steady_clock::now();
  const CliRun r = ped_cli("train --config " + c + " --data " + p("d") + " --out " + p("ck1"));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_LT(secs, 60.0);
  for (const char* f : {"model.json", "optimizer.json", "losses.csv", "warm.csv", "config.json"})
    EXPECT_TRUE(fs::exists(dir / "ck1" / f)) << f;

  // one epoch, then one more from the checkpoint == two epochs straight
  ASSERT_EQ(ped_cli("train --data " + p("d") + " --resume " + p("ck1") + " --out " + p("ck2")).code, 0);
  const auto c2 = config("c2.json", R"({"dataset": {"d": 8, "resolution": 41, "subsample": 100},
    "train": {"epochs": 2, "batch_size": 50}})");
  ASSERT_EQ(ped_cli("train --config " + c2 + " --data " + p("d") + " --out " + p("full")).code, 0);
  EXPECT_EQ(slurp(dir / "ck2" / "model.json"), slurp(dir / "full" / "model.json"));
  EXPECT_EQ(slurp(dir / "ck2" / "losses.csv"), slurp(dir / "full" / "losses.csv"));

  std::istringstream losses(slurp(dir / "ck2" / "losses.csv"));
  std::string line;
  std::getline(losses, line);
  int last = -1, rows = 0;
  while (std::getline(losses, line)) {
    const int epoch = std::stoi(line.substr(0, line.find(',')));
    EXPECT_GE(epoch, last);
    last = epoch;
    ++rows;
  }
  EXPECT_EQ(last, 1);
  EXPECT_EQ(rows, 4);
}

TEST_F(Cli, TrainIndependentOfWorkers) {
  const auto c = config("c.json", kSmall);
  ASSERT_EQ(ped_cli("gen-data --config " + c + " --out " + p("d")).code, 0);
  ASSERT_EQ(ped_cli("train --workers 1 --config " + c + " --data " + p("d") + " --out " + p("a")).code, 0);
  ASSERT_EQ(ped_cli("train --workers 4 --config " + c + " --data " + p("d") + " --out " + p("b")).code, 0);
  EXPECT_EQ(snapshot(dir / "a"), snapshot(dir / "b"));
}

TEST_F(Cli, DeepTrainingMarksFrozenLayers) {
  const auto c = config("c.json", R"({"dataset": {"d": 6, "resolution": 41, "subsample": 60},
    "model": {"kind": "deep", "dims": [4, 2], "maps": ["trelu:0.5", "trelu:0.5"]},
    "train": {"epochs": 11, "batch_size": 60}})");
  ASSERT_EQ(ped_cli("gen-data --config " + c + " --out " + p("d")).code, 0);
  const CliRun r = ped_cli("train --config " + c + " --data " + p("d") + " --out " + p("ck"));
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream losses(slurp(dir / "ck" / "losses.csv"));
  std::string line;
  std::getline(losses, line);
  EXPECT_NE(line.find("frozen_layers"), std::string::npos);
  std::vector<std::string> marker;
  while (std::getline(losses, line)) marker.push_back(line.substr(line.rfind(',') + 1));
  ASSERT_EQ(marker.size(), 11u);
  EXPECT_EQ(marker[0], "1;2");
  EXPECT_EQ(marker[4], "1;2");
  EXPECT_EQ(marker[5], "2");
  EXPECT_EQ(marker[9], "2");
  EXPECT_EQ(marker[10], "");
}

TEST_F(Cli, SolverAbortExitsThree) {
  const auto c = config("c.json", R"({"dataset": {"d": 8, "resolution": 41, "subsample": 100},
    "train": {"epochs": 1, "solver": {"max_iter": 1, "tol": 1e-14}}})");
  ASSERT_EQ(ped_cli("gen-data --config " + c + " --out " + p("d")).code, 0);
  const CliRun r = ped_cli("train --config " + c + " --data " + p("d") + " --out " + p("ck"));
  EXPECT_EQ(r.code, 3) << r.out;
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  const auto bad = config("bad.json", R"({"dataset": {"d": 8, "colour": 1}})");
  CliRun r = ped_cli("gen-data --config " + bad + " --out " + p("d"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("dataset: unknown key 'colour'"), std::string::npos) << r.out;
  const auto wrong = config("wrong.json", R"({"train": {"batch_size": "big"}})");
  r = ped_cli("gen-data --config " + wrong + " --out " + p("d"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("train.batch_size"), std::string::npos) << r.out;
  const auto fam = config("fam.json", R"({"dataset": {"family": "cauchy"}})");
  EXPECT_EQ(ped_cli("gen-data --config " + fam + " --out " + p("d")).code, 2);
  write(dir / "broken.json", "{\"dataset\": ");
  EXPECT_EQ(ped_cli("gen-data --config " + p("broken.json") + " --out " + p("d")).code, 2);
  EXPECT_EQ(ped_cli("no-such-command").code, 2);
}

TEST_F(Cli, MissingFilesExitFour) {
  EXPECT_EQ(ped_cli("gen-data --config " + p("absent.json") + " --out " + p("d")).code, 4);
  EXPECT_EQ(ped_cli("train --data " + p("nothing") + " --out " + p("ck")).code, 4);
}

TEST_F(Cli, EmbedReportsAlignmentAndIsIdempotent) {
  const auto c = config("c.json", R"({"dataset": {"d": 8, "resolution": 41}, "train": {"epochs": 2}})");
  ASSERT_EQ(ped_cli("gen-data --config " + c + " --out " + p("d")).code, 0);
  ASSERT_EQ(ped_cli("train --config " + c + " --data " + p("d") + " --out " + p("ck")).code, 0);
  const CliRun a = ped_cli("embed --checkpoint " + p("ck") + " --data " + p("d") + " --out " + p("e1"));
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_NE(a.out.find("alignment R2"), std::string::npos);
  const CliRun b = ped_cli("embed --checkpoint " + p("ck") + " --data " + p("d") + " --out " + p("e2"));
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(snapshot(dir / "e1"), snapshot(dir / "e2"));
  const Matrix E = num::read_matrix_csv(p("e1/embedding.csv"));
  EXPECT_EQ(E.rows(), 2);
  EXPECT_TRUE(fs::exists(dir / "e1" / "embedding_qr.csv"));
}

TEST_F(Cli, ZeroWeightCheckpointEmbedsToZero) {
  fs::create_directories(dir / "ck");
  fs::create_directories(dir / "d");
  PedLayer layer{Matrix::Zero(3, 2), Vector::Zero(3), 1.0, make_family("gaussian"), make_canonical("identity")};
  io::write_json(dir / "ck" / "model.json", io::Json{{"kind", "shallow"}, {"layer", io::layer_to_json(layer)}});
  num::Rng rng(1);
  Matrix Y(3, 5);
  for (Eigen::Index i = 0; i < Y.size(); ++i) Y.data()[i] = rng.normal();
  num::write_matrix_csv(p("d/Y.csv"), Y);
  ASSERT_EQ(ped_cli("embed --checkpoint " + p("ck") + " --data " + p("d") + " --out " + p("e")).code, 0);
  EXPECT_EQ(num::read_matrix_csv(p("e/embedding.csv")).cwiseAbs().maxCoeff(), 0.0);
  // dimension mismatch
  num::write_matrix_csv(p("d/Y.csv"), Matrix::Zero(4, 5));
  EXPECT_EQ(ped_cli("embed --checkpoint " + p("ck") + " --data " + p("d") + " --out " + p("e")).code, 2);
}

namespace {

void write_checkpoint(const fs::path& d, const PedLayer& layer, const Matrix& Y) {
  fs::create_directories(d / "ck");
  fs::create_directories(d / "data");
  io::write_json(d / "ck" / "model.json", io::Json{{"kind", "shallow"}, {"layer", io::layer_to_json(layer)}});
  num::write_matrix_csv((d / "data" / "Y.csv").string(), Y);
}

} // namespace

TEST_F(Cli, DiagnoseGaussianIdentityAlwaysAdmissible) {
  PedLayer layer{Matrix::Constant(3, 2, 0.4), Vector::Zero(3), 0.1, make_family("gaussian"), make_canonical("identity")};
  write_checkpoint(dir, layer, Matrix::Ones(3, 4));
  const CliRun r = ped_cli("diagnose --checkpoint " + p("ck") + " --data " + p("data"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("verdict always admissible"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("hessian min-eigenvalue"), std::string::npos);
}

TEST_F(Cli, DiagnoseReluViolation) {
  // |W^T W|_2 = 2 with lambda = 1 and the gaussian curvature bound 1
  Matrix W = Matrix::Zero(2, 2);
  W(0, 0) = std::sqrt(2.0);
  W(1, 1) = 1.0;
  PedLayer layer{W, Vector::Zero(2), 1.0, make_family("gaussian"), make_canonical("relu")};
  write_checkpoint(dir, layer, Matrix::Ones(2, 3));
  const CliRun r = ped_cli("diagnose --checkpoint " + p("ck") + " --data " + p("data"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("verdict violated"), std::string::npos) << r.out;
  const auto pos = r.out.find("kappa*|W^T W|_2 ");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_NEAR(std::stod(r.out.substr(pos + 16)), 2.0, 1e-9);
}

TEST_F(Cli, DiagnoseEnumeratesWorkedExample) {
  PedLayer layer{0.3 * Matrix::Identity(2, 2), Vector::Zero(2), 1.0, make_family("gaussian"), make_canonical("relu")};
  write_checkpoint(dir, layer, Matrix::Ones(2, 1));
  const CliRun r = ped_cli("diagnose --enumerate --checkpoint " + p("ck") + " --data " + p("data"));
  ASSERT_EQ(r.code, 0) << r.out;
  // 0.3 / 1.09 = 0.275229357798...
  EXPECT_NE(r.out.find("pattern 1 1 | z* 0.2752293577"), std::string::npos) << r.out;
  const auto zero = r.out.find("pattern 0 0 | z* 0 0");
  ASSERT_NE(zero, std::string::npos) << r.out;
  const std::string line = r.out.substr(zero, r.out.find('\n', zero) - zero);
  EXPECT_NE(line.find("boundary 1"), std::string::npos) << line;
  const auto one = r.out.find("pattern 1 1");
  const std::string line1 = r.out.substr(one, r.out.find('\n', one) - one);
  EXPECT_NE(line1.find("consistent 1"), std::string::npos) << line1;
}

TEST_F(Cli, EvalSingleBackboneWinsEverySeed) {
  const auto c = config("c.json", R"({"dataset": {"d": 6, "resolution": 41},
    "eval": {"backbones": ["frozen-pca"], "seeds": [3, 4, 5], "epochs": 5}})");
  ASSERT_EQ(ped_cli("gen-data --config " + c + " --out " + p("d")).code, 0);
  const CliRun r = ped_cli("eval-downstream --config " + c + " --data " + p("d") + " --out " + p("ev"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto rep = io::read_json(dir / "ev" / "report.json");
  ASSERT_EQ(rep.size(), 1u);
  EXPECT_EQ(rep[0]["backbone"], "frozen-pca");
  EXPECT_EQ(rep[0]["wins"], 3);
  EXPECT_EQ(rep[0]["seeds"][2]["seed"], 5);
  EXPECT_TRUE(rep[0]["seeds"][0].contains("train_mse"));
}

TEST_F(Cli, EvalTiesGoToEarlierBackbone) {
  const auto c = config("c.json", R"({"dataset": {"d": 6, "resolution": 41},
    "eval": {"backbones": ["oracle"], "seeds": 2, "epochs": 5}})");
  ASSERT_EQ(ped_cli("gen-data --config " + c + " --out " + p("d")).code, 0);
  // the same embedding twice, as external backbones
  const CliRun r = ped_cli("eval-downstream --config " + c + " --data " + p("d") + " --out " + p("ev") +
                        " --embedding a=" + p("d/Z_true.csv") + " --embedding b=" + p("d/Z_true.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto rep = io::read_json(dir / "ev" / "report.json");
  ASSERT_EQ(rep.size(), 3u);
  EXPECT_EQ(rep[0]["wins"], 2);
  EXPECT_EQ(rep[1]["wins"], 0);
  EXPECT_EQ(rep[2]["wins"], 0);
  EXPECT_EQ(rep[0]["seeds"][0]["test_mse"], rep[2]["seeds"][0]["test_mse"]);
}

TEST_F(Cli, EvalNeedsCheckpointForPedBackbones) {
  const auto c = config("c.json", R"({"dataset": {"d": 6, "resolution": 21}, "eval": {"backbones": ["ped-frozen"]}})");
  ASSERT_EQ(ped_cli("gen-data --config " + c + " --out " + p("d")).code, 0);
  EXPECT_EQ(ped_cli("eval-downstream --config " + c + " --data " + p("d") + " --out " + p("ev")).code, 2);
}

TEST_F(Cli, EveryCommandIsDeterministic) {
  const auto c = config("c.json", R"({"dataset": {"d": 6, "resolution": 41, "subsample": 200},
    "train": {"epochs": 2, "batch_size": 100},
    "eval": {"backbones": ["ped-finetune", "ped-frozen", "frozen-pca"], "seeds": 2, "epochs": 3}})");
  for (const char* run : {"r1", "r2"}) {
    const std::string o = p(run);
    ASSERT_EQ(ped_cli("gen-data --config " + c + " --out " + o + "/d").code, 0);
    ASSERT_EQ(ped_cli("gen-data --sweep 2 --config " + c + " --out " + o + "/s").code, 0);
    ASSERT_EQ(ped_cli("train --config " + c + " --data " + o + "/d --out " + o + "/ck").code, 0);
    ASSERT_EQ(ped_cli("train --data " + o + "/d --resume " + o + "/ck --out " + o + "/ck2").code, 0);
    write(fs::path(o) / "embed.txt", ped_cli("embed --checkpoint " + o + "/ck --data " + o + "/d --out " + o + "/e").out);
    write(fs::path(o) / "diag.txt",
          ped_cli("diagnose --checkpoint " + o + "/ck --data " + o + "/d --out " + o + "/g").out);
    write(fs::path(o) / "eval.txt",
          ped_cli("eval-downstream --config " + c + " --checkpoint " + o + "/ck --data " + o + "/d --out " + o + "/v").out);
  }
  const auto a = snapshot(dir / "r1"), b = snapshot(dir / "r2");
  EXPECT_EQ(a.size(), b.size());
  for (const auto& [name, content] : a) {
    ASSERT_TRUE(b.count(name)) << name;
    EXPECT_EQ(content, b.at(name)) << name;
  }
}
