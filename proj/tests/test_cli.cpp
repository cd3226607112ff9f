#include "femdiff/io.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kSmall = " --set mesh.nx=4 --set mesh.ny=4 --set mesh.levels=2 --set schedule.steps=30 ";

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("femdiff_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Result {
  int code = -1;
  std::string err;
};

Result run(const std::string& args, const fs::path& errfile) {
  const std::string cmd = std::string(FEMDIFF_CLI_PATH) + " " + args + " 2>" + errfile.string() + " >/dev/null";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(errfile);
  std::stringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

}  // namespace

TEST(Cli, SampleIsDeterministicPerSeed) {
  const auto d = scratch("det");
  for (const auto& [name, seed] : {std::pair{"a", 5}, {"b", 5}, {"c", 6}}) {
    const auto r = run("--seed " + std::to_string(seed) + " --out " + (d / name).string() + kSmall + "sample --count 3",
                       d / "err");
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* f : {"00000.fld", "00002.fld"}) {
    EXPECT_EQ(slurp(d / "a" / "samples" / f), slurp(d / "b" / "samples" / f));
    EXPECT_NE(slurp(d / "a" / "samples" / f), slurp(d / "c" / "samples" / f));
  }
  const auto meta = read_json(d / "a" / "run.json");
  EXPECT_EQ(meta["status"], "ok");
  EXPECT_EQ(meta["seed"], 5);
  EXPECT_EQ(meta["config"]["schedule"]["steps"], "30");
  EXPECT_EQ(meta["config_hash"], read_json(d / "b" / "run.json")["config_hash"]);
  fs::remove_all(d);
}

TEST(Cli, ZeroWeightPosteriorReproducesSample) {
  const auto d = scratch("zeta");
  ASSERT_EQ(run("--seed 2 --out " + (d / "s").string() + kSmall + "sample --count 2", d / "err").code, 0);
  const auto truth = d / "s" / "samples" / "00000.fld";
  const auto r = run("--seed 2 --out " + (d / "p").string() + kSmall +
                         "--set guidance.weight=0 posterior --method dps --chains 2 --truth " + truth.string(),
                     d / "err");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(d / "s" / "samples" / "00001.fld"), slurp(d / "p" / "chains" / "00001.fld"));
  fs::remove_all(d);
}

TEST(Cli, EvalOfExactEnsembleIsZero) {
  const auto d = scratch("exact");
  ASSERT_EQ(run("--out " + (d / "s").string() + kSmall + "sample --count 1", d / "err").code, 0);
  const auto truth = femdiff::io::load_field((d / "s" / "samples" / "00000.fld").string());
  const auto ens = d / "ens";
  fs::create_directories(ens / "chains");
  for (const char* f : {"00000.fld", "00001.fld", "00002.fld"}) femdiff::io::save_field((ens / "chains" / f).string(), truth);
  femdiff::io::save_field((ens / "truth.fld").string(), truth);
  const auto r = run("--out " + (d / "e").string() + kSmall + "eval --label exact --ensemble " + ens.string(), d / "err");
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(d / "e" / "metrics.jsonl");
  std::string line;
  int seen = 0;
  while (std::getline(in, line)) {
    const auto j = json::parse(line);
    EXPECT_EQ(j["config"], "exact");
    EXPECT_EQ(j["K"], 3);
    EXPECT_NEAR(j["mean"].get<double>(), 0.0, 1e-12) << j["metric"];
    ++seen;
  }
  EXPECT_EQ(seen, 2);
  EXPECT_TRUE(fs::exists(d / "e" / "metrics.csv"));
  fs::remove_all(d);
}

TEST(Cli, PipelineSmoke) {
  const auto d = scratch("pipeline");
  const std::string base = kSmall + "--set model.hidden=4 --set model.time_dim=4 --set train.iterations=5 ";
  const std::string data = (d / "data").string();
  ASSERT_EQ(run("--out " + (d / "mesh").string() + base + "mesh", d / "err").code, 0);
  EXPECT_TRUE(fs::exists(d / "mesh" / "mesh.txt"));
  EXPECT_EQ(read_json(d / "mesh" / "hierarchy.json")["levels"].size(), 2u);
  ASSERT_EQ(run("--seed 1 --out " + data + base + "--set data.count=10 gen-data", d / "err").code, 0);
  auto r = run("--out " + (d / "train").string() + base + "train --data " + data, d / "err");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(d / "train" / "run.json")["result"]["training_examples"], 9);
  const std::string ckpt = (d / "train" / "checkpoint.grif").string();
  r = run("--out " + (d / "samples").string() + base + "sample --count 2 --checkpoint " + ckpt, d / "err");
  ASSERT_EQ(r.code, 0) << r.err;
  r = run("--out " + (d / "post").string() + base + "posterior --method daps --chains 2 --checkpoint " + ckpt +
              " --truth " + data + "/test/00000.fld",
          d / "err");
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"mean.fld", "truth.fld", "observation.txt", "chains/00001.fld"}) {
    EXPECT_TRUE(fs::exists(d / "post" / f)) << f;
  }
  r = run("--out " + (d / "eval").string() + base + "eval --ensemble " + (d / "post").string() + " --samples " +
              (d / "samples" / "samples").string() + " --reference " + data + "/train",
          d / "err");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(d / "eval" / "run.json")["result"]["metrics"].size(), 3u);
  fs::remove_all(d);
}

TEST(Cli, ErrorsAreStructured) {
  const auto d = scratch("errors");
  auto r = run("--out " + (d / "cfg").string() + " --set schedule.stepz=3 sample", d / "err");
  EXPECT_EQ(r.code, 2);
  auto rec = json::parse(r.err);
  EXPECT_EQ(rec["status"], "error");
  EXPECT_EQ(rec["kind"], "ConfigError");
  EXPECT_EQ(read_json(d / "cfg" / "run.json")["kind"], "ConfigError");

  r = run("--out " + (d / "io").string() + kSmall + "posterior --truth " + (d / "missing.fld").string(), d / "err");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(json::parse(r.err)["kind"], "IOError");

  // Dataset built on one mesh, consumed on another.
  ASSERT_EQ(run("--out " + (d / "data").string() + kSmall + "--set data.count=4 gen-data", d / "err").code, 0);
  r = run("--out " + (d / "mm").string() + " --set mesh.nx=8 --set mesh.ny=8 train --data " + (d / "data").string(),
          d / "err");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(json::parse(r.err)["kind"], "GraphMismatch");

  r = run("frobnicate", d / "err");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(json::parse(r.err)["kind"], "UsageError");
  fs::remove_all(d);
}
