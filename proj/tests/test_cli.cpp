#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "vrgcn/io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "vrgcn_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(VRGCN_CLI) + " " + args + " > " + (kWork / "stdout.txt").string() +
                          " 2> " + (kWork / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

struct Workdir {
  Workdir() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
  ~Workdir() { fs::remove_all(kWork); }
};

}  // namespace

TEST_CASE("help documents every config key") {
  Workdir w;
  CHECK(run("--help") == 0);
  const std::string help = slurp(kWork / "stdout.txt");
  for (const char* key : {"data", "estimator", "pp", "dropout", "samples_per_layer", "self_weighting",
                          "cvd_scaling", "hidden", "batch_size", "epochs", "optimizer", "lr",
                          "lr_schedule", "weight_decay", "epoch_scan", "warmup_epochs", "repeat", "out"})
    CHECK_MESSAGE(help.find(key) != std::string::npos, key);
}

TEST_CASE("bad input exits with code 2 and a message") {
  Workdir w;
  CHECK(run("train --data " + (kWork / "nope").string()) == 2);
  CHECK_FALSE(slurp(kWork / "stderr.txt").empty());
  CHECK(run("verify no-such-suite") == 2);
  CHECK(run("frobnicate") == 2);
  std::ofstream(kWork / "cfg.json") << R"({"estimator": "cv", "learning_rate": 0.1})";
  CHECK(run("train -c " + (kWork / "cfg.json").string()) == 2);
  CHECK(slurp(kWork / "stderr.txt").find("learning_rate") != std::string::npos);
}

TEST_CASE("gen-synth, train and eval") {
  Workdir w;
  const fs::path data = kWork / "data";
  REQUIRE(run("gen-synth --nodes 32 --communities 2 --seed 3 --out " + data.string()) == 0);
  const vrgcn::Graph g = vrgcn::load_dataset(vrgcn::DatasetPaths::in_directory(data.string()));
  CHECK(g.num_nodes == 32);
  const std::string first_edges = slurp(data / "edges.txt");
  REQUIRE(run("gen-synth --nodes 32 --communities 2 --seed 3 --out " + data.string()) == 0);
  CHECK(slurp(data / "edges.txt") == first_edges);

  std::ofstream(kWork / "cfg.json") << R"({"data": ")" << data.string()
                                    << R"(", "estimator": "cvd", "pp": true, "dropout": 0.5,
      "samples_per_layer": [2], "hidden": [8], "batch_size": 8, "epochs": 7, "seed": 4})";
  const fs::path out1 = kWork / "out1", out2 = kWork / "out2";
  REQUIRE(run("train -c " + (kWork / "cfg.json").string() + " --out " + out1.string()) == 0);
  REQUIRE(run("train -c " + (kWork / "cfg.json").string() + " --out " + out2.string()) == 0);
  const std::string report = slurp(out1 / "report.csv");
  CHECK(lines(report) == 1 + 7);
  CHECK(report == slurp(out2 / "report.csv"));
  CHECK(fs::exists(out1 / "weights.bin"));
  CHECK(fs::exists(out1 / "weights.bin.json"));

  REQUIRE(run("train -c " + (kWork / "cfg.json").string() + " --epochs 3 --repeat 2 --out " + out2.string()) == 0);
  CHECK(lines(slurp(out2 / "report.csv")) == 1 + 2 * 3);
  CHECK(fs::exists(out2 / "weights_run1.bin"));

  CHECK(run("eval --data " + data.string() + " --checkpoint " + (out1 / "weights.bin").string() +
            " --split validation") == 0);
  CHECK(slurp(kWork / "stdout.txt").find("accuracy") != std::string::npos);
  CHECK(run("eval --data " + data.string() + " --checkpoint " + (out1 / "weights.bin").string() +
            " --split everything") == 2);

  const fs::path rep = kWork / "rep";
  CHECK(run("variance-report --data " + data.string() + " --hidden 8 --draws 200 --out " + rep.string()) == 0);
  CHECK(lines(slurp(rep / "variance.csv")) == 1 + 5 * 2 + 4);
  CHECK(run("correlation-report --data " + data.string() + " --hidden 8 --pp --samples 2 --dropout 0.5 "
            "--samples-mc 200 --out " + rep.string()) == 0);
  CHECK(lines(slurp(rep / "correlation.csv")) == 2);
}

TEST_CASE("verify returns 0 for a passing suite") {
  Workdir w;
  CHECK(run("verify prop1-variance --seed 5") == 0);
  CHECK(slurp(kWork / "stdout.txt").find("[PASS]") != std::string::npos);
}
