#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "vrgcn/io.hpp"
#include "vrgcn/synth.hpp"
#include "vrgcn/trainer.hpp"

using namespace vrgcn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("vrgcn_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) { std::ofstream(path) << text; }

}  // namespace

TEST_CASE("generated datasets round-trip through the loaders") {
  SbmConfig cfg;
  cfg.seed = 3;
  const Graph g = generate_sbm(cfg);
  CHECK(g.num_nodes == 32);
  const fs::path dir = scratch("roundtrip");
  write_dataset(g, dir.string());
  const Graph back = load_dataset(DatasetPaths::in_directory(dir.string()));
  CHECK(back.num_nodes == g.num_nodes);
  CHECK(back.adjacency == g.adjacency);
  CHECK(back.features == g.features);
  CHECK(back.labels.classes == g.labels.classes);
  CHECK(back.splits.train == g.splits.train);
  CHECK(back.splits.validation == g.splits.validation);
  CHECK(back.splits.test == g.splits.test);
  fs::remove_all(dir);
}

TEST_CASE("the generator is deterministic and respects community structure") {
  SbmConfig cfg;
  cfg.seed = 9;
  const Graph a = generate_sbm(cfg), b = generate_sbm(cfg);
  CHECK(a.adjacency == b.adjacency);
  CHECK(a.features == b.features);
  cfg.seed = 10;
  CHECK_FALSE(generate_sbm(cfg).adjacency == a.adjacency);

  cfg.nodes = 200;
  const Graph big = generate_sbm(cfg);
  std::size_t inside = 0, across = 0;
  for (std::size_t u = 0; u < big.num_nodes; ++u)
    for (NodeId v : big.adjacency.row_cols(u))
      (big.labels.classes[u] == big.labels.classes[v] ? inside : across) += 1;
  CHECK(inside > 3 * across);
}

TEST_CASE("multi-label files") {
  const fs::path dir = scratch("multi");
  write_file(dir / "labels.csv", "0,011\n1,100\n2,000\n");
  const Labels l = read_labels_csv((dir / "labels.csv").string(), 3, true);
  CHECK(l.multilabel);
  CHECK(l.num_classes == 3);
  CHECK(l.multi_hot(0, 1) == 1.0);
  CHECK(l.multi_hot(0, 0) == 0.0);
  CHECK(l.multi_hot(1, 0) == 1.0);
  write_file(dir / "bad.csv", "0,01\n1,100\n");
  CHECK_THROWS_AS(read_labels_csv((dir / "bad.csv").string(), 2, true), InputError);
  fs::remove_all(dir);
}

TEST_CASE("malformed inputs are rejected") {
  const fs::path dir = scratch("bad");
  CHECK_THROWS_AS(read_edge_list((dir / "missing.txt").string()), InputError);
  write_file(dir / "edges.txt", "# comment\n0 1\n1 2 0.5\n");
  CHECK(read_edge_list((dir / "edges.txt").string()).size() == 2);
  write_file(dir / "edges2.txt", "0 x\n");
  CHECK_THROWS_AS(read_edge_list((dir / "edges2.txt").string()), InputError);
  write_file(dir / "features.csv", "1,2\n3\n");
  CHECK_THROWS_AS(read_features_csv((dir / "features.csv").string()), InputError);
  write_file(dir / "labels.csv", "0,1\n5,0\n");
  CHECK_THROWS_AS(read_labels_csv((dir / "labels.csv").string(), 3, false), InputError);
  fs::remove_all(dir);
}

TEST_CASE("checkpoints round-trip bit-exactly with a sidecar") {
  Rng rng = make_rng(4);
  const ModelParams params = ModelParams::glorot({5, 7, 3}, rng);
  const fs::path dir = scratch("ckpt");
  const std::string path = (dir / "w.bin").string();
  save_checkpoint(path, params, {"cvd", 12, 40});
  CheckpointInfo info;
  const ModelParams back = load_checkpoint(path, &info);
  CHECK(back.weights == params.weights);
  CHECK(info.estimator == "cvd");
  CHECK(info.seed == 12);
  CHECK(info.epoch == 40);
  CHECK(fs::file_size(path) == 8 * (5 * 7 + 7 * 3));
  fs::remove_all(dir);
}

TEST_CASE("graph convolution beats an MLP on a community graph") {
  SbmConfig cfg;
  cfg.nodes = 64;
  cfg.feature_noise = 2.5;
  cfg.seed = 5;
  const Graph g = generate_sbm(cfg);
  Graph mlp = g;
  mlp.adjacency = SparseMatrix(g.num_nodes, g.num_nodes, std::vector<std::size_t>(g.num_nodes + 1, 0), {}, {});
  double gcn_acc = 0.0, mlp_acc = 0.0;
  for (Estimator e : {Estimator::kExact, Estimator::kCV}) {
    TrainConfig c;
    c.estimator.kind = e;
    c.hidden_dims = {16};
    c.minibatch_size = 8;
    c.epochs = 100;
    c.seed = 6;
    const TrainResult rg = train(g, c);
    const TrainResult rm = train(mlp, c);
    gcn_acc += evaluate(g, build_propagation(g), rg.best_params, g.splits.test);
    mlp_acc += evaluate(mlp, build_propagation(mlp), rm.best_params, mlp.splits.test);
  }
  CHECK(gcn_acc > mlp_acc);
}
