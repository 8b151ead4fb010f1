#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vrgcn/graph.hpp"
#include "vrgcn/model.hpp"

namespace vrgcn {

/// Dataset files. Node ids are 0-based. The node count is the number of feature rows.
struct DatasetPaths {
  std::string edges;       // "u v [weight]" per line, '#' starts a comment
  std::string features;    // CSV, one row per node
  std::string labels;      // "node,class", or "node,bits" (e.g. 0110) when multilabel
  std::string train;       // whitespace-separated node ids
  std::string validation;
  std::string test;
  bool multilabel = false;

  /// edges.txt, features.csv, labels.csv, train.txt, val.txt, test.txt under `dir`.
  static DatasetPaths in_directory(const std::string& dir, bool multilabel = false);
};

std::vector<Edge> read_edge_list(const std::string& path);
Matrix read_features_csv(const std::string& path);
Labels read_labels_csv(const std::string& path, std::size_t num_nodes, bool multilabel);
std::vector<NodeId> read_node_ids(const std::string& path);

/// Loads and validates a graph. Throws InputError on missing or malformed files.
Graph load_dataset(const DatasetPaths& paths);

/// Writes the files of DatasetPaths::in_directory(dir), creating `dir`.
void write_dataset(const Graph& graph, const std::string& dir);

struct CheckpointInfo {
  std::string estimator;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
};

/// Weights as little-endian f64 (each W row-major, layer order) at `path` and a
/// JSON sidecar `path + ".json"` with {layer_dims, estimator, seed, epoch}.
void save_checkpoint(const std::string& path, const ModelParams& params,
                     const CheckpointInfo& info);
ModelParams load_checkpoint(const std::string& path, CheckpointInfo* info = nullptr);

}  // namespace vrgcn
