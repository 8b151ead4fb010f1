#include "vrgcn/history.hpp"

#include <algorithm>
#include <fstream>

#include "vrgcn/binary_io.hpp"

namespace vrgcn {

HistoryStore::HistoryStore(std::size_t num_nodes, std::vector<std::size_t> dims)
    : num_nodes_(num_nodes) {
  for (std::size_t d : dims) {
    layers_.emplace_back(num_nodes, d);
    initialized_.emplace_back(num_nodes, 0);
  }
}

HistoryStore::HistoryStore(const HistoryStore& other)
    : num_nodes_(other.num_nodes_),
      layers_(other.layers_),
      initialized_(other.initialized_),
      epoch_(other.epoch_),
      uninitialized_reads_(other.uninitialized_reads_.load()),
      rows_read_(other.rows_read_.load()) {}

HistoryStore& HistoryStore::operator=(const HistoryStore& other) {
  if (this == &other) return *this;
  num_nodes_ = other.num_nodes_;
  layers_ = other.layers_;
  initialized_ = other.initialized_;
  epoch_ = other.epoch_;
  uninitialized_reads_ = other.uninitialized_reads_.load();
  rows_read_ = other.rows_read_.load();
  return *this;
}

void HistoryStore::check_layer(std::size_t layer) const {
  require(layer < layers_.size(), "HistoryStore: layer out of range");
}

void HistoryStore::count_reads(std::size_t layer, std::span<const NodeId> nodes) const {
  std::size_t cold = 0;
  for (NodeId v : nodes) {
    require(v < num_nodes_, "HistoryStore: node id out of range");
    if (!initialized_[layer][v]) ++cold;
  }
  uninitialized_reads_ += cold;
  rows_read_ += nodes.size();
}

Matrix HistoryStore::read_rows(std::size_t layer, std::span<const NodeId> nodes) const {
  check_layer(layer);
  count_reads(layer, nodes);
  return gather_rows(layers_[layer], nodes);
}

void HistoryStore::write_rows(std::size_t layer, std::span<const NodeId> nodes,
                              const Matrix& values) {
  check_layer(layer);
  require(values.rows() == nodes.size(), "HistoryStore::write_rows: one value row per node");
  require(values.cols() == layers_[layer].cols(), "HistoryStore::write_rows: wrong row width");
  for (NodeId v : nodes) require(v < num_nodes_, "HistoryStore: node id out of range");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    std::ranges::copy(values.row(i), layers_[layer].row(nodes[i]).begin());
    initialized_[layer][nodes[i]] = 1;
  }
}

Matrix HistoryStore::snapshot_full(std::size_t layer) const {
  check_layer(layer);
  return layers_[layer];
}

Matrix HistoryStore::aggregate(std::size_t layer, const PropagationMatrix& p,
                               std::span<const NodeId> nodes) const {
  check_layer(layer);
  require(p.num_nodes() == num_nodes_, "HistoryStore::aggregate: graph size mismatch");
  const Matrix& h = layers_[layer];
  const SparseMatrix& pm = p.matrix();
  Matrix out(nodes.size(), h.cols());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    require(nodes[i] < num_nodes_, "HistoryStore: node id out of range");
    auto cols = pm.row_cols(nodes[i]);
    auto vals = pm.row_values(nodes[i]);
    count_reads(layer, cols);
    auto dst = out.row(i);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      auto src = h.row(cols[k]);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += vals[k] * src[j];
    }
  }
  return out;
}

bool HistoryStore::initialized(std::size_t layer, NodeId v) const {
  check_layer(layer);
  require(v < num_nodes_, "HistoryStore: node id out of range");
  return initialized_[layer][v] != 0;
}

bool HistoryStore::fully_initialized() const {
  return std::ranges::all_of(initialized_, [](const auto& flags) {
    return std::ranges::all_of(flags, [](unsigned char f) { return f != 0; });
  });
}

std::size_t HistoryStore::stored_values() const noexcept {
  std::size_t total = 0;
  for (const Matrix& m : layers_) total += m.size();
  return total;
}

std::size_t HistoryStore::footprint_bytes() const noexcept {
  return stored_values() * sizeof(double) + layers_.size() * num_nodes_;
}

void HistoryStore::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "HistoryStore::save: cannot open file");
  binary::write_u64(out, num_nodes_);
  binary::write_u64(out, layers_.size());
  for (const Matrix& m : layers_) binary::write_u64(out, m.cols());
  for (const Matrix& m : layers_)
    for (double v : m.values()) binary::write_f64(out, v);
}

HistoryStore HistoryStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "HistoryStore::load: cannot open file");
  const std::size_t n = binary::read_u64(in);
  const std::size_t layers = binary::read_u64(in);
  std::vector<std::size_t> dims(layers);
  for (auto& d : dims) d = binary::read_u64(in);
  HistoryStore store(n, dims);
  for (std::size_t l = 0; l < layers; ++l) {
    for (double& v : store.layers_[l].values()) v = binary::read_f64(in);
    std::ranges::fill(store.initialized_[l], 1);
  }
  return store;
}

}  // namespace vrgcn
