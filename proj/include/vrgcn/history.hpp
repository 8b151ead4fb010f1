#pragma once

#include <atomic>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vrgcn/dense.hpp"
#include "vrgcn/graph.hpp"

namespace vrgcn {

/// Latest activation (CV) or no-dropout mean activation (CVD) of every node at
/// every layer. Rows that were never written read as zero.
///
/// Writes must not overlap with reads of the same layer; concurrent reads are fine.
class HistoryStore {
 public:
  HistoryStore() = default;
  HistoryStore(std::size_t num_nodes, std::vector<std::size_t> dims);
  HistoryStore(const HistoryStore& other);
  HistoryStore& operator=(const HistoryStore& other);

  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t num_nodes() const noexcept { return num_nodes_; }
  std::size_t dims(std::size_t layer) const { return layers_.at(layer).cols(); }

  Matrix read_rows(std::size_t layer, std::span<const NodeId> nodes) const;
  void write_rows(std::size_t layer, std::span<const NodeId> nodes, const Matrix& values);
  Matrix snapshot_full(std::size_t layer) const;

  /// Rows of P·H̄^(layer) for `nodes`, reading the history of every neighbour.
  Matrix aggregate(std::size_t layer, const PropagationMatrix& p,
                   std::span<const NodeId> nodes) const;

  bool initialized(std::size_t layer, NodeId v) const;
  bool fully_initialized() const;
  /// Rows read before their first write, summed over all reads so far.
  std::size_t uninitialized_reads() const noexcept { return uninitialized_reads_.load(); }
  std::size_t rows_read() const noexcept { return rows_read_.load(); }

  std::size_t epoch() const noexcept { return epoch_; }
  void advance_epoch() noexcept { ++epoch_; }

  /// Number of stored reals: Σ_l V·dims(l).
  std::size_t stored_values() const noexcept;
  /// Bytes of values plus one flag byte per (layer, node).
  std::size_t footprint_bytes() const noexcept;

  /// Little-endian: u64 V, u64 L, u64 dims[L], then each layer's rows as f64, row-major.
  void save(const std::string& path) const;
  static HistoryStore load(const std::string& path);

 private:
  void check_layer(std::size_t layer) const;
  void count_reads(std::size_t layer, std::span<const NodeId> nodes) const;

  std::size_t num_nodes_ = 0;
  std::vector<Matrix> layers_;
  std::vector<std::vector<unsigned char>> initialized_;
  std::size_t epoch_ = 0;
  mutable std::atomic<std::size_t> uninitialized_reads_{0};
  mutable std::atomic<std::size_t> rows_read_{0};
};

}  // namespace vrgcn
