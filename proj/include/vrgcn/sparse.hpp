#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vrgcn/dense.hpp"
#include "vrgcn/types.hpp"

namespace vrgcn {

struct Triplet {
  NodeId row;
  NodeId col;
  double value;
};

/// Compressed sparse row matrix. Column indices are strictly increasing
/// within each row; the constructor rejects anything else.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr,
               std::vector<NodeId> col_idx, std::vector<double> values);

  /// Duplicate (row, col) pairs are summed.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                    std::vector<Triplet> triplets);
  static SparseMatrix identity(std::size_t n);
  static SparseMatrix from_dense(const Matrix& m);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return values_.size(); }

  std::span<const std::size_t> row_ptr() const noexcept { return row_ptr_; }
  std::span<const NodeId> col_idx() const noexcept { return col_idx_; }
  std::span<const double> values() const noexcept { return values_; }

  std::span<const NodeId> row_cols(std::size_t r) const noexcept {
    return {col_idx_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }
  std::span<const double> row_values(std::size_t r) const noexcept {
    return {values_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }
  std::size_t row_nnz(std::size_t r) const noexcept { return row_ptr_[r + 1] - row_ptr_[r]; }

  /// Entry (r, c), zero when not stored.
  double at(std::size_t r, std::size_t c) const;

  Matrix to_dense() const;
  SparseMatrix transpose() const;

  /// Same pattern, values mapped through f(row, col, value).
  template <typename F>
  SparseMatrix map_values(F&& f) const {
    SparseMatrix out = *this;
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
        out.values_[k] = f(r, col_idx_[k], values_[k]);
    return out;
  }

  bool operator==(const SparseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<NodeId> col_idx_;
  std::vector<double> values_;
};

}  // namespace vrgcn
