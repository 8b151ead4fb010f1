#include "vrgcn/sparse.hpp"

#include <algorithm>

namespace vrgcn {

SparseMatrix::SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr,
                           std::vector<NodeId> col_idx, std::vector<double> values)
    : rows_(rows),
      cols_(cols),
      row_ptr_(std::move(row_ptr)),
      col_idx_(std::move(col_idx)),
      values_(std::move(values)) {
  require(row_ptr_.size() == rows_ + 1, "SparseMatrix: row_ptr must have rows+1 entries");
  require(row_ptr_.front() == 0, "SparseMatrix: row_ptr[0] must be 0");
  require(row_ptr_.back() == col_idx_.size() && col_idx_.size() == values_.size(),
          "SparseMatrix: row_ptr[rows] must equal nnz");
  for (std::size_t r = 0; r < rows_; ++r) {
    require(row_ptr_[r] <= row_ptr_[r + 1], "SparseMatrix: row_ptr must be non-decreasing");
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      require(col_idx_[k] < cols_, "SparseMatrix: column index out of range");
      require(k == row_ptr_[r] || col_idx_[k - 1] < col_idx_[k],
              "SparseMatrix: column indices must be strictly increasing within a row");
    }
  }
}

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                         std::vector<Triplet> triplets) {
  std::ranges::sort(triplets, [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  std::vector<std::size_t> row_ptr(rows + 1, 0);
  std::vector<NodeId> col_idx;
  std::vector<double> values;
  col_idx.reserve(triplets.size());
  values.reserve(triplets.size());
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const Triplet& t = triplets[i];
    require(t.row < rows && t.col < cols, "from_triplets: index out of range");
    if (i > 0 && triplets[i - 1].row == t.row && triplets[i - 1].col == t.col) {
      values.back() += t.value;
      continue;
    }
    col_idx.push_back(t.col);
    values.push_back(t.value);
    ++row_ptr[t.row + 1];
  }
  for (std::size_t r = 0; r < rows; ++r) row_ptr[r + 1] += row_ptr[r];
  return SparseMatrix(rows, cols, std::move(row_ptr), std::move(col_idx), std::move(values));
}

SparseMatrix SparseMatrix::identity(std::size_t n) {
  std::vector<std::size_t> row_ptr(n + 1);
  std::vector<NodeId> col_idx(n);
  for (std::size_t i = 0; i <= n; ++i) row_ptr[i] = i;
  for (std::size_t i = 0; i < n; ++i) col_idx[i] = static_cast<NodeId>(i);
  return SparseMatrix(n, n, std::move(row_ptr), std::move(col_idx), std::vector<double>(n, 1.0));
}

SparseMatrix SparseMatrix::from_dense(const Matrix& m) {
  std::vector<Triplet> t;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      if (m(r, c) != 0.0) t.push_back({static_cast<NodeId>(r), static_cast<NodeId>(c), m(r, c)});
  return from_triplets(m.rows(), m.cols(), std::move(t));
}

double SparseMatrix::at(std::size_t r, std::size_t c) const {
  require(r < rows_ && c < cols_, "SparseMatrix::at: index out of range");
  auto cols = row_cols(r);
  auto it = std::ranges::lower_bound(cols, static_cast<NodeId>(c));
  if (it == cols.end() || *it != c) return 0.0;
  return values_[row_ptr_[r] + static_cast<std::size_t>(it - cols.begin())];
}

Matrix SparseMatrix::to_dense() const {
  Matrix d(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) d(r, col_idx_[k]) = values_[k];
  return d;
}

SparseMatrix SparseMatrix::transpose() const {
  std::vector<std::size_t> row_ptr(cols_ + 1, 0);
  for (NodeId c : col_idx_) ++row_ptr[c + 1];
  for (std::size_t c = 0; c < cols_; ++c) row_ptr[c + 1] += row_ptr[c];
  std::vector<NodeId> col_idx(nnz());
  std::vector<double> values(nnz());
  std::vector<std::size_t> cursor(row_ptr.begin(), row_ptr.end() - 1);
  // Rows are visited in ascending order, so each transposed row stays sorted.
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      std::size_t dst = cursor[col_idx_[k]]++;
      col_idx[dst] = static_cast<NodeId>(r);
      values[dst] = values_[k];
    }
  }
  return SparseMatrix(cols_, rows_, std::move(row_ptr), std::move(col_idx), std::move(values));
}

}  // namespace vrgcn
