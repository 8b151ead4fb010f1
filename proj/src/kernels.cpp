#include "vrgcn/kernels.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vrgcn::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 14;

inline void gemm_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  auto out = c.row(i);
  for (std::size_t k = 0; k < a.cols(); ++k) {
    const double aik = a(i, k);
    if (aik == 0.0) continue;
    auto brow = b.row(k);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += aik * brow[j];
  }
}

inline void gemm_tn_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  auto out = c.row(i);
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double aki = a(k, i);
    if (aki == 0.0) continue;
    auto brow = b.row(k);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += aki * brow[j];
  }
}

inline void gemm_nt_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  auto arow = a.row(i);
  for (std::size_t j = 0; j < b.rows(); ++j) {
    auto brow = b.row(j);
    double acc = 0.0;
    for (std::size_t k = 0; k < arow.size(); ++k) acc += arow[k] * brow[k];
    c(i, j) = acc;
  }
}

inline void spmm_row(const SparseMatrix& s, const Matrix& h, Matrix& out, std::size_t r) {
  auto dst = out.row(r);
  auto cols = s.row_cols(r);
  auto vals = s.row_values(r);
  for (std::size_t k = 0; k < cols.size(); ++k) {
    auto src = h.row(cols[k]);
    const double w = vals[k];
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += w * src[j];
  }
}

void check_gemm(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "gemm: inner dimensions differ");
}
void check_gemm_tn(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "gemm_tn: row counts differ");
}
void check_gemm_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "gemm_nt: column counts differ");
}
void check_spmm(const SparseMatrix& s, const Matrix& h) {
  require(s.cols() == h.rows(), "spmm: sparse cols must equal dense rows");
}

template <typename RowFn>
void parallel_rows(std::size_t rows, std::size_t work, RowFn&& fn) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (work >= kParallelWork)
  for (std::ptrdiff_t i = 0; i < n; ++i) fn(static_cast<std::size_t>(i));
}

}  // namespace

Matrix gemm(const Matrix& a, const Matrix& b) {
  check_gemm(a, b);
  Matrix c(a.rows(), b.cols());
  parallel_rows(a.rows(), a.rows() * a.cols() * b.cols(),
                [&](std::size_t i) { gemm_row(a, b, c, i); });
  return c;
}

Matrix gemm_tn(const Matrix& a, const Matrix& b) {
  check_gemm_tn(a, b);
  Matrix c(a.cols(), b.cols());
  parallel_rows(a.cols(), a.rows() * a.cols() * b.cols(),
                [&](std::size_t i) { gemm_tn_row(a, b, c, i); });
  return c;
}

Matrix gemm_nt(const Matrix& a, const Matrix& b) {
  check_gemm_nt(a, b);
  Matrix c(a.rows(), b.rows());
  parallel_rows(a.rows(), a.rows() * a.cols() * b.rows(),
                [&](std::size_t i) { gemm_nt_row(a, b, c, i); });
  return c;
}

Matrix spmm(const SparseMatrix& s, const Matrix& h) {
  check_spmm(s, h);
  Matrix out(s.rows(), h.cols());
  parallel_rows(s.rows(), s.nnz() * h.cols(), [&](std::size_t r) { spmm_row(s, h, out, r); });
  return out;
}

void configure_threads_from_env() {
#ifdef _OPENMP
  if (const char* env = std::getenv("VRGCN_THREADS")) {
    try {
      int n = std::stoi(env);
      if (n >= 1) omp_set_num_threads(n);
    } catch (const std::exception&) {
      throw InputError("VRGCN_THREADS must be a positive integer");
    }
  }
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

Matrix gemm(const Matrix& a, const Matrix& b) {
  check_gemm(a, b);
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) gemm_row(a, b, c, i);
  return c;
}

Matrix gemm_tn(const Matrix& a, const Matrix& b) {
  check_gemm_tn(a, b);
  Matrix c(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) gemm_tn_row(a, b, c, i);
  return c;
}

Matrix gemm_nt(const Matrix& a, const Matrix& b) {
  check_gemm_nt(a, b);
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) gemm_nt_row(a, b, c, i);
  return c;
}

Matrix spmm(const SparseMatrix& s, const Matrix& h) {
  check_spmm(s, h);
  Matrix out(s.rows(), h.cols());
  for (std::size_t r = 0; r < s.rows(); ++r) spmm_row(s, h, out, r);
  return out;
}

}  // namespace serial
}  // namespace vrgcn::kernels
