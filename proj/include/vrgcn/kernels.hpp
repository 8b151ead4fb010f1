#pragma once

// Dense and sparse products used by every forward/backward pass.
//
// `vrgcn::kernels::*` are the OpenMP kernels. `vrgcn::kernels::serial::*` are
// the single-threaded reference versions kept for testing and benchmarking.
// Both partition work by output row and accumulate each row in the same order,
// so their results are bit-identical for any thread count.

#include "vrgcn/dense.hpp"
#include "vrgcn/sparse.hpp"

namespace vrgcn::kernels {

/// a * b
Matrix gemm(const Matrix& a, const Matrix& b);
/// transpose(a) * b
Matrix gemm_tn(const Matrix& a, const Matrix& b);
/// a * transpose(b)
Matrix gemm_nt(const Matrix& a, const Matrix& b);
/// s * h, row-major with ascending column index inside each row.
Matrix spmm(const SparseMatrix& s, const Matrix& h);

/// Applies VRGCN_THREADS (if set) as the OpenMP thread cap.
void configure_threads_from_env();
int max_threads();

namespace serial {
Matrix gemm(const Matrix& a, const Matrix& b);
Matrix gemm_tn(const Matrix& a, const Matrix& b);
Matrix gemm_nt(const Matrix& a, const Matrix& b);
Matrix spmm(const SparseMatrix& s, const Matrix& h);
}  // namespace serial

}  // namespace vrgcn::kernels
