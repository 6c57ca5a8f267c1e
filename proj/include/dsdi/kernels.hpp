#pragma once

#include "dsdi/tensor.hpp"

// Dense kernels used by every network layer. Two implementations share one
// contract: `serial` is a plain loop nest kept as the reference for tests and
// benchmarks, `parallel` is cache-ordered and OpenMP-parallel over output rows.
// Results agree to rounding (the parallel versions tile the reduction
// differently).
//
// All functions accumulate into `out` when `accumulate` is true and overwrite
// it otherwise. `out` must already have the result shape.

namespace dsdi::kernels {

namespace serial {
/// out(m×n) = a(m×k) · b(k×n)
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
/// out(m×n) = a(k×m)ᵀ · b(k×n)
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
/// out(m×n) = a(m×k) · b(n×k)ᵀ
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
/// Row-wise causal convolution: out(c,t) = Σ_{i≤t} k(c,i)·u(c,t−i).
void causal_conv(const Matrix& k, const Matrix& u, Matrix& out);
/// Gradients of causal_conv: dk(c,i) += Σ_t dy(c,t)·u(c,t−i); du(c,j) += Σ_t dy(c,t)·k(c,t−j).
void causal_conv_backward(const Matrix& k, const Matrix& u, const Matrix& dy, Matrix& dk,
                          Matrix& du);
}  // namespace serial

namespace parallel {
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
void causal_conv(const Matrix& k, const Matrix& u, Matrix& out);
void causal_conv_backward(const Matrix& k, const Matrix& u, const Matrix& dy, Matrix& dk,
                          Matrix& du);
}  // namespace parallel

using parallel::causal_conv;
using parallel::causal_conv_backward;
using parallel::gemm_nn;
using parallel::gemm_nt;
using parallel::gemm_tn;

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace dsdi::kernels
