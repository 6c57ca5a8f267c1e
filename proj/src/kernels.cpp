#include "dsdi/kernels.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

#ifdef DSDI_HAVE_OPENMP
#include <omp.h>
#endif

namespace dsdi::kernels {

namespace {

void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelThreshold = 1 << 15;

}  // namespace

int max_threads() {
#ifdef DSDI_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// ---------------------------------------------------------------------------
// serial reference

namespace serial {

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check(a.cols() == b.rows() && out.rows() == a.rows() && out.cols() == b.cols(),
        "gemm_nn: shape mismatch");
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      out(i, j) = accumulate ? out(i, j) + s : s;
    }
  }
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols(),
        "gemm_tn: shape mismatch");
  for (std::size_t i = 0; i < a.cols(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.rows(); ++p) s += a(p, i) * b(p, j);
      out(i, j) = accumulate ? out(i, j) + s : s;
    }
  }
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check(a.cols() == b.cols() && out.rows() == a.rows() && out.cols() == b.rows(),
        "gemm_nt: shape mismatch");
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(j, p);
      out(i, j) = accumulate ? out(i, j) + s : s;
    }
  }
}

void causal_conv(const Matrix& k, const Matrix& u, Matrix& out) {
  check(k.same_shape(u) && out.same_shape(u), "causal_conv: shape mismatch");
  for (std::size_t c = 0; c < u.rows(); ++c) {
    for (std::size_t t = 0; t < u.cols(); ++t) {
      double s = 0.0;
      for (std::size_t i = 0; i <= t; ++i) s += k(c, i) * u(c, t - i);
      out(c, t) = s;
    }
  }
}

void causal_conv_backward(const Matrix& k, const Matrix& u, const Matrix& dy, Matrix& dk,
                          Matrix& du) {
  check(k.same_shape(u) && dy.same_shape(u) && dk.same_shape(u) && du.same_shape(u),
        "causal_conv_backward: shape mismatch");
  for (std::size_t c = 0; c < u.rows(); ++c) {
    for (std::size_t t = 0; t < u.cols(); ++t) {
      for (std::size_t i = 0; i <= t; ++i) {
        dk(c, i) += dy(c, t) * u(c, t - i);
        du(c, t - i) += dy(c, t) * k(c, i);
      }
    }
  }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP

namespace parallel {

namespace {

// out rows [i0, i0+RI) × cols [j0, j0+CJ) += A·B over the full depth, with the
// tile accumulated in registers.
template <int RI, int CJ>
inline void tile(const double* __restrict ap, std::size_t lda, const double* __restrict bp,
                 std::size_t ldb, double* __restrict op, std::size_t ldo, std::size_t depth) {
  double acc[RI][CJ] = {};
  for (std::size_t p = 0; p < depth; ++p) {
    const double* br = bp + p * ldb;
    for (int r = 0; r < RI; ++r) {
      const double av = ap[r * lda + p];
#pragma omp simd
      for (int c = 0; c < CJ; ++c) acc[r][c] += av * br[c];
    }
  }
  for (int r = 0; r < RI; ++r)
    for (int c = 0; c < CJ; ++c) op[r * ldo + c] += acc[r][c];
}

// Row panel [i0, i0+RI) of out += a·b, walking column tiles of 8 then 4 then 1.
template <int RI>
inline void panel(const double* ap, std::size_t lda, const double* bp, std::size_t n, double* op,
                  std::size_t depth) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) tile<RI, 8>(ap, lda, bp + j, n, op + j, n, depth);
  for (; j + 4 <= n; j += 4) tile<RI, 4>(ap, lda, bp + j, n, op + j, n, depth);
  for (; j < n; ++j) tile<RI, 1>(ap, lda, bp + j, n, op + j, n, depth);
}

// out(m×n) (+)= a(m×k)·b(k×n), all row-major and contiguous.
void nn_raw(const double* ap, const double* bp, double* op, std::size_t m, std::size_t kk,
            std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(op, op + m * n, 0.0);
  const std::ptrdiff_t panels = static_cast<std::ptrdiff_t>(m / 4);
  [[maybe_unused]] const bool big = m * n * kk >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t pi = 0; pi < panels; ++pi) {
    const std::size_t i = static_cast<std::size_t>(pi) * 4;
    panel<4>(ap + i * kk, kk, bp, n, op + i * n, kk);
  }
  for (std::size_t i = static_cast<std::size_t>(panels) * 4; i < m; ++i) {
    panel<1>(ap + i * kk, kk, bp, n, op + i * n, kk);
  }
}

std::vector<double> transpose_buffer(const Matrix& x) {
  std::vector<double> t(x.size());
  const std::size_t r = x.rows(), c = x.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = x(i, j);
  return t;
}

}  // namespace

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check(a.cols() == b.rows() && out.rows() == a.rows() && out.cols() == b.cols(),
        "gemm_nn: shape mismatch");
  nn_raw(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols(), accumulate);
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols(),
        "gemm_tn: shape mismatch");
  const std::vector<double> at = transpose_buffer(a);
  nn_raw(at.data(), b.data(), out.data(), a.cols(), a.rows(), b.cols(), accumulate);
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check(a.cols() == b.cols() && out.rows() == a.rows() && out.cols() == b.rows(),
        "gemm_nt: shape mismatch");
  const std::vector<double> bt = transpose_buffer(b);
  nn_raw(a.data(), bt.data(), out.data(), a.rows(), a.cols(), b.rows(), accumulate);
}

void causal_conv(const Matrix& k, const Matrix& u, Matrix& out) {
  check(k.same_shape(u) && out.same_shape(u), "causal_conv: shape mismatch");
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(u.rows());
  const std::size_t len = u.cols();
  [[maybe_unused]] const bool big = u.rows() * len * len / 2 >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t c = 0; c < rows; ++c) {
    const double* kr = k.data() + c * len;
    const double* ur = u.data() + c * len;
    double* yr = out.data() + c * len;
    for (std::size_t t = 0; t < len; ++t) yr[t] = 0.0;
    // scatter form: each input sample spreads along the kernel
    for (std::size_t j = 0; j < len; ++j) {
      const double uj = ur[j];
      double* yj = yr + j;
      for (std::size_t i = 0; i + j < len; ++i) yj[i] += kr[i] * uj;
    }
  }
}

void causal_conv_backward(const Matrix& k, const Matrix& u, const Matrix& dy, Matrix& dk,
                          Matrix& du) {
  check(k.same_shape(u) && dy.same_shape(u) && dk.same_shape(u) && du.same_shape(u),
        "causal_conv_backward: shape mismatch");
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(u.rows());
  const std::size_t len = u.cols();
  [[maybe_unused]] const bool big = u.rows() * len * len >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t c = 0; c < rows; ++c) {
    const double* kr = k.data() + c * len;
    const double* ur = u.data() + c * len;
    const double* gr = dy.data() + c * len;
    double* dkr = dk.data() + c * len;
    double* dur = du.data() + c * len;
    for (std::size_t j = 0; j < len; ++j) {
      const double* gj = gr + j;
      const double uj = ur[j];
      double acc = 0.0;
      for (std::size_t i = 0; i + j < len; ++i) {
        acc += gj[i] * kr[i];
        dkr[i] += gj[i] * uj;
      }
      dur[j] += acc;
    }
  }
}

}  // namespace parallel

}  // namespace dsdi::kernels
