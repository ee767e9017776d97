#include "eli/simd/kernels.hpp"
#include "kernels_internal.hpp"

namespace eli::simd {
namespace {

void gemm_scalar(const GemmArgs& g) {
  detail::scale_c(g);
  if (g.alpha == 0.0 || g.k == 0) return;
  for (std::size_t i = 0; i < g.m; ++i) {
    double* crow = g.c + i * g.ldc;
    for (std::size_t p = 0; p < g.k; ++p) {
      const double a = g.alpha * (g.trans_a ? g.a[p * g.lda + i] : g.a[i * g.lda + p]);
      if (a == 0.0) continue;
      if (g.trans_b) {
        for (std::size_t j = 0; j < g.n; ++j) crow[j] += a * g.b[j * g.ldb + p];
      } else {
        const double* brow = g.b + p * g.ldb;
        for (std::size_t j = 0; j < g.n; ++j) crow[j] += a * brow[j];
      }
    }
  }
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_scalar(std::size_t n, double a, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void add_scalar(std::size_t n, const double* x, const double* y, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

void mul_scalar(std::size_t n, const double* x, const double* y, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void relu_scalar(std::size_t n, const double* x, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_scalar(std::size_t n, const double* x, const double* g_out,
                          double* g_in) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] > 0.0) g_in[i] += g_out[i];
  }
}

}  // namespace

namespace detail {

void scale_c(const GemmArgs& g) {
  if (g.beta == 1.0) return;
  for (std::size_t i = 0; i < g.m; ++i) {
    double* crow = g.c + i * g.ldc;
    if (g.beta == 0.0) {
      for (std::size_t j = 0; j < g.n; ++j) crow[j] = 0.0;
    } else {
      for (std::size_t j = 0; j < g.n; ++j) crow[j] *= g.beta;
    }
  }
}

}  // namespace detail

const KernelTable& scalar_table() {
  static const KernelTable table{
      Isa::kScalar, gemm_scalar, dot_scalar,  axpy_scalar,
      add_scalar,   mul_scalar,  relu_scalar, relu_backward_scalar,
  };
  return table;
}

}  // namespace eli::simd
