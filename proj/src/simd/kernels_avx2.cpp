// Compiled with -mavx2 -mfma; only reached through the dispatch table after
// a runtime CPU check.

#include <immintrin.h>

#include <algorithm>
#include <vector>

#include "eli/simd/kernels.hpp"
#include "kernels_internal.hpp"

namespace eli::simd {
namespace {

constexpr std::size_t kMr = 6;
constexpr std::size_t kNr = 8;
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 96;
constexpr std::size_t kNc = 512;

struct PackBuffers {
  std::vector<double> a;
  std::vector<double> b;
};

PackBuffers& pack_buffers() {
  thread_local PackBuffers buffers;
  return buffers;
}

inline double op_a(const GemmArgs& g, std::size_t i, std::size_t p) {
  return g.trans_a ? g.a[p * g.lda + i] : g.a[i * g.lda + p];
}

// Packs op(B)[pc:pc+kc, jc:jc+nc] into column panels of width kNr, zero
// padded on the right edge.
void pack_b(const GemmArgs& g, std::size_t pc, std::size_t kc, std::size_t jc,
            std::size_t nc, double* out) {
  for (std::size_t jp = 0; jp < nc; jp += kNr) {
    const std::size_t width = std::min(kNr, nc - jp);
    for (std::size_t p = 0; p < kc; ++p) {
      double* dst = out + p * kNr;
      if (!g.trans_b) {
        const double* src = g.b + (pc + p) * g.ldb + jc + jp;
        if (width == kNr) {
          _mm256_storeu_pd(dst, _mm256_loadu_pd(src));
          _mm256_storeu_pd(dst + 4, _mm256_loadu_pd(src + 4));
          continue;
        }
        for (std::size_t j = 0; j < width; ++j) dst[j] = src[j];
      } else {
        for (std::size_t j = 0; j < width; ++j) {
          dst[j] = g.b[(jc + jp + j) * g.ldb + pc + p];
        }
      }
      for (std::size_t j = width; j < kNr; ++j) dst[j] = 0.0;
    }
    out += kc * kNr;
  }
}

// Packs alpha * op(A)[ic:ic+mc, pc:pc+kc] into row panels of height kMr.
void pack_a(const GemmArgs& g, std::size_t ic, std::size_t mc, std::size_t pc,
            std::size_t kc, double* out) {
  for (std::size_t ip = 0; ip < mc; ip += kMr) {
    const std::size_t height = std::min(kMr, mc - ip);
    for (std::size_t p = 0; p < kc; ++p) {
      double* dst = out + p * kMr;
      for (std::size_t i = 0; i < height; ++i) {
        dst[i] = g.alpha * op_a(g, ic + ip + i, pc + p);
      }
      for (std::size_t i = height; i < kMr; ++i) dst[i] = 0.0;
    }
    out += kc * kMr;
  }
}

void micro_kernel(std::size_t kc, const double* ap, const double* bp, double* c,
                  std::size_t ldc, std::size_t mr, std::size_t nr) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  __m256d c40 = _mm256_setzero_pd(), c41 = _mm256_setzero_pd();
  __m256d c50 = _mm256_setzero_pd(), c51 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_loadu_pd(bp);
    const __m256d b1 = _mm256_loadu_pd(bp + 4);
    __m256d a = _mm256_broadcast_sd(ap);
    c00 = _mm256_fmadd_pd(a, b0, c00);
    c01 = _mm256_fmadd_pd(a, b1, c01);
    a = _mm256_broadcast_sd(ap + 1);
    c10 = _mm256_fmadd_pd(a, b0, c10);
    c11 = _mm256_fmadd_pd(a, b1, c11);
    a = _mm256_broadcast_sd(ap + 2);
    c20 = _mm256_fmadd_pd(a, b0, c20);
    c21 = _mm256_fmadd_pd(a, b1, c21);
    a = _mm256_broadcast_sd(ap + 3);
    c30 = _mm256_fmadd_pd(a, b0, c30);
    c31 = _mm256_fmadd_pd(a, b1, c31);
    a = _mm256_broadcast_sd(ap + 4);
    c40 = _mm256_fmadd_pd(a, b0, c40);
    c41 = _mm256_fmadd_pd(a, b1, c41);
    a = _mm256_broadcast_sd(ap + 5);
    c50 = _mm256_fmadd_pd(a, b0, c50);
    c51 = _mm256_fmadd_pd(a, b1, c51);
    ap += kMr;
    bp += kNr;
  }
  const __m256d rows[kMr][2] = {{c00, c01}, {c10, c11}, {c20, c21},
                                {c30, c31}, {c40, c41}, {c50, c51}};
  if (nr == kNr) {
    for (std::size_t r = 0; r < mr; ++r) {
      double* crow = c + r * ldc;
      _mm256_storeu_pd(crow, _mm256_add_pd(_mm256_loadu_pd(crow), rows[r][0]));
      _mm256_storeu_pd(crow + 4, _mm256_add_pd(_mm256_loadu_pd(crow + 4), rows[r][1]));
    }
    return;
  }
  alignas(32) double tile[kNr];
  for (std::size_t r = 0; r < mr; ++r) {
    _mm256_store_pd(tile, rows[r][0]);
    _mm256_store_pd(tile + 4, rows[r][1]);
    double* crow = c + r * ldc;
    for (std::size_t j = 0; j < nr; ++j) crow[j] += tile[j];
  }
}

double dot_avx2(const double* x, const double* y, std::size_t n);
void axpy_avx2(std::size_t n, double a, const double* x, double* y);

// Thin shapes (few filters or a short inner extent, as in small convolutions)
// waste most of a packed 6x8 tile; stream rows of B instead.
constexpr std::size_t kThin = 8;

bool thin_rows(const GemmArgs& g) { return !g.trans_b && (g.m <= kThin || g.k <= kThin); }
bool thin_dots(const GemmArgs& g) { return !g.trans_a && g.trans_b && g.m <= kThin; }

void gemm_rows(const GemmArgs& g) {
  for (std::size_t i = 0; i < g.m; ++i) {
    double* crow = g.c + i * g.ldc;
    for (std::size_t p = 0; p < g.k; ++p) {
      const double a = g.alpha * op_a(g, i, p);
      if (a != 0.0) axpy_avx2(g.n, a, g.b + p * g.ldb, crow);
    }
  }
}

void gemm_dots(const GemmArgs& g) {
  for (std::size_t i = 0; i < g.m; ++i) {
    const double* arow = g.a + i * g.lda;
    double* crow = g.c + i * g.ldc;
    for (std::size_t j = 0; j < g.n; ++j) crow[j] += g.alpha * dot_avx2(arow, g.b + j * g.ldb, g.k);
  }
}

void gemm_avx2(const GemmArgs& g) {
  detail::scale_c(g);
  if (g.alpha == 0.0 || g.k == 0 || g.m == 0 || g.n == 0) return;
  if (thin_rows(g)) return gemm_rows(g);
  if (thin_dots(g)) return gemm_dots(g);
  PackBuffers& buf = pack_buffers();
  const std::size_t nc_max = std::min(kNc, (g.n + kNr - 1) / kNr * kNr);
  const std::size_t mc_max = std::min(kMc, (g.m + kMr - 1) / kMr * kMr);
  const std::size_t kc_max = std::min(kKc, g.k);
  buf.b.resize(kc_max * nc_max);
  buf.a.resize(kc_max * mc_max);
  for (std::size_t jc = 0; jc < g.n; jc += kNc) {
    const std::size_t nc = std::min(kNc, g.n - jc);
    for (std::size_t pc = 0; pc < g.k; pc += kKc) {
      const std::size_t kc = std::min(kKc, g.k - pc);
      pack_b(g, pc, kc, jc, nc, buf.b.data());
      for (std::size_t ic = 0; ic < g.m; ic += kMc) {
        const std::size_t mc = std::min(kMc, g.m - ic);
        pack_a(g, ic, mc, pc, kc, buf.a.data());
        for (std::size_t jr = 0; jr < nc; jr += kNr) {
          const std::size_t nr = std::min(kNr, nc - jr);
          const double* bp = buf.b.data() + (jr / kNr) * kc * kNr;
          for (std::size_t ir = 0; ir < mc; ir += kMr) {
            const std::size_t mr = std::min(kMr, mc - ir);
            const double* ap = buf.a.data() + (ir / kMr) * kc * kMr;
            micro_kernel(kc, ap, bp, g.c + (ic + ir) * g.ldc + jc + jr, g.ldc, mr, nr);
          }
        }
      }
    }
  }
}

double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_avx2(std::size_t n, double a, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void add_avx2(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void mul_avx2(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void relu_avx2(std::size_t n, const double* x, double* out) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    // masked copy, matching the scalar x > 0 test for -0.0 and NaN
    _mm256_storeu_pd(out + i, _mm256_and_pd(v, _mm256_cmp_pd(v, zero, _CMP_GT_OQ)));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_avx2(std::size_t n, const double* x, const double* g_out,
                        double* g_in) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d g = _mm256_and_pd(_mm256_loadu_pd(g_out + i), mask);
    _mm256_storeu_pd(g_in + i, _mm256_add_pd(_mm256_loadu_pd(g_in + i), g));
  }
  for (; i < n; ++i) {
    if (x[i] > 0.0) g_in[i] += g_out[i];
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{
      Isa::kAvx2, gemm_avx2, dot_avx2,  axpy_avx2,
      add_avx2,   mul_avx2,  relu_avx2, relu_backward_avx2,
  };
  return &table;
}

}  // namespace eli::simd
