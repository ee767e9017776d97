#pragma once

// Dense double-precision kernels with a scalar reference implementation and
// an AVX2/FMA variant. The active table is picked once at startup from the
// CPU feature bits; ELI_SIMD=scalar forces the reference path.

#include <cstddef>
#include <string_view>

namespace eli::simd {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);

// Row-major C = alpha * op(A) * op(B) + beta * C, with op(A) of shape m x k
// and op(B) of shape k x n. lda/ldb/ldc are row strides of the stored
// matrices (before transposition).
struct GemmArgs {
  bool trans_a = false;
  bool trans_b = false;
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  double alpha = 1.0;
  const double* a = nullptr;
  std::size_t lda = 0;
  const double* b = nullptr;
  std::size_t ldb = 0;
  double beta = 0.0;
  double* c = nullptr;
  std::size_t ldc = 0;
};

struct KernelTable {
  Isa isa;
  void (*gemm)(const GemmArgs& args);
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += a * x
  void (*axpy)(std::size_t n, double a, const double* x, double* y);
  // out = x + y, out = x * y (out may alias x or y)
  void (*add)(std::size_t n, const double* x, const double* y, double* out);
  void (*mul)(std::size_t n, const double* x, const double* y, double* out);
  // out = max(x, 0)
  void (*relu)(std::size_t n, const double* x, double* out);
  // g_in += g_out where x > 0
  void (*relu_backward)(std::size_t n, const double* x, const double* g_out,
                        double* g_in);
};

const KernelTable& scalar_table();
// Null when the AVX2 variant was not compiled in.
const KernelTable* avx2_table();

bool cpu_supports(Isa isa);

// Table used by every op. Selected on first use.
const KernelTable& active();

// Overrides the active table (tests and benchmarks). Throws if the CPU or
// build does not support the requested ISA.
void force(Isa isa);

class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa);
  ~ScopedIsa();
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

}  // namespace eli::simd
