#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "eli/simd/kernels.hpp"

namespace {

using eli::simd::GemmArgs;
using eli::simd::Isa;

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

class SimdEquivalence : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!eli::simd::cpu_supports(Isa::kAvx2)) GTEST_SKIP() << "AVX2 not available";
  }
  const eli::simd::KernelTable& ref = eli::simd::scalar_table();
  const eli::simd::KernelTable& vec = *eli::simd::avx2_table();
};

TEST_F(SimdEquivalence, GemmMatchesReferenceAcrossShapesAndTransposes) {
  std::mt19937_64 rng(7);
  const std::size_t sizes[][3] = {{1, 1, 1},   {6, 8, 5},    {7, 9, 3},     {13, 17, 300},
                                  {97, 33, 5}, {4, 1024, 48}, {1, 256, 120}, {100, 530, 260}};
  for (const auto& s : sizes) {
    const std::size_t m = s[0], n = s[1], k = s[2];
    for (int mode = 0; mode < 4; ++mode) {
      const bool ta = mode & 1, tb = mode & 2;
      for (double beta : {0.0, 1.0, 0.5}) {
        const auto a = random_values(m * k, rng);
        const auto b = random_values(k * n, rng);
        const auto c0 = random_values(m * n, rng);
        auto c_ref = c0;
        auto c_vec = c0;
        GemmArgs g;
        g.trans_a = ta;
        g.trans_b = tb;
        g.m = m;
        g.n = n;
        g.k = k;
        g.alpha = 0.75;
        g.a = a.data();
        g.lda = ta ? m : k;
        g.b = b.data();
        g.ldb = tb ? k : n;
        g.beta = beta;
        g.ldc = n;
        g.c = c_ref.data();
        ref.gemm(g);
        g.c = c_vec.data();
        vec.gemm(g);
        double worst = 0.0;
        for (std::size_t i = 0; i < m * n; ++i) worst = std::max(worst, std::abs(c_ref[i] - c_vec[i]));
        EXPECT_LT(worst, 1e-12 * static_cast<double>(k + 1))
            << m << "x" << n << "x" << k << " ta=" << ta << " tb=" << tb << " beta=" << beta;
      }
    }
  }
}

TEST_F(SimdEquivalence, GemmRespectsLeadingDimensions) {
  std::mt19937_64 rng(11);
  const std::size_t m = 9, n = 10, k = 7, ld_pad = 3;
  const auto a = random_values(m * (k + ld_pad), rng);
  const auto b = random_values(k * (n + ld_pad), rng);
  std::vector<double> c_ref(m * (n + ld_pad), 5.0), c_vec = c_ref;
  GemmArgs g;
  g.m = m;
  g.n = n;
  g.k = k;
  g.a = a.data();
  g.lda = k + ld_pad;
  g.b = b.data();
  g.ldb = n + ld_pad;
  g.ldc = n + ld_pad;
  g.c = c_ref.data();
  ref.gemm(g);
  g.c = c_vec.data();
  vec.gemm(g);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n + ld_pad; ++j) {
      const std::size_t idx = i * (n + ld_pad) + j;
      if (j >= n) {
        EXPECT_EQ(c_vec[idx], 5.0) << "padding column overwritten";
      } else {
        EXPECT_NEAR(c_ref[idx], c_vec[idx], 1e-12);
      }
    }
  }
}

TEST_F(SimdEquivalence, VectorKernelsMatchReference) {
  std::mt19937_64 rng(3);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 31u, 1000u}) {
    const auto x = random_values(n, rng);
    const auto y = random_values(n, rng);
    EXPECT_NEAR(ref.dot(x.data(), y.data(), n), vec.dot(x.data(), y.data(), n), 1e-12);

    auto y_ref = y, y_vec = y;
    ref.axpy(n, -0.3, x.data(), y_ref.data());
    vec.axpy(n, -0.3, x.data(), y_vec.data());
    std::vector<double> o_ref(n), o_vec(n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y_ref[i], y_vec[i], 1e-15);

    ref.add(n, x.data(), y.data(), o_ref.data());
    vec.add(n, x.data(), y.data(), o_vec.data());
    EXPECT_EQ(o_ref, o_vec);
    ref.mul(n, x.data(), y.data(), o_ref.data());
    vec.mul(n, x.data(), y.data(), o_vec.data());
    EXPECT_EQ(o_ref, o_vec);
    ref.relu(n, x.data(), o_ref.data());
    vec.relu(n, x.data(), o_vec.data());
    EXPECT_EQ(o_ref, o_vec);

    auto g_ref = y, g_vec = y;
    ref.relu_backward(n, x.data(), y.data(), g_ref.data());
    vec.relu_backward(n, x.data(), y.data(), g_vec.data());
    EXPECT_EQ(g_ref, g_vec);
  }
}

TEST(SimdDispatch, ForceAndRestore) {
  const Isa before = eli::simd::active().isa;
  {
    eli::simd::ScopedIsa scoped(Isa::kScalar);
    EXPECT_EQ(eli::simd::active().isa, Isa::kScalar);
  }
  EXPECT_EQ(eli::simd::active().isa, before);
  EXPECT_EQ(eli::simd::isa_name(Isa::kAvx2), "avx2");
}

TEST(SimdDispatch, ScalarGemmHandlesZeroSizes) {
  std::vector<double> c(4, 2.0);
  GemmArgs g;
  g.m = 2;
  g.n = 2;
  g.k = 0;
  g.c = c.data();
  g.ldc = 2;
  g.beta = 0.0;
  eli::simd::scalar_table().gemm(g);
  for (double v : c) EXPECT_EQ(v, 0.0);
}

}  // namespace
