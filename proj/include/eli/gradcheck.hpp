#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace eli {

struct CheckResult {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool skipped = false;

  bool pass() const { return skipped || error <= tolerance; }
};

struct FdSuiteResult {
  std::size_t cases = 0;
  double worst = 0.0;        ///< max abs error over every case
  std::string worst_case;
  std::vector<CheckResult> per_kind;  ///< worst error per layer kind
};

/// Central finite differences (step eps) against reverse-mode Jacobians
/// over `cases` seeded cases cycling through every layer kind and the end
/// to end policy step. Inputs of ReLU layers are kept off the kink.
FdSuiteResult run_fd_suite(std::uint64_t seed, std::size_t cases, double eps = 1e-5,
                           double tolerance = 1e-5);

/// Oracle suite: SIMD kernels against the scalar reference, autodiff
/// against central differences, and the Jacobian identities against
/// direct autodiff. Deterministic in seed.
std::vector<CheckResult> run_gradcheck(std::uint64_t seed);

}  // namespace eli
