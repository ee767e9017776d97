#pragma once

#include "eli/simd/kernels.hpp"

namespace eli::simd::detail {

// Applies beta to C in place (beta == 0 clears, ignoring NaN in C).
void scale_c(const GemmArgs& g);

}  // namespace eli::simd::detail
