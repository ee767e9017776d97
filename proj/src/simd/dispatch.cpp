#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "eli/simd/kernels.hpp"

#if !defined(ELI_HAVE_AVX2)
namespace eli::simd {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace eli::simd
#endif

namespace eli::simd {
namespace {

const KernelTable& pick_default() {
  if (const char* env = std::getenv("ELI_SIMD"); env != nullptr) {
    if (std::string(env) == "scalar") return scalar_table();
  }
  if (cpu_supports(Isa::kAvx2)) return *avx2_table();
  return scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{&pick_default()};
  return table;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(__x86_64__) || defined(__i386__)
      return avx2_table() != nullptr && __builtin_cpu_supports("avx2") &&
             __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

void force(Isa isa) {
  if (!cpu_supports(isa)) {
    throw std::runtime_error("simd: ISA not available: " + std::string(isa_name(isa)));
  }
  current().store(isa == Isa::kAvx2 ? avx2_table() : &scalar_table());
}

ScopedIsa::ScopedIsa(Isa isa) : previous_(active().isa) { force(isa); }

ScopedIsa::~ScopedIsa() { force(previous_); }

}  // namespace eli::simd
