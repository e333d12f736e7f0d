#include "unipose/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace unipose::kernels {

#ifdef UNIPOSE_HAVE_AVX2
bool avx2_supported() {
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#else
bool avx2_supported() { return false; }
const KernelTable& avx2_kernels() { return scalar_kernels(); }
#endif

namespace {

const KernelTable& resolve() {
  if (const char* env = std::getenv("UNIPOSE_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return scalar_kernels();
    if (std::strcmp(env, "avx2") == 0) {
      if (!avx2_supported())
        throw std::runtime_error("UNIPOSE_KERNELS=avx2 but AVX2 is unavailable");
      return avx2_kernels();
    }
    throw std::runtime_error("UNIPOSE_KERNELS must be 'scalar' or 'avx2'");
  }
  return avx2_supported() ? avx2_kernels() : scalar_kernels();
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& table = resolve();
  return table;
}

}  // namespace unipose::kernels
