#pragma once

#include <cstddef>
#include <cstdint>

// Data-parallel float64 kernels behind the tensor engine. Every entry has a
// scalar reference implementation and, on x86 with AVX2+FMA, a vectorized
// variant selected once at startup. Element-wise kernels are bit-identical
// across variants (no FMA contraction in either); accumulation kernels
// (dot, sum, matmul) may differ by reassociation and are equivalence-tested
// against the scalar reference under a tight relative tolerance.
//
// Selection order: UNIPOSE_KERNELS env var ("scalar" or "avx2") if set,
// otherwise runtime CPU detection.

namespace unipose::kernels {

struct KernelTable {
  const char* name;

  // element-wise, out may alias inputs
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  void (*scale)(const double* a, double s, double* out, std::size_t n);
  void (*axpy)(double a, const double* x, double* y, std::size_t n);  // y += a*x
  void (*relu)(const double* x, double* out, std::size_t n);
  // gx += gout where x > 0
  void (*relu_backward)(const double* x, const double* gout, double* gx, std::size_t n);

  // reductions
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);

  // acc[i] = max(acc[i], row[i]); arg[i] = row_index where row[i] wins strictly
  void (*rowmax_update)(const double* row, double* acc, int32_t* arg,
                        int32_t row_index, std::size_t n);

  // row-major matmul, accumulating into c (caller clears c first)
  // nn: c[m,n] += sum_k a[m,k] * b[k,n]
  void (*matmul_nn)(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n);
  // nt: c[m,n] += sum_k a[m,k] * b[n,k]
  void (*matmul_nt)(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n);
  // tn: c[m,n] += sum_k a[k,m] * b[k,n]
  void (*matmul_tn)(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n);

  // fused decoupled-weight-decay Adam update; bc1/bc2 are the bias
  // corrections 1-beta1^t and 1-beta2^t
  void (*adamw)(double* theta, const double* grad, double* m, double* v,
                std::size_t n, double lr, double weight_decay, double beta1,
                double beta2, double bc1, double bc2, double eps);
};

const KernelTable& scalar_kernels();
bool avx2_supported();                 // compiled in AND cpu supports it
const KernelTable& avx2_kernels();     // valid only if avx2_supported()
const KernelTable& active();           // resolved once per process

}  // namespace unipose::kernels
