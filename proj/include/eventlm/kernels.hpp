#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

// Data-parallel inner loops used by the tensor library. Each kernel has a
// scalar reference implementation and, on x86-64 machines with AVX2, a
// vectorized variant selected once at startup. SIMD variants preserve the
// scalar accumulation order, so results are bit-identical across backends
// (the build disables FP contraction to keep the scalar side honest).
//
// Matmul layout convention: row-major, C overwritten.
//   matmul_nn: C[m×n] = A[m×k] · B[k×n]
//   matmul_nt: C[m×n] = A[m×k] · B[n×k]^T
//   matmul_tn: C[m×n] = A[k×m]^T · B[k×n]
namespace eventlm::kernels {

enum class Backend { Scalar, Avx2 };

template <class T>
struct Kernels {
  void (*add)(const T* a, const T* b, T* out, std::size_t n);
  void (*sub)(const T* a, const T* b, T* out, std::size_t n);
  void (*mul)(const T* a, const T* b, T* out, std::size_t n);
  void (*scale)(const T* a, T alpha, T* out, std::size_t n);
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);  // y += alpha*x
  void (*matmul_nn)(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);
  void (*matmul_nt)(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);
  void (*matmul_tn)(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);
  bool (*all_finite)(const T* a, std::size_t n);
};

namespace scalar {
extern const Kernels<float> f32;
extern const Kernels<double> f64;
}  // namespace scalar

namespace avx2 {
// Null-op table on platforms where the AVX2 TU is not compiled in.
extern const Kernels<float> f32;
extern const Kernels<double> f64;
extern const bool compiled;
}  // namespace avx2

// Active backend. Selected once from CPU capabilities (overridable with the
// EVENTLM_KERNELS env var: "scalar" or "avx2"); set_backend is for tests.
Backend active_backend();
void set_backend(Backend b);
std::string_view backend_name();
bool avx2_supported();

const Kernels<float>& f32();
const Kernels<double>& f64();

template <class T>
const Kernels<T>& get();
template <>
inline const Kernels<float>& get<float>() { return f32(); }
template <>
inline const Kernels<double>& get<double>() { return f64(); }

// Cheap instrumentation: every matmul_* call adds 2*m*k*n. The latency bench
// reads deltas of this counter; it is not a timing-path cost.
std::uint64_t flop_count();
void reset_flop_count();
void add_flops(std::uint64_t n);

}  // namespace eventlm::kernels
