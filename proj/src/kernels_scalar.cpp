#include "eventlm/kernels.hpp"

#include <cmath>
#include <cstring>

namespace eventlm::kernels {
namespace {

template <class T>
void add_ref(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <class T>
void sub_ref(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <class T>
void mul_ref(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <class T>
void scale_ref(const T* a, T alpha, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * alpha;
}

template <class T>
void axpy_ref(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// i,kk,j loop order: every C element accumulates over kk ascending. The SIMD
// variants keep this order, which is what makes them bit-exact.
template <class T>
void matmul_nn_ref(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  add_flops(2ull * m * k * n);
  std::memset(c, 0, m * n * sizeof(T));
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void matmul_nt_ref(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  add_flops(2ull * m * k * n);
  std::memset(c, 0, m * n * sizeof(T));
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + kk];
    }
  }
}

template <class T>
void matmul_tn_ref(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  add_flops(2ull * m * k * n);
  std::memset(c, 0, m * n * sizeof(T));
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T* arow = a + kk * m;
    const T* brow = b + kk * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
bool all_finite_ref(const T* a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(a[i])) return false;
  }
  return true;
}

template <class T>
constexpr Kernels<T> make_scalar() {
  return Kernels<T>{add_ref<T>,       sub_ref<T>,       mul_ref<T>,
                    scale_ref<T>,     axpy_ref<T>,      matmul_nn_ref<T>,
                    matmul_nt_ref<T>, matmul_tn_ref<T>, all_finite_ref<T>};
}

}  // namespace

namespace scalar {
const Kernels<float> f32 = make_scalar<float>();
const Kernels<double> f64 = make_scalar<double>();
}  // namespace scalar

}  // namespace eventlm::kernels
