#include "eventlm/kernels.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

#include <cstring>
#include <limits>
#include <vector>

// AVX2 variants. Every kernel walks the data in the same order as the scalar
// reference and uses separate mul/add (no FMA), so outputs are bit-identical
// to the scalar backend. Equivalence tests assert exact equality.
namespace eventlm::kernels {
namespace {

// ---- float, 8 lanes ----

void add_f32(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_f32(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_f32(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_f32(const float* a, float alpha, float* out, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), va));
  for (; i < n; ++i) out[i] = a[i] * alpha;
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 prod = _mm256_mul_ps(va, _mm256_loadu_ps(x + i));
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// ---- double, 4 lanes ----

void add_f64(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_f64(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_f64(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_f64(const double* a, double alpha, double* out, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), va));
  for (; i < n; ++i) out[i] = a[i] * alpha;
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// ---- matmul: vectorized over j, accumulation stays in kk order ----

void matmul_nn_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  add_flops(2ull * m * k * n);
  std::memset(c, 0, m * n * sizeof(float));
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const float av = arow[kk];
      const float* brow = b + kk * n;
      const __m256 vav = _mm256_set1_ps(av);
      std::size_t j = 0;
      for (; j + 8 <= n; j += 8) {
        __m256 prod = _mm256_mul_ps(vav, _mm256_loadu_ps(brow + j));
        _mm256_storeu_ps(crow + j, _mm256_add_ps(_mm256_loadu_ps(crow + j), prod));
      }
      for (; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nn_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  add_flops(2ull * m * k * n);
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * n;
      const __m256d vav = _mm256_set1_pd(av);
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        __m256d prod = _mm256_mul_pd(vav, _mm256_loadu_pd(brow + j));
        _mm256_storeu_pd(crow + j, _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
      }
      for (; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// nt: transpose B into scratch, then run the nn loop body. Per-element
// accumulation is over kk ascending either way, matching the scalar kernel.
template <class T>
std::vector<T>& nt_scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

template <class T, class NnFn>
void matmul_nt_via_transpose(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                             std::size_t n, NnFn nn) {
  auto& bt = nt_scratch<T>();
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t kk = 0; kk < k; ++kk) bt[kk * n + j] = b[j * k + kk];
  nn(a, bt.data(), c, m, k, n);
}

void matmul_nt_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  matmul_nt_via_transpose<float>(a, b, c, m, k, n, matmul_nn_f32);
}

void matmul_nt_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  matmul_nt_via_transpose<double>(a, b, c, m, k, n, matmul_nn_f64);
}

void matmul_tn_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  add_flops(2ull * m * k * n);
  std::memset(c, 0, m * n * sizeof(float));
  for (std::size_t kk = 0; kk < k; ++kk) {
    const float* arow = a + kk * m;
    const float* brow = b + kk * n;
    for (std::size_t i = 0; i < m; ++i) {
      const float av = arow[i];
      float* crow = c + i * n;
      const __m256 vav = _mm256_set1_ps(av);
      std::size_t j = 0;
      for (; j + 8 <= n; j += 8) {
        __m256 prod = _mm256_mul_ps(vav, _mm256_loadu_ps(brow + j));
        _mm256_storeu_ps(crow + j, _mm256_add_ps(_mm256_loadu_ps(crow + j), prod));
      }
      for (; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_tn_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  add_flops(2ull * m * k * n);
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* arow = a + kk * m;
    const double* brow = b + kk * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      const __m256d vav = _mm256_set1_pd(av);
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        __m256d prod = _mm256_mul_pd(vav, _mm256_loadu_pd(brow + j));
        _mm256_storeu_pd(crow + j, _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
      }
      for (; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

bool all_finite_f32(const float* a, std::size_t n) {
  const __m256 inf = _mm256_set1_ps(std::numeric_limits<float>::infinity());
  const __m256 absmask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 x = _mm256_loadu_ps(a + i);
    __m256 ord = _mm256_cmp_ps(x, x, _CMP_ORD_Q);          // false lanes: NaN
    __m256 lt = _mm256_cmp_ps(_mm256_and_ps(x, absmask), inf, _CMP_LT_OQ);
    if (_mm256_movemask_ps(_mm256_and_ps(ord, lt)) != 0xff) return false;
  }
  for (; i < n; ++i) {
    float x = a[i];
    if (!(x == x) || x - x != 0.0f) return false;
  }
  return true;
}

bool all_finite_f64(const double* a, std::size_t n) {
  const __m256d inf = _mm256_set1_pd(std::numeric_limits<double>::infinity());
  const __m256d absmask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffll));
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d x = _mm256_loadu_pd(a + i);
    __m256d ord = _mm256_cmp_pd(x, x, _CMP_ORD_Q);
    __m256d lt = _mm256_cmp_pd(_mm256_and_pd(x, absmask), inf, _CMP_LT_OQ);
    if (_mm256_movemask_pd(_mm256_and_pd(ord, lt)) != 0xf) return false;
  }
  for (; i < n; ++i) {
    double x = a[i];
    if (!(x == x) || x - x != 0.0) return false;
  }
  return true;
}

}  // namespace

namespace avx2 {
const Kernels<float> f32 = {add_f32,       sub_f32,       mul_f32,       scale_f32,
                            axpy_f32,      matmul_nn_f32, matmul_nt_f32, matmul_tn_f32,
                            all_finite_f32};
const Kernels<double> f64 = {add_f64,       sub_f64,       mul_f64,       scale_f64,
                             axpy_f64,      matmul_nn_f64, matmul_nt_f64, matmul_tn_f64,
                             all_finite_f64};
const bool compiled = true;
}  // namespace avx2

}  // namespace eventlm::kernels

#else  // !__AVX2__

namespace eventlm::kernels::avx2 {
const Kernels<float> f32 = {};
const Kernels<double> f64 = {};
const bool compiled = false;
}  // namespace eventlm::kernels::avx2

#endif
