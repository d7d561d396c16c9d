#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "eventlm/rng.hpp"

// Dense rank-2 tensors. Everything in the model is a [rows×cols] matrix;
// scalars are [1×1] and row vectors [1×D]. float64 is the training dtype
// (gradients are always float64); float32 exists for inference benchmarks
// and never carries a tape.
namespace eventlm {

enum class DType { F64, F32 };

inline const char* dtype_name(DType d) { return d == DType::F64 ? "f64" : "f32"; }

struct TensorImpl {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  DType dtype = DType::F64;
  std::vector<double> data64;
  std::vector<float> data32;
  // requires_grad marks trainable leaves; needs_grad marks anything gradients
  // must flow through (leaves plus op outputs downstream of one).
  bool requires_grad = false;
  bool needs_grad = false;
  std::vector<double> grad;  // lazily allocated, float64 only

  TensorImpl(std::int64_t r, std::int64_t c, DType dt);
  ~TensorImpl();
  TensorImpl(const TensorImpl&) = delete;
  TensorImpl& operator=(const TensorImpl&) = delete;

  std::int64_t numel() const { return rows * cols; }
  void ensure_grad();  // allocates zeros on first use

  template <class T>
  T* ptr();
  template <class T>
  const T* ptr() const;
};

template <>
inline double* TensorImpl::ptr<double>() { return data64.data(); }
template <>
inline float* TensorImpl::ptr<float>() { return data32.data(); }
template <>
inline const double* TensorImpl::ptr<double>() const { return data64.data(); }
template <>
inline const float* TensorImpl::ptr<float>() const { return data32.data(); }

// Live/peak byte counters over all TensorImpl allocations (data plus grad).
// The runtime's bounded-working-set test reads these.
std::int64_t live_tensor_bytes();
std::int64_t peak_tensor_bytes();
void reset_peak_tensor_bytes();

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::int64_t rows, std::int64_t cols, DType dt = DType::F64);
  static Tensor full(std::int64_t rows, std::int64_t cols, double value, DType dt = DType::F64);
  static Tensor from(std::int64_t rows, std::int64_t cols, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor randn(std::int64_t rows, std::int64_t cols, Rng& rng, double stddev = 1.0,
                      double mean = 0.0);
  static Tensor identity(std::int64_t n);

  bool defined() const { return impl_ != nullptr; }
  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

  std::int64_t rows() const { return impl_->rows; }
  std::int64_t cols() const { return impl_->cols; }
  std::int64_t numel() const { return impl_->numel(); }
  DType dtype() const { return impl_->dtype; }
  std::string shape_str() const;

  bool requires_grad() const { return impl_->requires_grad; }
  bool needs_grad() const { return impl_->needs_grad; }
  // Marks a trainable leaf. float64 only.
  Tensor& set_requires_grad(bool v = true);

  // Value access in double regardless of dtype (slow path, tests and glue).
  double at(std::int64_t r, std::int64_t c) const;
  void set(std::int64_t r, std::int64_t c, double v);  // leaves/tests only, not taped
  std::vector<double> to_vector() const;

  double grad_at(std::int64_t r, std::int64_t c) const;
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad();

  // Deep copy with no grad linkage; the detach boundary of the tape.
  Tensor detach() const;
  // Deep copy preserving dtype (still a fresh leaf).
  Tensor clone() const;
  // Dtype-converting copy, no grad linkage.
  Tensor to(DType dt) const;

  double l2_norm() const;

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Throws if any element is NaN/Inf; every op calls this on its output.
void check_finite(const Tensor& t, const char* op_name);

}  // namespace eventlm
