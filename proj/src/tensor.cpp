#include "eventlm/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "eventlm/kernels.hpp"

namespace eventlm {
namespace {

std::atomic<std::int64_t> g_live_bytes{0};
std::atomic<std::int64_t> g_peak_bytes{0};

void track_alloc(std::int64_t bytes) {
  std::int64_t live = g_live_bytes.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  std::int64_t peak = g_peak_bytes.load(std::memory_order_relaxed);
  while (live > peak && !g_peak_bytes.compare_exchange_weak(peak, live, std::memory_order_relaxed)) {
  }
}

}  // namespace

std::int64_t live_tensor_bytes() { return g_live_bytes.load(std::memory_order_relaxed); }
std::int64_t peak_tensor_bytes() { return g_peak_bytes.load(std::memory_order_relaxed); }
void reset_peak_tensor_bytes() {
  g_peak_bytes.store(g_live_bytes.load(std::memory_order_relaxed), std::memory_order_relaxed);
}

TensorImpl::TensorImpl(std::int64_t r, std::int64_t c, DType dt) : rows(r), cols(c), dtype(dt) {
  if (r <= 0 || c <= 0)
    throw std::invalid_argument("tensor: dimensions must be positive, got [" + std::to_string(r) +
                                "x" + std::to_string(c) + "]");
  if (dt == DType::F64) {
    data64.assign(static_cast<std::size_t>(numel()), 0.0);
    track_alloc(numel() * 8);
  } else {
    data32.assign(static_cast<std::size_t>(numel()), 0.0f);
    track_alloc(numel() * 4);
  }
}

TensorImpl::~TensorImpl() {
  std::int64_t bytes = static_cast<std::int64_t>(data64.size()) * 8 +
                       static_cast<std::int64_t>(data32.size()) * 4 +
                       static_cast<std::int64_t>(grad.size()) * 8;
  g_live_bytes.fetch_sub(bytes, std::memory_order_relaxed);
}

void TensorImpl::ensure_grad() {
  if (grad.empty()) {
    grad.assign(static_cast<std::size_t>(numel()), 0.0);
    track_alloc(numel() * 8);
  }
}

Tensor Tensor::zeros(std::int64_t rows, std::int64_t cols, DType dt) {
  return Tensor(std::make_shared<TensorImpl>(rows, cols, dt));
}

Tensor Tensor::full(std::int64_t rows, std::int64_t cols, double value, DType dt) {
  Tensor t = zeros(rows, cols, dt);
  if (dt == DType::F64) {
    for (auto& x : t.impl()->data64) x = value;
  } else {
    for (auto& x : t.impl()->data32) x = static_cast<float>(value);
  }
  return t;
}

Tensor Tensor::from(std::int64_t rows, std::int64_t cols, std::vector<double> values) {
  if (static_cast<std::int64_t>(values.size()) != rows * cols)
    throw std::invalid_argument("tensor from: " + std::to_string(values.size()) +
                                " values for shape [" + std::to_string(rows) + "x" +
                                std::to_string(cols) + "]");
  Tensor t = zeros(rows, cols, DType::F64);
  t.impl()->data64 = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value) { return from(1, 1, {value}); }

Tensor Tensor::randn(std::int64_t rows, std::int64_t cols, Rng& rng, double stddev, double mean) {
  Tensor t = zeros(rows, cols, DType::F64);
  for (auto& x : t.impl()->data64) x = rng.gaussian(mean, stddev);
  return t;
}

Tensor Tensor::identity(std::int64_t n) {
  Tensor t = zeros(n, n, DType::F64);
  for (std::int64_t i = 0; i < n; ++i) t.impl()->data64[i * n + i] = 1.0;
  return t;
}

std::string Tensor::shape_str() const {
  if (!impl_) return "[null]";
  return "[" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]";
}

Tensor& Tensor::set_requires_grad(bool v) {
  if (v && dtype() != DType::F64)
    throw std::logic_error("requires_grad: gradients are float64 only");
  impl_->requires_grad = v;
  impl_->needs_grad = v;
  return *this;
}

double Tensor::at(std::int64_t r, std::int64_t c) const {
  std::size_t idx = static_cast<std::size_t>(r * cols() + c);
  return dtype() == DType::F64 ? impl_->data64[idx] : static_cast<double>(impl_->data32[idx]);
}

void Tensor::set(std::int64_t r, std::int64_t c, double v) {
  std::size_t idx = static_cast<std::size_t>(r * cols() + c);
  if (dtype() == DType::F64)
    impl_->data64[idx] = v;
  else
    impl_->data32[idx] = static_cast<float>(v);
}

std::vector<double> Tensor::to_vector() const {
  if (dtype() == DType::F64) return impl_->data64;
  std::vector<double> out(impl_->data32.begin(), impl_->data32.end());
  return out;
}

double Tensor::grad_at(std::int64_t r, std::int64_t c) const {
  if (impl_->grad.empty()) return 0.0;
  return impl_->grad[static_cast<std::size_t>(r * cols() + c)];
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::memset(impl_->grad.data(), 0, impl_->grad.size() * sizeof(double));
}

Tensor Tensor::detach() const {
  Tensor t = zeros(rows(), cols(), dtype());
  t.impl()->data64 = impl_->data64;
  t.impl()->data32 = impl_->data32;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  return t;
}

Tensor Tensor::to(DType dt) const {
  if (dt == dtype()) return detach();
  Tensor t = zeros(rows(), cols(), dt);
  if (dt == DType::F32) {
    for (std::int64_t i = 0; i < numel(); ++i)
      t.impl()->data32[i] = static_cast<float>(impl_->data64[i]);
  } else {
    for (std::int64_t i = 0; i < numel(); ++i)
      t.impl()->data64[i] = static_cast<double>(impl_->data32[i]);
  }
  return t;
}

double Tensor::l2_norm() const {
  double s = 0.0;
  for (std::int64_t i = 0; i < numel(); ++i) {
    double v = at(i / cols(), i % cols());
    s += v * v;
  }
  return std::sqrt(s);
}

void check_finite(const Tensor& t, const char* op_name) {
  bool ok = t.dtype() == DType::F64
                ? kernels::f64().all_finite(t.impl()->data64.data(), t.impl()->data64.size())
                : kernels::f32().all_finite(t.impl()->data32.data(), t.impl()->data32.size());
  if (!ok)
    throw std::runtime_error(std::string("non-finite value produced by ") + op_name + " on " +
                             t.shape_str());
}

}  // namespace eventlm
