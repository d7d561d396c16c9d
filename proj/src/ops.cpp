#include "eventlm/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "eventlm/kernels.hpp"

namespace eventlm::ops {
namespace {

using kernels::f32;
using kernels::f64;

[[noreturn]] void shape_error(const std::string& op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + a.shape_str() + " and " +
                              b.shape_str());
}

void require_same_shape(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a, b);
}

void require_same_dtype(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype())
    throw std::invalid_argument(op + ": dtype mismatch (" + dtype_name(a.dtype()) + " vs " +
                                dtype_name(b.dtype()) + ")");
}

// True when the active tape should record this op. Gradient math is float64
// only, so a grad-connected float32 input is a usage error.
bool recording(const char* op, std::initializer_list<const Tensor*> ins) {
  if (!Tape::active()) return false;
  bool any = false;
  for (const Tensor* t : ins)
    if (t->defined() && t->impl()->needs_grad) any = true;
  if (!any) return false;
  for (const Tensor* t : ins)
    if (t->defined() && t->dtype() != DType::F64)
      throw std::logic_error(std::string(op) + ": gradient path requires float64 tensors");
  return true;
}

void mark(const Tensor& out) { out.impl()->needs_grad = true; }

void accumulate(TensorImpl* t, const double* delta, std::size_t n) {
  t->ensure_grad();
  f64().axpy(1.0, delta, t->grad.data(), n);
}

template <class Fn>
void for_dtype(DType dt, Fn&& fn) {
  if (dt == DType::F64)
    fn(double{});
  else
    fn(float{});
}

using Impl = std::shared_ptr<TensorImpl>;

// ---- elementwise ----

enum class EwKind { Add, Sub, Mul };

Tensor elementwise(const char* name, EwKind kind, const Tensor& a, const Tensor& b) {
  require_same_shape(name, a, b);
  require_same_dtype(name, a, b);
  Tensor out = Tensor::zeros(a.rows(), a.cols(), a.dtype());
  std::size_t n = static_cast<std::size_t>(a.numel());
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& kr = kernels::get<T>();
    auto* fn = kind == EwKind::Add ? kr.add : kind == EwKind::Sub ? kr.sub : kr.mul;
    fn(a.impl()->ptr<T>(), b.impl()->ptr<T>(), out.impl()->ptr<T>(), n);
  });
  check_finite(out, name);
  if (recording(name, {&a, &b})) {
    Impl ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
    mark(out);
    Tape::active()->record([kind, ai, bi, oi, n] {
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      switch (kind) {
        case EwKind::Add:
          if (ai->needs_grad) accumulate(ai.get(), g, n);
          if (bi->needs_grad) accumulate(bi.get(), g, n);
          break;
        case EwKind::Sub:
          if (ai->needs_grad) accumulate(ai.get(), g, n);
          if (bi->needs_grad) {
            bi->ensure_grad();
            f64().axpy(-1.0, g, bi->grad.data(), n);
          }
          break;
        case EwKind::Mul: {
          std::vector<double> tmp(n);
          if (ai->needs_grad) {
            f64().mul(g, bi->data64.data(), tmp.data(), n);
            accumulate(ai.get(), tmp.data(), n);
          }
          if (bi->needs_grad) {
            f64().mul(g, ai->data64.data(), tmp.data(), n);
            accumulate(bi.get(), tmp.data(), n);
          }
          break;
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise("add", EwKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise("sub", EwKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise("mul", EwKind::Mul, a, b); }

Tensor scale(const Tensor& a, double alpha) {
  Tensor out = Tensor::zeros(a.rows(), a.cols(), a.dtype());
  std::size_t n = static_cast<std::size_t>(a.numel());
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::get<T>().scale(a.impl()->ptr<T>(), static_cast<T>(alpha), out.impl()->ptr<T>(), n);
  });
  check_finite(out, "scale");
  if (recording("scale", {&a})) {
    Impl ai = a.impl_ptr(), oi = out.impl_ptr();
    mark(out);
    Tape::active()->record([ai, oi, alpha, n] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      f64().axpy(alpha, oi->grad.data(), ai->grad.data(), n);
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double alpha) {
  Tensor out = Tensor::zeros(a.rows(), a.cols(), a.dtype());
  std::size_t n = static_cast<std::size_t>(a.numel());
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* src = a.impl()->ptr<T>();
    T* dst = out.impl()->ptr<T>();
    for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] + static_cast<T>(alpha);
  });
  check_finite(out, "add_scalar");
  if (recording("add_scalar", {&a})) {
    Impl ai = a.impl_ptr(), oi = out.impl_ptr();
    mark(out);
    Tape::active()->record([ai, oi, n] {
      if (oi->grad.empty()) return;
      accumulate(ai.get(), oi->grad.data(), n);
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) shape_error("add_bias", x, bias);
  require_same_dtype("add_bias", x, bias);
  std::int64_t T = x.rows(), D = x.cols();
  Tensor out = Tensor::zeros(T, D, x.dtype());
  for_dtype(x.dtype(), [&](auto tag) {
    using TT = decltype(tag);
    const auto& kr = kernels::get<TT>();
    for (std::int64_t t = 0; t < T; ++t)
      kr.add(x.impl()->ptr<TT>() + t * D, bias.impl()->ptr<TT>(), out.impl()->ptr<TT>() + t * D,
             static_cast<std::size_t>(D));
  });
  check_finite(out, "add_bias");
  if (recording("add_bias", {&x, &bias})) {
    Impl xi = x.impl_ptr(), bi = bias.impl_ptr(), oi = out.impl_ptr();
    mark(out);
    Tape::active()->record([xi, bi, oi, T, D] {
      if (oi->grad.empty()) return;
      if (xi->needs_grad) accumulate(xi.get(), oi->grad.data(), oi->grad.size());
      if (bi->needs_grad) {
        bi->ensure_grad();
        for (std::int64_t t = 0; t < T; ++t)
          f64().axpy(1.0, oi->grad.data() + t * D, bi->grad.data(), static_cast<std::size_t>(D));
      }
    });
  }
  return out;
}

Tensor mul_rowwise(const Tensor& x, const Tensor& w) {
  if (w.rows() != x.rows() || w.cols() != 1) shape_error("mul_rowwise", x, w);
  require_same_dtype("mul_rowwise", x, w);
  std::int64_t T = x.rows(), D = x.cols();
  Tensor out = Tensor::zeros(T, D, x.dtype());
  for_dtype(x.dtype(), [&](auto tag) {
    using TT = decltype(tag);
    const auto& kr = kernels::get<TT>();
    for (std::int64_t t = 0; t < T; ++t)
      kr.scale(x.impl()->ptr<TT>() + t * D, w.impl()->ptr<TT>()[t], out.impl()->ptr<TT>() + t * D,
               static_cast<std::size_t>(D));
  });
  check_finite(out, "mul_rowwise");
  if (recording("mul_rowwise", {&x, &w})) {
    Impl xi = x.impl_ptr(), wi = w.impl_ptr(), oi = out.impl_ptr();
    mark(out);
    Tape::active()->record([xi, wi, oi, T, D] {
      if (oi->grad.empty()) return;
      if (xi->needs_grad) {
        xi->ensure_grad();
        for (std::int64_t t = 0; t < T; ++t)
          f64().axpy(wi->data64[t], oi->grad.data() + t * D, xi->grad.data() + t * D,
                     static_cast<std::size_t>(D));
      }
      if (wi->needs_grad) {
        wi->ensure_grad();
        for (std::int64_t t = 0; t < T; ++t) {
          double dot = 0.0;
          for (std::int64_t j = 0; j < D; ++j)
            dot += oi->grad[t * D + j] * xi->data64[t * D + j];
          wi->grad[t] += dot;
        }
      }
    });
  }
  return out;
}

Tensor div_rowwise(const Tensor& x, const Tensor& d) {
  if (d.rows() != x.rows() || d.cols() != 1) shape_error("div_rowwise", x, d);
  require_same_dtype("div_rowwise", x, d);
  std::int64_t T = x.rows(), D = x.cols();
  for (std::int64_t t = 0; t < T; ++t)
    if (d.at(t, 0) == 0.0)
      throw std::domain_error("div_rowwise: zero divisor at row " + std::to_string(t));
  Tensor out = Tensor::zeros(T, D, x.dtype());
  for_dtype(x.dtype(), [&](auto tag) {
    using TT = decltype(tag);
    const auto& kr = kernels::get<TT>();
    for (std::int64_t t = 0; t < T; ++t)
      kr.scale(x.impl()->ptr<TT>() + t * D, static_cast<TT>(1) / d.impl()->ptr<TT>()[t],
               out.impl()->ptr<TT>() + t * D, static_cast<std::size_t>(D));
  });
  check_finite(out, "div_rowwise");
  if (recording("div_rowwise", {&x, &d})) {
    Impl xi = x.impl_ptr(), di = d.impl_ptr(), oi = out.impl_ptr();
    mark(out);
    Tape::active()->record([xi, di, oi, T, D] {
      if (oi->grad.empty()) return;
      if (xi->needs_grad) {
        xi->ensure_grad();
        for (std::int64_t t = 0; t < T; ++t)
          f64().axpy(1.0 / di->data64[t], oi->grad.data() + t * D, xi->grad.data() + t * D,
                     static_cast<std::size_t>(D));
      }
      if (di->needs_grad) {
        di->ensure_grad();
        for (std::int64_t t = 0; t < T; ++t) {
          double dv = di->data64[t];
          double dot = 0.0;
          for (std::int64_t j = 0; j < D; ++j)
            dot += oi->grad[t * D + j] * xi->data64[t * D + j];
          di->grad[t] += -dot / (dv * dv);
        }
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ: " + a.shape_str() + " x " +
                                b.shape_str());
  require_same_dtype("matmul", a, b);
  std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros(m, n, a.dtype());
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::get<T>().matmul_nn(a.impl()->ptr<T>(), b.impl()->ptr<T>(), out.impl()->ptr<T>(),
                                static_cast<std::size_t>(m), static_cast<std::size_t>(k),
                                static_cast<std::size_t>(n));
  });
  check_finite(out, "matmul");
  if (recording("matmul", {&a, &b})) {
    Impl ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
    mark(out);
    Tape::active()->record([ai, bi, oi, m, k, n] {
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      if (ai->needs_grad) {
        // dA = dC · Bᵀ
        std::vector<double> tmp(static_cast<std::size_t>(m * k));
        f64().matmul_nt(g, bi->data64.data(), tmp.data(), m, n, k);
        accumulate(ai.get(), tmp.data(), tmp.size());
      }
      if (bi->needs_grad) {
        // dB = Aᵀ · dC
        std::vector<double> tmp(static_cast<std::size_t>(k * n));
        f64().matmul_tn(ai->data64.data(), g, tmp.data(), k, m, n);
        accumulate(bi.get(), tmp.data(), tmp.size());
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("matmul_nt: inner dimensions differ: " + a.shape_str() + " x " +
                                b.shape_str() + "ᵀ");
  require_same_dtype("matmul_nt", a, b);
  std::int64_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = Tensor::zeros(m, n, a.dtype());
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::get<T>().matmul_nt(a.impl()->ptr<T>(), b.impl()->ptr<T>(), out.impl()->ptr<T>(),
                                static_cast<std::size_t>(m), static_cast<std::size_t>(k),
                                static_cast<std::size_t>(n));
  });
  check_finite(out, "matmul_nt");
  if (recording("matmul_nt", {&a, &b})) {
    Impl ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
    mark(out);
    Tape::active()->record([ai, bi, oi, m, k, n] {
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      if (ai->needs_grad) {
        // dA = dC · B
        std::vector<double> tmp(static_cast<std::size_t>(m * k));
        f64().matmul_nn(g, bi->data64.data(), tmp.data(), m, n, k);
        accumulate(ai.get(), tmp.data(), tmp.size());
      }
      if (bi->needs_grad) {
        // dB = dCᵀ · A
        std::vector<double> tmp(static_cast<std::size_t>(n * k));
        f64().matmul_tn(g, ai->data64.data(), tmp.data(), n, m, k);
        accumulate(bi.get(), tmp.data(), tmp.size());
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  std::int64_t T = x.rows(), D = x.cols();
  Tensor out = Tensor::zeros(T, D, x.dtype());
  for_dtype(x.dtype(), [&](auto tag) {
    using TT = decltype(tag);
    const TT* src = x.impl()->ptr<TT>();
    TT* dst = out.impl()->ptr<TT>();
    for (std::int64_t t = 0; t < T; ++t) {
      double mx = static_cast<double>(src[t * D]);
      for (std::int64_t j = 1; j < D; ++j) mx = std::max(mx, static_cast<double>(src[t * D + j]));
      double sum = 0.0;
      for (std::int64_t j = 0; j < D; ++j) {
        double e = std::exp(static_cast<double>(src[t * D + j]) - mx);
        dst[t * D + j] = static_cast<TT>(e);
        sum += e;
      }
      for (std::int64_t j = 0; j < D; ++j)
        dst[t * D + j] = static_cast<TT>(static_cast<double>(dst[t * D + j]) / sum);
    }
  });
  check_finite(out, "softmax_rows");
  if (recording("softmax_rows", {&x})) {
    Impl xi = x.impl_ptr(), oi = out.impl_ptr();
    mark(out);
    Tape::active()->record([xi, oi, T, D] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::int64_t t = 0; t < T; ++t) {
        const double* y = oi->data64.data() + t * D;
        const double* gy = oi->grad.data() + t * D;
        double dot = 0.0;
        for (std::int64_t j = 0; j < D; ++j) dot += gy[j] * y[j];
        double* gx = xi->grad.data() + t * D;
        for (std::int64_t j = 0; j < D; ++j) gx[j] += y[j] * (gy[j] - dot);
      }
    });
  }
  return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& gain) {
  if (gain.rows() != 1 || gain.cols() != x.cols()) shape_error("rms_norm", x, gain);
  require_same_dtype("rms_norm", x, gain);
  constexpr double kEps = 1e-8;
  std::int64_t T = x.rows(), D = x.cols();
  Tensor out = Tensor::zeros(T, D, x.dtype());
  std::vector<double> inv(static_cast<std::size_t>(T));
  for_dtype(x.dtype(), [&](auto tag) {
    using TT = decltype(tag);
    const TT* src = x.impl()->ptr<TT>();
    const TT* g = gain.impl()->ptr<TT>();
    TT* dst = out.impl()->ptr<TT>();
    for (std::int64_t t = 0; t < T; ++t) {
      double ms = 0.0;
      for (std::int64_t j = 0; j < D; ++j) {
        double v = static_cast<double>(src[t * D + j]);
        ms += v * v;
      }
      ms /= static_cast<double>(D);
      double r = 1.0 / std::sqrt(ms + kEps);
      inv[static_cast<std::size_t>(t)] = r;
      for (std::int64_t j = 0; j < D; ++j)
        dst[t * D + j] = static_cast<TT>(static_cast<double>(src[t * D + j]) * r *
                                         static_cast<double>(g[j]));
    }
  });
  check_finite(out, "rms_norm");
  if (recording("rms_norm", {&x, &gain})) {
    Impl xi = x.impl_ptr(), gi = gain.impl_ptr(), oi = out.impl_ptr();
    mark(out);
    Tape::active()->record([xi, gi, oi, inv, T, D] {
      if (oi->grad.empty()) return;
      for (std::int64_t t = 0; t < T; ++t) {
        const double* xr = xi->data64.data() + t * D;
        const double* gy = oi->grad.data() + t * D;
        const double* gn = gi->data64.data();
        double r = inv[static_cast<std::size_t>(t)];
        if (xi->needs_grad) {
          xi->ensure_grad();
          double s = 0.0;
          for (std::int64_t j = 0; j < D; ++j) s += gy[j] * gn[j] * xr[j];
          double c = r * r * r * s / static_cast<double>(D);
          double* gx = xi->grad.data() + t * D;
          for (std::int64_t j = 0; j < D; ++j) gx[j] += r * gn[j] * gy[j] - c * xr[j];
        }
        if (gi->needs_grad) {
          gi->ensure_grad();
          for (std::int64_t j = 0; j < D; ++j) gi->grad[j] += gy[j] * xr[j] * r;
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_id) {
  std::int64_t T = logits.rows(), V = logits.cols();
  if (static_cast<std::int64_t>(targets.size()) != T)
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(T) + " rows");
  std::int64_t count = 0;
  for (int id : targets) {
    if (id == ignore_id) continue;
    if (id < 0 || id >= V)
      throw std::invalid_argument("cross_entropy: target id " + std::to_string(id) +
                                  " outside vocab of " + std::to_string(V));
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: every position is ignored");

  bool rec = recording("cross_entropy", {&logits});
  std::vector<double> probs;  // row-major T×V, only filled when recording
  if (rec) probs.assign(static_cast<std::size_t>(T * V), 0.0);

  double loss = 0.0;
  std::vector<double> row(static_cast<std::size_t>(V));
  for (std::int64_t t = 0; t < T; ++t) {
    if (targets[static_cast<std::size_t>(t)] == ignore_id) continue;
    for (std::int64_t v = 0; v < V; ++v) row[static_cast<std::size_t>(v)] = logits.at(t, v);
    double mx = row[0];
    for (double x : row) mx = std::max(mx, x);
    double sum = 0.0;
    for (double x : row) sum += std::exp(x - mx);
    double lse = mx + std::log(sum);
    loss += lse - row[static_cast<std::size_t>(targets[static_cast<std::size_t>(t)])];
    if (rec)
      for (std::int64_t v = 0; v < V; ++v)
        probs[static_cast<std::size_t>(t * V + v)] = std::exp(row[static_cast<std::size_t>(v)] - lse);
  }
  loss /= static_cast<double>(count);

  Tensor out = Tensor::zeros(1, 1, logits.dtype());
  out.set(0, 0, loss);
  check_finite(out, "cross_entropy");
  if (rec) {
    Impl li = logits.impl_ptr(), oi = out.impl_ptr();
    std::vector<int> tg = targets;
    mark(out);
    Tape::active()->record([li, oi, probs = std::move(probs), tg = std::move(tg), ignore_id, T, V,
                            count] {
      if (oi->grad.empty()) return;
      double g = oi->grad[0] / static_cast<double>(count);
      li->ensure_grad();
      for (std::int64_t t = 0; t < T; ++t) {
        int target = tg[static_cast<std::size_t>(t)];
        if (target == ignore_id) continue;
        double* gl = li->grad.data() + t * V;
        const double* p = probs.data() + t * V;
        for (std::int64_t v = 0; v < V; ++v) gl[v] += g * p[v];
        gl[target] -= g;
      }
    });
  }
  return out;
}

Tensor cosine_rows_mean(const Tensor& a, const Tensor& b) {
  require_same_shape("cosine_rows_mean", a, b);
  require_same_dtype("cosine_rows_mean", a, b);
  std::int64_t R = a.rows(), D = a.cols();
  double total = 0.0;
  for (std::int64_t r = 0; r < R; ++r) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::int64_t j = 0; j < D; ++j) {
      double av = a.at(r, j), bv = b.at(r, j);
      dot += av * bv;
      na += av * av;
      nb += bv * bv;
    }
    if (na == 0.0 || nb == 0.0)
      throw std::domain_error("cosine_rows_mean: zero-norm row " + std::to_string(r));
    total += dot / (std::sqrt(na) * std::sqrt(nb));
  }
  Tensor out = Tensor::zeros(1, 1, a.dtype());
  out.set(0, 0, total / static_cast<double>(R));
  check_finite(out, "cosine_rows_mean");
  if (recording("cosine_rows_mean", {&a, &b})) {
    Impl ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
    mark(out);
    Tape::active()->record([ai, bi, oi, R, D] {
      if (oi->grad.empty()) return;
      double g = oi->grad[0] / static_cast<double>(R);
      for (std::int64_t r = 0; r < R; ++r) {
        const double* ar = ai->data64.data() + r * D;
        const double* br = bi->data64.data() + r * D;
        double dot = 0.0, na2 = 0.0, nb2 = 0.0;
        for (std::int64_t j = 0; j < D; ++j) {
          dot += ar[j] * br[j];
          na2 += ar[j] * ar[j];
          nb2 += br[j] * br[j];
        }
        double na = std::sqrt(na2), nb = std::sqrt(nb2);
        double c = dot / (na * nb);
        if (ai->needs_grad) {
          ai->ensure_grad();
          double* ga = ai->grad.data() + r * D;
          for (std::int64_t j = 0; j < D; ++j)
            ga[j] += g * (br[j] / (na * nb) - c * ar[j] / na2);
        }
        if (bi->needs_grad) {
          bi->ensure_grad();
          double* gb = bi->grad.data() + r * D;
          for (std::int64_t j = 0; j < D; ++j)
            gb[j] += g * (ar[j] / (na * nb) - c * br[j] / nb2);
        }
      }
    });
  }
  return out;
}

namespace {

enum class Unary { Sigmoid, Tanh, Silu };

Tensor unary_act(const char* name, Unary kind, const Tensor& x) {
  std::int64_t n = x.numel();
  Tensor out = Tensor::zeros(x.rows(), x.cols(), x.dtype());
  for_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* src = x.impl()->ptr<T>();
    T* dst = out.impl()->ptr<T>();
    for (std::int64_t i = 0; i < n; ++i) {
      double v = static_cast<double>(src[i]);
      double y;
      switch (kind) {
        case Unary::Sigmoid: y = 1.0 / (1.0 + std::exp(-v)); break;
        case Unary::Tanh: y = std::tanh(v); break;
        default: y = v / (1.0 + std::exp(-v)); break;
      }
      dst[i] = static_cast<T>(y);
    }
  });
  check_finite(out, name);
  if (recording(name, {&x})) {
    Impl xi = x.impl_ptr(), oi = out.impl_ptr();
    mark(out);
    Tape::active()->record([kind, xi, oi, n] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        double v = xi->data64[i], y = oi->data64[i], d;
        switch (kind) {
          case Unary::Sigmoid: d = y * (1.0 - y); break;
          case Unary::Tanh: d = 1.0 - y * y; break;
          default: {
            double s = 1.0 / (1.0 + std::exp(-v));
            d = s * (1.0 + v * (1.0 - s));
            break;
          }
        }
        xi->grad[i] += oi->grad[i] * d;
      }
    });
  }
  return out;
}

}  // namespace

Tensor sigmoid(const Tensor& x) { return unary_act("sigmoid", Unary::Sigmoid, x); }
Tensor tanh(const Tensor& x) { return unary_act("tanh", Unary::Tanh, x); }
Tensor silu(const Tensor& x) { return unary_act("silu", Unary::Silu, x); }

Tensor rope(const Tensor& x, const std::vector<std::int64_t>& positions, std::int64_t n_heads,
            double base) {
  std::int64_t T = x.rows(), D = x.cols();
  if (static_cast<std::int64_t>(positions.size()) != T)
    throw std::invalid_argument("rope: " + std::to_string(positions.size()) + " positions for " +
                                std::to_string(T) + " rows");
  if (D % n_heads != 0)
    throw std::invalid_argument("rope: model_dim " + std::to_string(D) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  std::int64_t hd = D / n_heads;
  if (hd % 2 != 0) throw std::invalid_argument("rope: odd head_dim " + std::to_string(hd));

  // Angles for one row: per pair i, theta = pos * base^(-2i/hd); shared by
  // all heads. Captured by value because the tape closure outlives this frame.
  auto angles_for = [base, hd](std::int64_t pos, std::vector<double>& cs, std::vector<double>& sn) {
    for (std::int64_t i = 0; i < hd / 2; ++i) {
      double theta = static_cast<double>(pos) *
                     std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
      cs[static_cast<std::size_t>(i)] = std::cos(theta);
      sn[static_cast<std::size_t>(i)] = std::sin(theta);
    }
  };

  Tensor out = Tensor::zeros(T, D, x.dtype());
  {
    std::vector<double> cs(static_cast<std::size_t>(hd / 2)), sn(static_cast<std::size_t>(hd / 2));
    for (std::int64_t t = 0; t < T; ++t) {
      angles_for(positions[static_cast<std::size_t>(t)], cs, sn);
      for (std::int64_t h = 0; h < n_heads; ++h) {
        for (std::int64_t i = 0; i < hd / 2; ++i) {
          std::int64_t j0 = h * hd + 2 * i, j1 = j0 + 1;
          double x0 = x.at(t, j0), x1 = x.at(t, j1);
          double c = cs[static_cast<std::size_t>(i)], s = sn[static_cast<std::size_t>(i)];
          out.set(t, j0, x0 * c - x1 * s);
          out.set(t, j1, x0 * s + x1 * c);
        }
      }
    }
  }
  check_finite(out, "rope");
  if (recording("rope", {&x})) {
    Impl xi = x.impl_ptr(), oi = out.impl_ptr();
    std::vector<std::int64_t> pos = positions;
    mark(out);
    Tape::active()->record([xi, oi, pos = std::move(pos), angles_for, n_heads, hd, T] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      std::vector<double> cs(static_cast<std::size_t>(hd / 2)),
          sn(static_cast<std::size_t>(hd / 2));
      std::int64_t D = n_heads * hd;
      for (std::int64_t t = 0; t < T; ++t) {
        angles_for(pos[static_cast<std::size_t>(t)], cs, sn);
        for (std::int64_t h = 0; h < n_heads; ++h) {
          for (std::int64_t i = 0; i < hd / 2; ++i) {
            std::int64_t j0 = t * D + h * hd + 2 * i, j1 = j0 + 1;
            double g0 = oi->grad[j0], g1 = oi->grad[j1];
            double c = cs[static_cast<std::size_t>(i)], s = sn[static_cast<std::size_t>(i)];
            // inverse rotation
            xi->grad[j0] += g0 * c + g1 * s;
            xi->grad[j1] += -g0 * s + g1 * c;
          }
        }
      }
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  std::int64_t V = table.rows(), D = table.cols();
  std::int64_t T = static_cast<std::int64_t>(ids.size());
  if (T == 0) throw std::invalid_argument("embedding: empty id list");
  for (int id : ids)
    if (id < 0 || id >= V)
      throw std::invalid_argument("embedding: id " + std::to_string(id) + " outside vocab of " +
                                  std::to_string(V));
  Tensor out = Tensor::zeros(T, D, table.dtype());
  for_dtype(table.dtype(), [&](auto tag) {
    using TT = decltype(tag);
    for (std::int64_t t = 0; t < T; ++t)
      std::copy_n(table.impl()->ptr<TT>() + static_cast<std::int64_t>(ids[t]) * D,
                  static_cast<std::size_t>(D), out.impl()->ptr<TT>() + t * D);
  });
  check_finite(out, "embedding");
  if (recording("embedding", {&table})) {
    Impl ti = table.impl_ptr(), oi = out.impl_ptr();
    std::vector<int> id_copy = ids;
    mark(out);
    Tape::active()->record([ti, oi, id_copy = std::move(id_copy), T, D] {
      if (oi->grad.empty()) return;
      ti->ensure_grad();
      for (std::int64_t t = 0; t < T; ++t)
        f64().axpy(1.0, oi->grad.data() + t * D,
                   ti->grad.data() + static_cast<std::int64_t>(id_copy[t]) * D,
                   static_cast<std::size_t>(D));
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& idx) {
  std::int64_t R = x.rows(), D = x.cols();
  std::int64_t K = static_cast<std::int64_t>(idx.size());
  if (K == 0) throw std::invalid_argument("gather_rows: empty index list");
  for (std::int64_t i : idx)
    if (i < 0 || i >= R)
      throw std::invalid_argument("gather_rows: row " + std::to_string(i) + " outside " +
                                  x.shape_str());
  Tensor out = Tensor::zeros(K, D, x.dtype());
  for_dtype(x.dtype(), [&](auto tag) {
    using TT = decltype(tag);
    for (std::int64_t i = 0; i < K; ++i)
      std::copy_n(x.impl()->ptr<TT>() + idx[static_cast<std::size_t>(i)] * D,
                  static_cast<std::size_t>(D), out.impl()->ptr<TT>() + i * D);
  });
  check_finite(out, "gather_rows");
  if (recording("gather_rows", {&x})) {
    Impl xi = x.impl_ptr(), oi = out.impl_ptr();
    std::vector<std::int64_t> ix = idx;
    mark(out);
    Tape::active()->record([xi, oi, ix = std::move(ix), K, D] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::int64_t i = 0; i < K; ++i)
        f64().axpy(1.0, oi->grad.data() + i * D,
                   xi->grad.data() + ix[static_cast<std::size_t>(i)] * D,
                   static_cast<std::size_t>(D));
    });
  }
  return out;
}

Tensor scatter_rows(const Tensor& src, const std::vector<std::int64_t>& idx,
                    std::int64_t out_rows) {
  std::int64_t K = src.rows(), D = src.cols();
  if (static_cast<std::int64_t>(idx.size()) != K)
    throw std::invalid_argument("scatter_rows: " + std::to_string(idx.size()) + " indices for " +
                                std::to_string(K) + " rows");
  for (std::int64_t i : idx)
    if (i < 0 || i >= out_rows)
      throw std::invalid_argument("scatter_rows: row " + std::to_string(i) + " outside [0," +
                                  std::to_string(out_rows) + ")");
  Tensor out = Tensor::zeros(out_rows, D, src.dtype());
  for_dtype(src.dtype(), [&](auto tag) {
    using TT = decltype(tag);
    const auto& kr = kernels::get<TT>();
    for (std::int64_t i = 0; i < K; ++i)
      kr.axpy(static_cast<TT>(1), src.impl()->ptr<TT>() + i * D,
              out.impl()->ptr<TT>() + idx[static_cast<std::size_t>(i)] * D,
              static_cast<std::size_t>(D));
  });
  check_finite(out, "scatter_rows");
  if (recording("scatter_rows", {&src})) {
    Impl si = src.impl_ptr(), oi = out.impl_ptr();
    std::vector<std::int64_t> ix = idx;
    mark(out);
    Tape::active()->record([si, oi, ix = std::move(ix), K, D] {
      if (oi->grad.empty()) return;
      si->ensure_grad();
      for (std::int64_t i = 0; i < K; ++i)
        f64().axpy(1.0, oi->grad.data() + ix[static_cast<std::size_t>(i)] * D,
                   si->grad.data() + i * D, static_cast<std::size_t>(D));
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::int64_t start, std::int64_t len) {
  std::int64_t T = x.rows(), D = x.cols();
  if (start < 0 || len <= 0 || start + len > D)
    throw std::invalid_argument("slice_cols: [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") outside width " +
                                std::to_string(D));
  Tensor out = Tensor::zeros(T, len, x.dtype());
  for_dtype(x.dtype(), [&](auto tag) {
    using TT = decltype(tag);
    for (std::int64_t t = 0; t < T; ++t)
      std::copy_n(x.impl()->ptr<TT>() + t * D + start, static_cast<std::size_t>(len),
                  out.impl()->ptr<TT>() + t * len);
  });
  check_finite(out, "slice_cols");
  if (recording("slice_cols", {&x})) {
    Impl xi = x.impl_ptr(), oi = out.impl_ptr();
    mark(out);
    Tape::active()->record([xi, oi, start, len, T, D] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::int64_t t = 0; t < T; ++t)
        f64().axpy(1.0, oi->grad.data() + t * len, xi->grad.data() + t * D + start,
                   static_cast<std::size_t>(len));
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  std::int64_t T = parts[0].rows();
  std::int64_t D = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != T) shape_error("concat_cols", parts[0], p);
    require_same_dtype("concat_cols", parts[0], p);
    D += p.cols();
  }
  Tensor out = Tensor::zeros(T, D, parts[0].dtype());
  std::int64_t off = 0;
  for (const Tensor& p : parts) {
    for_dtype(p.dtype(), [&](auto tag) {
      using TT = decltype(tag);
      for (std::int64_t t = 0; t < T; ++t)
        std::copy_n(p.impl()->ptr<TT>() + t * p.cols(), static_cast<std::size_t>(p.cols()),
                    out.impl()->ptr<TT>() + t * D + off);
    });
    off += p.cols();
  }
  check_finite(out, "concat_cols");
  std::vector<const Tensor*> refs;
  for (const Tensor& p : parts) refs.push_back(&p);
  bool rec = false;
  if (Tape::active()) {
    for (const Tensor* p : refs)
      if (p->needs_grad()) rec = true;
    if (rec)
      for (const Tensor* p : refs)
        if (p->dtype() != DType::F64)
          throw std::logic_error("concat_cols: gradient path requires float64 tensors");
  }
  if (rec) {
    std::vector<Impl> impls;
    std::vector<std::int64_t> widths;
    for (const Tensor& p : parts) {
      impls.push_back(p.impl_ptr());
      widths.push_back(p.cols());
    }
    Impl oi = out.impl_ptr();
    mark(out);
    Tape::active()->record([impls = std::move(impls), widths = std::move(widths), oi, T, D] {
      if (oi->grad.empty()) return;
      std::int64_t off = 0;
      for (std::size_t p = 0; p < impls.size(); ++p) {
        std::int64_t w = widths[p];
        if (impls[p]->needs_grad) {
          impls[p]->ensure_grad();
          for (std::int64_t t = 0; t < T; ++t)
            f64().axpy(1.0, oi->grad.data() + t * D + off, impls[p]->grad.data() + t * w,
                       static_cast<std::size_t>(w));
        }
        off += w;
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  std::int64_t n = x.numel(), C = x.cols();
  for (std::int64_t i = 0; i < n; ++i) s += x.at(i / C, i % C);
  Tensor out = Tensor::zeros(1, 1, x.dtype());
  out.set(0, 0, s);
  check_finite(out, "sum_all");
  if (recording("sum_all", {&x})) {
    Impl xi = x.impl_ptr(), oi = out.impl_ptr();
    mark(out);
    Tape::active()->record([xi, oi, n] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      double g = oi->grad[0];
      for (std::int64_t i = 0; i < n; ++i) xi->grad[i] += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace eventlm::ops
