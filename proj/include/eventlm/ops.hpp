#pragma once

#include <cstdint>
#include <vector>

#include "eventlm/tape.hpp"
#include "eventlm/tensor.hpp"

// Differentiable tensor ops. Every op validates shapes, checks its output for
// non-finite values, and records a backward closure on the active tape when
// any input needs gradients (float64 only; float32 runs forward-only).
// Broadcasting is limited to the exact patterns the model uses: bias rows,
// per-row scalars, per-column gains.
namespace eventlm::ops {

// c = a + b, same shape
Tensor add(const Tensor& a, const Tensor& b);
// c = a - b
Tensor sub(const Tensor& a, const Tensor& b);
// c = a ⊙ b
Tensor mul(const Tensor& a, const Tensor& b);
// c = alpha * a
Tensor scale(const Tensor& a, double alpha);
// c = a + alpha (elementwise constant)
Tensor add_scalar(const Tensor& a, double alpha);
// x[T×D] + bias[1×D] broadcast over rows
Tensor add_bias(const Tensor& x, const Tensor& bias);
// y[t,:] = x[t,:] * w[t], w is [T×1]
Tensor mul_rowwise(const Tensor& x, const Tensor& w);
// y[t,:] = x[t,:] / d[t], d is [T×1], all d[t] nonzero
Tensor div_rowwise(const Tensor& x, const Tensor& d);

// C[m×n] = A[m×k] · B[k×n]
Tensor matmul(const Tensor& a, const Tensor& b);
// C[m×n] = A[m×k] · B[n×k]ᵀ  (tied-embedding logits, QKᵀ scores)
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Row-wise stabilized softmax; each output row sums to 1.
Tensor softmax_rows(const Tensor& x);
// x / sqrt(mean(x², last dim) + eps) * gain, gain is [1×D]
Tensor rms_norm(const Tensor& x, const Tensor& gain);

// Mean negative log-softmax of targets over rows, skipping ignore_id
// positions. Errors if every position is ignored. Perplexity = exp(loss).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_id = -1);
// Mean over rows of per-row cosine similarity; zero-norm rows are an error.
Tensor cosine_rows_mean(const Tensor& a, const Tensor& b);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
// x * sigmoid(x)
Tensor silu(const Tensor& x);

// Rotary embedding over per-head (2i, 2i+1) pairs, angle = pos·base^(−2i/hd).
// positions has one entry per row of x; norm-preserving by construction.
Tensor rope(const Tensor& x, const std::vector<std::int64_t>& positions, std::int64_t n_heads,
            double base);

// rows of table selected by token id; grads scatter-add into the table
Tensor embedding(const Tensor& table, const std::vector<int>& ids);
// y[i,:] = x[idx[i],:], idx may repeat
Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& idx);
// y[out_rows×D] zeros except y[idx[i],:] += src[i,:]
Tensor scatter_rows(const Tensor& src, const std::vector<std::int64_t>& idx,
                    std::int64_t out_rows);

Tensor slice_cols(const Tensor& x, std::int64_t start, std::int64_t len);
Tensor concat_cols(const std::vector<Tensor>& parts);

// scalar [1×1] results
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

}  // namespace eventlm::ops
