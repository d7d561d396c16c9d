#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "eventlm/ops.hpp"
#include "eventlm/rng.hpp"
#include "eventlm/tensor.hpp"

// Multi-head attention with rotary positions and incremental KV caching.
// Three position treatments exist in the model and are kept explicit here:
// self-attention ropes queries and keys, memory reads rope queries only
// (memory slots carry no positions), memory-side attention uses none.
namespace eventlm {

struct AttentionConfig {
  std::int64_t n_heads = 0;
  std::int64_t head_dim = 0;
  double rope_base = 10000.0;

  std::int64_t model_dim() const { return n_heads * head_dim; }
  void validate() const;
};

using ParamList = std::vector<std::pair<std::string, Tensor>>;

// Additive pre-softmax mask: 0 where visible, a large negative finite value
// where hidden (keeps the everything-finite invariant; the exp underflows to
// an exact 0 weight). allow: query row i sees key rows j <= q_offset + i.
inline constexpr double kMaskHidden = -1e30;
Tensor causal_mask(std::int64_t tq, std::int64_t tk, std::int64_t q_offset, DType dt = DType::F64);

// Append-only per-interaction cache of projected (and position-encoded) K/V
// rows. Exceeding capacity is a hard error: one interaction is bounded by
// contract, never silently truncated.
class KVCache {
 public:
  KVCache(std::int64_t capacity, std::int64_t model_dim, DType dt = DType::F64);

  void append(const Tensor& k_new, const Tensor& v_new);
  Tensor k() const;  // [cached_len×D] snapshot
  Tensor v() const;
  std::int64_t cached_len() const { return cached_len_; }
  std::int64_t capacity() const { return capacity_; }
  void clear() { cached_len_ = 0; }

 private:
  std::int64_t capacity_;
  std::int64_t model_dim_;
  std::int64_t cached_len_ = 0;
  Tensor k_buf_;
  Tensor v_buf_;
};

struct ProjectedKV {
  Tensor k;
  Tensor v;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention(const AttentionConfig& cfg, Rng& rng);

  const AttentionConfig& config() const { return cfg_; }

  Tensor project_q(const Tensor& x) const { return ops::matmul(x, wq_); }
  Tensor project_k(const Tensor& x) const { return ops::matmul(x, wk_); }
  Tensor project_v(const Tensor& x) const { return ops::matmul(x, wv_); }

  // Core attention over already-projected q/k/v: per head
  // softmax(q kᵀ/sqrt(hd) + mask) v, heads concatenated, output-projected.
  // mask may be undefined (none) or [Tq×Tk] additive.
  Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask) const;

  // Full-sequence self-attention, rope on q and k at the given positions.
  Tensor self_attention(const Tensor& x, const std::vector<std::int64_t>& positions,
                        bool causal) const;

  // Incremental self-attention: projects/ropes x, appends its K/V to the
  // cache, attends over everything cached. start_position must equal the
  // cache length (positions are append order).
  Tensor self_attention_cached(const Tensor& x, KVCache& cache,
                               std::int64_t start_position) const;

  // Memory read path: K/V projected once per interaction from the slots, no
  // positions on them; queries roped at their interaction positions.
  ProjectedKV precompute_kv(const Tensor& mem) const;
  Tensor cross_attend_precomputed(const Tensor& x, const ProjectedKV& kv,
                                  const std::vector<std::int64_t>& q_positions) const;
  Tensor cross_attend(const Tensor& x, const Tensor& mem,
                      const std::vector<std::int64_t>& q_positions) const;

  // Position-free attention between state tensors (memory-side writes).
  Tensor attend_unpositioned(const Tensor& q_in, const Tensor& kv_in) const;

  void collect_params(const std::string& prefix, ParamList& out);
  // Replaces parameter tensors (dtype-converted copies for f32 inference).
  void cast_params(DType dt);

 private:
  AttentionConfig cfg_;
  Tensor wq_, wk_, wv_, wo_;
};

}  // namespace eventlm
