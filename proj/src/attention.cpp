#include "eventlm/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace eventlm {

void AttentionConfig::validate() const {
  if (n_heads <= 0 || head_dim <= 0)
    throw std::invalid_argument("attention config: n_heads and head_dim must be positive");
  if (head_dim % 2 != 0)
    throw std::invalid_argument("attention config: head_dim must be even for rotary positions");
  if (rope_base <= 1.0) throw std::invalid_argument("attention config: rope_base must exceed 1");
}

Tensor causal_mask(std::int64_t tq, std::int64_t tk, std::int64_t q_offset, DType dt) {
  Tensor m = Tensor::zeros(tq, tk, dt);
  for (std::int64_t i = 0; i < tq; ++i)
    for (std::int64_t j = 0; j < tk; ++j)
      if (j > q_offset + i) m.set(i, j, kMaskHidden);
  return m;
}

KVCache::KVCache(std::int64_t capacity, std::int64_t model_dim, DType dt)
    : capacity_(capacity), model_dim_(model_dim) {
  if (capacity <= 0) throw std::invalid_argument("kv cache: capacity must be positive");
  k_buf_ = Tensor::zeros(capacity, model_dim, dt);
  v_buf_ = Tensor::zeros(capacity, model_dim, dt);
}

void KVCache::append(const Tensor& k_new, const Tensor& v_new) {
  if (k_new.rows() != v_new.rows() || k_new.cols() != model_dim_ || v_new.cols() != model_dim_)
    throw std::invalid_argument("kv cache: appended rows must be [n x " +
                                std::to_string(model_dim_) + "], got " + k_new.shape_str() +
                                " and " + v_new.shape_str());
  if (cached_len_ + k_new.rows() > capacity_)
    throw std::runtime_error("kv cache: capacity " + std::to_string(capacity_) +
                             " exceeded at length " +
                             std::to_string(cached_len_ + k_new.rows()) +
                             " (interaction longer than max_interaction_len)");
  for (std::int64_t r = 0; r < k_new.rows(); ++r)
    for (std::int64_t c = 0; c < model_dim_; ++c) {
      k_buf_.set(cached_len_ + r, c, k_new.at(r, c));
      v_buf_.set(cached_len_ + r, c, v_new.at(r, c));
    }
  cached_len_ += k_new.rows();
}

Tensor KVCache::k() const {
  Tensor out = Tensor::zeros(cached_len_, model_dim_, k_buf_.dtype());
  for (std::int64_t r = 0; r < cached_len_; ++r)
    for (std::int64_t c = 0; c < model_dim_; ++c) out.set(r, c, k_buf_.at(r, c));
  return out;
}

Tensor KVCache::v() const {
  Tensor out = Tensor::zeros(cached_len_, model_dim_, v_buf_.dtype());
  for (std::int64_t r = 0; r < cached_len_; ++r)
    for (std::int64_t c = 0; c < model_dim_; ++c) out.set(r, c, v_buf_.at(r, c));
  return out;
}

MultiHeadAttention::MultiHeadAttention(const AttentionConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  std::int64_t d = cfg_.model_dim();
  double std = 1.0 / std::sqrt(static_cast<double>(d));
  wq_ = Tensor::randn(d, d, rng, std).set_requires_grad();
  wk_ = Tensor::randn(d, d, rng, std).set_requires_grad();
  wv_ = Tensor::randn(d, d, rng, std).set_requires_grad();
  wo_ = Tensor::randn(d, d, rng, std).set_requires_grad();
}

Tensor MultiHeadAttention::attend(const Tensor& q, const Tensor& k, const Tensor& v,
                                  const Tensor& mask) const {
  std::int64_t d = cfg_.model_dim();
  if (q.cols() != d || k.cols() != d || v.cols() != d || k.rows() != v.rows())
    throw std::invalid_argument("attend: inconsistent shapes q" + q.shape_str() + " k" +
                                k.shape_str() + " v" + v.shape_str());
  if (mask.defined() && (mask.rows() != q.rows() || mask.cols() != k.rows()))
    throw std::invalid_argument("attend: mask " + mask.shape_str() + " does not cover [" +
                                std::to_string(q.rows()) + "x" + std::to_string(k.rows()) + "]");
  std::int64_t hd = cfg_.head_dim;
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
  for (std::int64_t h = 0; h < cfg_.n_heads; ++h) {
    Tensor qh = ops::slice_cols(q, h * hd, hd);
    Tensor kh = ops::slice_cols(k, h * hd, hd);
    Tensor vh = ops::slice_cols(v, h * hd, hd);
    Tensor scores = ops::scale(ops::matmul_nt(qh, kh), inv_sqrt);
    if (mask.defined()) scores = ops::add(scores, mask);
    heads.push_back(ops::matmul(ops::softmax_rows(scores), vh));
  }
  return ops::matmul(ops::concat_cols(heads), wo_);
}

Tensor MultiHeadAttention::self_attention(const Tensor& x, const std::vector<std::int64_t>& positions,
                                          bool causal) const {
  Tensor q = ops::rope(project_q(x), positions, cfg_.n_heads, cfg_.rope_base);
  Tensor k = ops::rope(project_k(x), positions, cfg_.n_heads, cfg_.rope_base);
  Tensor v = project_v(x);
  Tensor mask;
  if (causal) mask = causal_mask(x.rows(), x.rows(), 0, x.dtype());
  return attend(q, k, v, mask);
}

Tensor MultiHeadAttention::self_attention_cached(const Tensor& x, KVCache& cache,
                                                 std::int64_t start_position) const {
  if (start_position != cache.cached_len())
    throw std::logic_error("self_attention_cached: position " + std::to_string(start_position) +
                           " but cache holds " + std::to_string(cache.cached_len()));
  std::vector<std::int64_t> positions;
  for (std::int64_t i = 0; i < x.rows(); ++i) positions.push_back(start_position + i);
  cache.append(ops::rope(project_k(x), positions, cfg_.n_heads, cfg_.rope_base), project_v(x));
  Tensor q = ops::rope(project_q(x), positions, cfg_.n_heads, cfg_.rope_base);
  // cache rows are in position order, so causality is an offset comparison
  Tensor mask;
  if (x.rows() > 1) mask = causal_mask(x.rows(), cache.cached_len(), start_position, x.dtype());
  return attend(q, cache.k(), cache.v(), mask);
}

ProjectedKV MultiHeadAttention::precompute_kv(const Tensor& mem) const {
  return ProjectedKV{project_k(mem), project_v(mem)};
}

Tensor MultiHeadAttention::cross_attend_precomputed(const Tensor& x, const ProjectedKV& kv,
                                                    const std::vector<std::int64_t>& q_positions) const {
  Tensor q = ops::rope(project_q(x), q_positions, cfg_.n_heads, cfg_.rope_base);
  return attend(q, kv.k, kv.v, Tensor());
}

Tensor MultiHeadAttention::cross_attend(const Tensor& x, const Tensor& mem,
                                        const std::vector<std::int64_t>& q_positions) const {
  return cross_attend_precomputed(x, precompute_kv(mem), q_positions);
}

Tensor MultiHeadAttention::attend_unpositioned(const Tensor& q_in, const Tensor& kv_in) const {
  return attend(project_q(q_in), project_k(kv_in), project_v(kv_in), Tensor());
}

void MultiHeadAttention::collect_params(const std::string& prefix, ParamList& out) {
  out.emplace_back(prefix + ".wq", wq_);
  out.emplace_back(prefix + ".wk", wk_);
  out.emplace_back(prefix + ".wv", wv_);
  out.emplace_back(prefix + ".wo", wo_);
}

void MultiHeadAttention::cast_params(DType dt) {
  wq_ = wq_.to(dt);
  wk_ = wk_.to(dt);
  wv_ = wv_.to(dt);
  wo_ = wo_.to(dt);
}

}  // namespace eventlm
