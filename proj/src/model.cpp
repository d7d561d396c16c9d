#include "eventlm/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "eventlm/checkpoint.hpp"
#include "eventlm/ops.hpp"

namespace eventlm {

namespace {

Tensor gain(std::int64_t d) { return Tensor::full(1, d, 1.0).set_requires_grad(); }

std::vector<std::int64_t> iota_positions(std::int64_t start, std::int64_t count) {
  std::vector<std::int64_t> p(static_cast<std::size_t>(count));
  std::iota(p.begin(), p.end(), start);
  return p;
}

void accumulate(Tensor& sum, const Tensor& term) {
  sum = sum.defined() ? ops::add(sum, term) : term;
}

void check_interaction_len(const std::vector<int>& tokens, std::int64_t limit) {
  if (tokens.empty()) throw std::invalid_argument("forward: empty token list");
  if (static_cast<std::int64_t>(tokens.size()) > limit)
    throw std::invalid_argument("forward: interaction of " + std::to_string(tokens.size()) +
                                " tokens exceeds max_interaction_len " + std::to_string(limit));
}

}  // namespace

FeedForward::FeedForward(std::int64_t d, std::int64_t hidden, Rng& rng)
    : w1(Tensor::randn(d, hidden, rng, 1.0 / std::sqrt(static_cast<double>(d)))
             .set_requires_grad()),
      b1(Tensor::zeros(1, hidden).set_requires_grad()),
      w2(Tensor::randn(hidden, d, rng, 1.0 / std::sqrt(static_cast<double>(hidden)))
             .set_requires_grad()),
      b2(Tensor::zeros(1, d).set_requires_grad()) {}

Tensor FeedForward::forward(const Tensor& x) const {
  Tensor h = ops::silu(ops::add_bias(ops::matmul(x, w1), b1));
  return ops::add_bias(ops::matmul(h, w2), b2);
}

void FeedForward::collect_params(const std::string& prefix, ParamList& out) {
  out.emplace_back(prefix + ".w1", w1);
  out.emplace_back(prefix + ".b1", b1);
  out.emplace_back(prefix + ".w2", w2);
  out.emplace_back(prefix + ".b2", b2);
}

MoELayer::MoELayer(std::int64_t d, std::int64_t hidden, std::int64_t n_experts, std::int64_t k,
                   Rng& rng)
    : router_w(Tensor::randn(d, n_experts, rng, 1.0 / std::sqrt(static_cast<double>(d)))
                   .set_requires_grad()),
      router_b(Tensor::zeros(1, n_experts).set_requires_grad()),
      top_k(k) {
  if (n_experts < 1) throw std::invalid_argument("moe: need at least one expert");
  if (k < 1 || k > n_experts) throw std::invalid_argument("moe: need 1 <= top_k <= experts");
  for (std::int64_t e = 0; e < n_experts; ++e) experts.emplace_back(d, hidden, rng);
}

MoELayer::Out MoELayer::forward(const Tensor& x) const {
  std::int64_t T = x.rows();
  std::int64_t E = static_cast<std::int64_t>(experts.size());
  Tensor probs = ops::softmax_rows(ops::add_bias(ops::matmul(x, router_w), router_b));

  // load balance: soft per-expert load (mean router probability) vs uniform
  Tensor pool = Tensor::full(1, T, 1.0 / static_cast<double>(T), x.dtype());
  Tensor dev = ops::add_scalar(ops::matmul(pool, probs), -1.0 / static_cast<double>(E));
  Tensor aux = ops::mean_all(ops::mul(dev, dev));

  // routing decisions are data, not differentiable structure
  std::vector<std::vector<std::int64_t>> assigned(static_cast<std::size_t>(E));
  Tensor mask = Tensor::zeros(T, E, x.dtype());
  for (std::int64_t t = 0; t < T; ++t) {
    std::vector<bool> chosen(static_cast<std::size_t>(E), false);
    for (std::int64_t kk = 0; kk < top_k; ++kk) {
      std::int64_t best = -1;
      for (std::int64_t e = 0; e < E; ++e)
        if (!chosen[static_cast<std::size_t>(e)] &&
            (best < 0 || probs.at(t, e) > probs.at(t, best)))
          best = e;
      chosen[static_cast<std::size_t>(best)] = true;
      mask.set(t, best, 1.0);
      assigned[static_cast<std::size_t>(best)].push_back(t);
    }
  }

  Tensor masked = ops::mul(probs, mask);
  Tensor ones = Tensor::full(E, 1, 1.0, x.dtype());
  Tensor weights = ops::div_rowwise(masked, ops::matmul(masked, ones));

  Tensor y;
  for (std::int64_t e = 0; e < E; ++e) {
    const auto& rows = assigned[static_cast<std::size_t>(e)];
    if (rows.empty()) continue;
    Tensor xe = ops::gather_rows(x, rows);
    Tensor ye = experts[static_cast<std::size_t>(e)].forward(xe);
    Tensor we = ops::gather_rows(ops::slice_cols(weights, e, 1), rows);
    accumulate(y, ops::scatter_rows(ops::mul_rowwise(ye, we), rows, T));
  }
  return {y, aux};
}

void MoELayer::collect_params(const std::string& prefix, ParamList& out) {
  out.emplace_back(prefix + ".router_w", router_w);
  out.emplace_back(prefix + ".router_b", router_b);
  for (std::size_t e = 0; e < experts.size(); ++e)
    experts[e].collect_params(prefix + ".expert" + std::to_string(e), out);
}

DecoderLayer::DecoderLayer(const ModelConfig& cfg, bool has_memory, Rng& rng)
    : norm1(gain(cfg.d_model)),
      norm3(gain(cfg.d_model)),
      self_attn(cfg.attention_config(), rng),
      moe(cfg.d_model, cfg.ffn_hidden, cfg.moe_experts, cfg.moe_top_k, rng) {
  if (has_memory) {
    norm2 = gain(cfg.d_model);
    cross_attn.emplace(cfg.attention_config(), rng);
  }
}

Tensor DecoderLayer::forward(const Tensor& x, const std::vector<std::int64_t>& positions,
                             const Tensor& mem, Tensor& aux_sum) const {
  Tensor h = ops::add(x, self_attn.self_attention(ops::rms_norm(x, norm1), positions, true));
  if (cross_attn)
    h = ops::add(h, cross_attn->cross_attend(ops::rms_norm(h, norm2), mem, positions));
  MoELayer::Out mo = moe.forward(ops::rms_norm(h, norm3));
  accumulate(aux_sum, mo.aux);
  return ops::add(h, mo.y);
}

Tensor DecoderLayer::forward_cached(const Tensor& x, KVCache& cache, std::int64_t start_position,
                                    const ProjectedKV* mem_kv, Tensor& aux_sum) const {
  Tensor h =
      ops::add(x, self_attn.self_attention_cached(ops::rms_norm(x, norm1), cache, start_position));
  if (cross_attn) {
    std::vector<std::int64_t> positions = iota_positions(start_position, x.rows());
    h = ops::add(h,
                 cross_attn->cross_attend_precomputed(ops::rms_norm(h, norm2), *mem_kv, positions));
  }
  MoELayer::Out mo = moe.forward(ops::rms_norm(h, norm3));
  accumulate(aux_sum, mo.aux);
  return ops::add(h, mo.y);
}

void DecoderLayer::collect_params(const std::string& prefix, ParamList& out) {
  out.emplace_back(prefix + ".norm1", norm1);
  self_attn.collect_params(prefix + ".self", out);
  if (cross_attn) {
    out.emplace_back(prefix + ".norm2", norm2);
    cross_attn->collect_params(prefix + ".cross", out);
  }
  out.emplace_back(prefix + ".norm3", norm3);
  moe.collect_params(prefix + ".moe", out);
}

EncoderLayer::EncoderLayer(const ModelConfig& cfg, Rng& rng)
    : norm1(gain(cfg.d_model)),
      norm2(gain(cfg.d_model)),
      self_attn(cfg.attention_config(), rng),
      ffn(cfg.d_model, cfg.ffn_hidden, rng) {}

Tensor EncoderLayer::forward(const Tensor& x, const std::vector<std::int64_t>& positions) const {
  Tensor h = ops::add(x, self_attn.self_attention(ops::rms_norm(x, norm1), positions, false));
  return ops::add(h, ffn.forward(ops::rms_norm(h, norm2)));
}

void EncoderLayer::collect_params(const std::string& prefix, ParamList& out) {
  out.emplace_back(prefix + ".norm1", norm1);
  self_attn.collect_params(prefix + ".self", out);
  out.emplace_back(prefix + ".norm2", norm2);
  ffn.collect_params(prefix + ".ffn", out);
}

ReactiveModel::ReactiveModel(const ModelConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  embedding_ = Tensor::randn(cfg_.vocab_size, cfg_.d_model, rng_, 0.02).set_requires_grad();
  for (std::int64_t l = 0; l < cfg_.l_layers; ++l) enc_.emplace_back(cfg_, rng_);
  for (std::int64_t l = 0; l < cfg_.l_layers; ++l) dec_.emplace_back(cfg_, true, rng_);
  if (cfg_.l_layers > 0) {
    memory_.emplace(cfg_.l_layers, cfg_.s_mem, cfg_.attention_config(), cfg_.variant, cfg_.gate,
                    rng_);
    dec_norm_ = gain(cfg_.d_model);
    enc_norm_ = gain(cfg_.d_model);
    mlm_w_ = Tensor::randn(cfg_.d_model, cfg_.vocab_size, rng_,
                           1.0 / std::sqrt(static_cast<double>(cfg_.d_model)))
                 .set_requires_grad();
    mlm_b_ = Tensor::zeros(1, cfg_.vocab_size).set_requires_grad();
  }
}

EncodedData ReactiveModel::encoder_forward(const std::vector<int>& tokens) const {
  check_interaction_len(tokens, cfg_.max_interaction_len);
  Tensor h = ops::embedding(embedding_, tokens);
  std::vector<std::int64_t> positions = iota_positions(0, h.rows());
  EncodedData ed;
  for (const EncoderLayer& layer : enc_) {
    h = layer.forward(h, positions);
    ed.layers.push_back(h);
  }
  return ed;
}

Tensor ReactiveModel::mlm_logits(const Tensor& encoder_final) const {
  if (cfg_.l_layers == 0) throw std::logic_error("mlm_logits: model has no encoder layers");
  return ops::add_bias(ops::matmul(ops::rms_norm(encoder_final, enc_norm_), mlm_w_), mlm_b_);
}

ModelOutput ReactiveModel::decoder_forward(const std::vector<int>& tokens,
                                           const std::vector<Tensor>& memory) const {
  check_interaction_len(tokens, cfg_.max_interaction_len);
  if (static_cast<std::int64_t>(memory.size()) != cfg_.l_layers)
    throw std::invalid_argument("decoder: got " + std::to_string(memory.size()) +
                                " memory layers for " + std::to_string(cfg_.l_layers) +
                                " decoder layers");
  Tensor h = ops::embedding(embedding_, tokens);
  std::vector<std::int64_t> positions = iota_positions(0, h.rows());
  Tensor aux;
  for (std::size_t l = 0; l < dec_.size(); ++l)
    h = dec_[l].forward(h, positions, memory[l], aux);
  if (!dec_.empty()) h = ops::rms_norm(h, dec_norm_);
  Tensor logits = ops::matmul_nt(h, embedding_);
  if (!aux.defined()) aux = Tensor::zeros(1, 1, h.dtype());
  return {logits, aux};
}

ModelOutput ReactiveModel::decoder_forward(const std::vector<int>& tokens,
                                           const ShortTermMemory& stm) const {
  return decoder_forward(tokens, stm.slots());
}

DecoderSession ReactiveModel::begin_session(const std::vector<Tensor>& memory) const {
  if (static_cast<std::int64_t>(memory.size()) != cfg_.l_layers)
    throw std::invalid_argument("session: got " + std::to_string(memory.size()) +
                                " memory layers for " + std::to_string(cfg_.l_layers) +
                                " decoder layers");
  DecoderSession s;
  for (std::size_t l = 0; l < dec_.size(); ++l) {
    s.caches.emplace_back(cfg_.max_interaction_len, cfg_.d_model, DType::F64);
    s.mem_kv.push_back(dec_[l].cross_attn->precompute_kv(memory[l]));
  }
  return s;
}

DecoderSession ReactiveModel::begin_session(const ShortTermMemory& stm) const {
  return begin_session(stm.slots());
}

ModelOutput ReactiveModel::decode_step(const std::vector<int>& tokens,
                                       DecoderSession& session) const {
  check_interaction_len(tokens, cfg_.max_interaction_len);
  Tensor h = ops::embedding(embedding_, tokens);
  Tensor aux;
  for (std::size_t l = 0; l < dec_.size(); ++l)
    h = dec_[l].forward_cached(h, session.caches[l], session.position, &session.mem_kv[l], aux);
  session.position += h.rows();
  if (!dec_.empty()) h = ops::rms_norm(h, dec_norm_);
  Tensor logits = ops::matmul_nt(h, embedding_);
  if (!aux.defined()) aux = Tensor::zeros(1, 1, h.dtype());
  return {logits, aux};
}

ParamList ReactiveModel::parameters() {
  ParamList out;
  out.emplace_back("embedding.table", embedding_);
  for (std::size_t l = 0; l < enc_.size(); ++l)
    enc_[l].collect_params("encoder.layer" + std::to_string(l), out);
  for (std::size_t l = 0; l < dec_.size(); ++l)
    dec_[l].collect_params("decoder.layer" + std::to_string(l), out);
  if (cfg_.l_layers > 0) {
    out.emplace_back("encoder.norm", enc_norm_);
    out.emplace_back("decoder.norm", dec_norm_);
    out.emplace_back("mlm.w", mlm_w_);
    out.emplace_back("mlm.b", mlm_b_);
    memory_->collect_params("memory", out);
  }
  return out;
}

namespace {

std::map<std::string, std::int64_t> census_of(const ParamList& params) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& [name, t] : params)
    counts[name.substr(0, name.find('.'))] += t.rows() * t.cols();
  return counts;
}

std::int64_t total_of(const std::map<std::string, std::int64_t>& census) {
  std::int64_t total = 0;
  for (const auto& [component, count] : census) total += count;
  return total;
}

}  // namespace

std::map<std::string, std::int64_t> ReactiveModel::parameter_census() {
  return census_of(parameters());
}

std::int64_t ReactiveModel::parameter_count() { return total_of(parameter_census()); }

void ReactiveModel::save(const std::string& path) {
  ckpt::save(path, ckpt::kKindReactive, cfg_, parameters(), rng_);
}

ReactiveModel ReactiveModel::load(const std::string& path) {
  ckpt::Header h = ckpt::read_header(path);
  ReactiveModel model(h.cfg);
  model.load_params(path);
  return model;
}

void ReactiveModel::load_params(const std::string& path) {
  ckpt::load_params(path, ckpt::kKindReactive, cfg_, parameters(), rng_);
}

BaselineModel::BaselineModel(const ModelConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  embedding_ = Tensor::randn(cfg_.vocab_size, cfg_.d_model, rng_, 0.02).set_requires_grad();
  for (std::int64_t l = 0; l < cfg_.l_layers; ++l) dec_.emplace_back(cfg_, false, rng_);
  if (cfg_.l_layers > 0) dec_norm_ = gain(cfg_.d_model);
}

void BaselineModel::check_length(std::int64_t total) const {
  if (total > cfg_.baseline_context_limit)
    throw std::runtime_error(
        "baseline: history of " + std::to_string(total) + " tokens exceeds the context limit of " +
        std::to_string(cfg_.baseline_context_limit) +
        " (a stateless decoder re-ingests the whole conversation every turn)");
}

ModelOutput BaselineModel::forward(const std::vector<int>& history) const {
  if (history.empty()) throw std::invalid_argument("forward: empty token list");
  check_length(static_cast<std::int64_t>(history.size()));
  Tensor h = ops::embedding(embedding_, history);
  std::vector<std::int64_t> positions = iota_positions(0, h.rows());
  Tensor aux;
  for (const DecoderLayer& layer : dec_) h = layer.forward(h, positions, Tensor(), aux);
  if (!dec_.empty()) h = ops::rms_norm(h, dec_norm_);
  Tensor logits = ops::matmul_nt(h, embedding_);
  if (!aux.defined()) aux = Tensor::zeros(1, 1, h.dtype());
  return {logits, aux};
}

BaselineModel::Session BaselineModel::begin_session() const {
  Session s;
  for (std::size_t l = 0; l < dec_.size(); ++l)
    s.caches.emplace_back(cfg_.baseline_context_limit, cfg_.d_model, DType::F64);
  return s;
}

ModelOutput BaselineModel::decode_step(const std::vector<int>& tokens, Session& session) const {
  if (tokens.empty()) throw std::invalid_argument("forward: empty token list");
  check_length(session.position + static_cast<std::int64_t>(tokens.size()));
  Tensor h = ops::embedding(embedding_, tokens);
  Tensor aux;
  for (std::size_t l = 0; l < dec_.size(); ++l)
    h = dec_[l].forward_cached(h, session.caches[l], session.position, nullptr, aux);
  session.position += h.rows();
  if (!dec_.empty()) h = ops::rms_norm(h, dec_norm_);
  Tensor logits = ops::matmul_nt(h, embedding_);
  if (!aux.defined()) aux = Tensor::zeros(1, 1, h.dtype());
  return {logits, aux};
}

ParamList BaselineModel::parameters() {
  ParamList out;
  out.emplace_back("embedding.table", embedding_);
  for (std::size_t l = 0; l < dec_.size(); ++l)
    dec_[l].collect_params("decoder.layer" + std::to_string(l), out);
  if (cfg_.l_layers > 0) out.emplace_back("decoder.norm", dec_norm_);
  return out;
}

std::map<std::string, std::int64_t> BaselineModel::parameter_census() {
  return census_of(parameters());
}

std::int64_t BaselineModel::parameter_count() { return total_of(parameter_census()); }

void BaselineModel::save(const std::string& path) {
  ckpt::save(path, ckpt::kKindBaseline, cfg_, parameters(), rng_);
}

BaselineModel BaselineModel::load(const std::string& path) {
  ckpt::Header h = ckpt::read_header(path);
  BaselineModel model(h.cfg);
  model.load_params(path);
  return model;
}

void BaselineModel::load_params(const std::string& path) {
  ckpt::load_params(path, ckpt::kKindBaseline, cfg_, parameters(), rng_);
}

}  // namespace eventlm
