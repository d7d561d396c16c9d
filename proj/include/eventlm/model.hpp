#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eventlm/attention.hpp"
#include "eventlm/config.hpp"
#include "eventlm/memory.hpp"
#include "eventlm/rng.hpp"
#include "eventlm/tensor.hpp"

namespace eventlm {

// Weight applied to the MoE load-balance loss when it joins a training loss.
constexpr double kMoEAuxWeight = 0.01;

// Two-layer dense FFN with SiLU, used by the encoder and as the expert body.
struct FeedForward {
  Tensor w1, b1, w2, b2;

  FeedForward(std::int64_t d, std::int64_t hidden, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect_params(const std::string& prefix, ParamList& out);
};

// Mixture of experts with softmax routing. The top-k experts per token are
// combined with renormalized router weights (so top-1 passes its expert
// through exactly); the auxiliary loss is the mean squared deviation of the
// soft router load from uniform.
struct MoELayer {
  Tensor router_w, router_b;
  std::vector<FeedForward> experts;
  std::int64_t top_k;

  MoELayer(std::int64_t d, std::int64_t hidden, std::int64_t n_experts, std::int64_t k, Rng& rng);

  struct Out {
    Tensor y;
    Tensor aux;  // [1×1]
  };
  Out forward(const Tensor& x) const;
  void collect_params(const std::string& prefix, ParamList& out);
};

// (logits, summed MoE auxiliary loss) from one decoder pass.
struct ModelOutput {
  Tensor logits;
  Tensor aux;
};

// Pre-norm decoder block: causal self-attention, memory cross-attention when
// the model has a memory path, MoE FFN; residual add around each.
struct DecoderLayer {
  Tensor norm1, norm2, norm3;
  MultiHeadAttention self_attn;
  std::optional<MultiHeadAttention> cross_attn;
  MoELayer moe;

  DecoderLayer(const ModelConfig& cfg, bool has_memory, Rng& rng);

  // Full-sequence pass. mem is this layer's cross-attention K/V source
  // ([N×D], N arbitrary); ignored when the layer has no memory path.
  Tensor forward(const Tensor& x, const std::vector<std::int64_t>& positions, const Tensor& mem,
                 Tensor& aux_sum) const;
  // Incremental pass over a per-interaction KV cache; mem_kv is the
  // pre-projected memory K/V, null when the layer has no memory path.
  Tensor forward_cached(const Tensor& x, KVCache& cache, std::int64_t start_position,
                        const ProjectedKV* mem_kv, Tensor& aux_sum) const;
  void collect_params(const std::string& prefix, ParamList& out);
};

// Pre-norm encoder block: bidirectional self-attention, dense FFN.
struct EncoderLayer {
  Tensor norm1, norm2;
  MultiHeadAttention self_attn;
  FeedForward ffn;

  EncoderLayer(const ModelConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x, const std::vector<std::int64_t>& positions) const;
  void collect_params(const std::string& prefix, ParamList& out);
};

// Per-interaction incremental decoding state: self-attention KV caches plus
// the memory K/V projections, computed once per interaction.
struct DecoderSession {
  std::vector<KVCache> caches;
  std::vector<ProjectedKV> mem_kv;
  std::int64_t position = 0;
};

// The event-driven model: shared embedding table (encoder input, decoder
// input, and output head are one storage), decoder with memory
// cross-attention, encoder producing per-layer EncodedData, the memory
// system, and an MLM head used only during training.
class ReactiveModel {
 public:
  explicit ReactiveModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  bool has_memory() const { return memory_.has_value(); }

  // All L per-layer hidden states of the bidirectional encoder.
  EncodedData encoder_forward(const std::vector<int>& tokens) const;
  // Vocab logits from the encoder's final hidden state (training only).
  Tensor mlm_logits(const Tensor& encoder_final) const;

  // memory[l] feeds layer l's cross-attention; pass STM slots at inference
  // or noised detached encoder outputs during joint training.
  ModelOutput decoder_forward(const std::vector<int>& tokens,
                              const std::vector<Tensor>& memory) const;
  ModelOutput decoder_forward(const std::vector<int>& tokens, const ShortTermMemory& stm) const;

  DecoderSession begin_session(const std::vector<Tensor>& memory) const;
  DecoderSession begin_session(const ShortTermMemory& stm) const;
  ModelOutput decode_step(const std::vector<int>& tokens, DecoderSession& session) const;

  MemorySystem& memory() { return *memory_; }
  const MemorySystem& memory() const { return *memory_; }
  const Tensor& embedding_table() const { return embedding_; }

  // Drives temperature sampling; persisted in checkpoints.
  Rng& sampler_rng() { return rng_; }

  ParamList parameters();
  std::map<std::string, std::int64_t> parameter_census();
  std::int64_t parameter_count();

  void save(const std::string& path);
  static ReactiveModel load(const std::string& path);
  // Loads weights into this model; refuses a checkpoint whose config hash
  // differs from this model's.
  void load_params(const std::string& path);

 private:
  ModelConfig cfg_;
  Rng rng_;
  Tensor embedding_;
  std::vector<EncoderLayer> enc_;
  std::vector<DecoderLayer> dec_;
  std::optional<MemorySystem> memory_;
  Tensor dec_norm_;
  Tensor enc_norm_, mlm_w_, mlm_b_;
};

// Conventional stateless causal decoder over the full accumulated history:
// the same embedding/decoder stack minus the memory path, with a hard
// context limit it reports loudly when a conversation outgrows it.
class BaselineModel {
 public:
  explicit BaselineModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  ModelOutput forward(const std::vector<int>& history) const;

  struct Session {
    std::vector<KVCache> caches;
    std::int64_t position = 0;
  };
  Session begin_session() const;
  ModelOutput decode_step(const std::vector<int>& tokens, Session& session) const;

  Rng& sampler_rng() { return rng_; }

  ParamList parameters();
  std::map<std::string, std::int64_t> parameter_census();
  std::int64_t parameter_count();

  void save(const std::string& path);
  static BaselineModel load(const std::string& path);
  void load_params(const std::string& path);

 private:
  void check_length(std::int64_t total) const;

  ModelConfig cfg_;
  Rng rng_;
  Tensor embedding_;
  std::vector<DecoderLayer> dec_;
  Tensor dec_norm_;
};

}  // namespace eventlm
