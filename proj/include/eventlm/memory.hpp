#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eventlm/attention.hpp"
#include "eventlm/rng.hpp"
#include "eventlm/tensor.hpp"

// Attention-based short-term memory: fixed-size learnable slot state, the
// write path (memory attention variants) and residual gates. The read path
// (decoder cross-attention into the slots) lives with the decoder layers; its
// K/V side is position-free on purpose, so slots have no ordering.
namespace eventlm {

enum class GateActivation { Sigmoid, Tanh, None };
enum class GateDynamics { Dynamic, Static };

struct ResidualGateConfig {
  GateActivation activation = GateActivation::Sigmoid;
  GateDynamics dynamics = GateDynamics::Dynamic;
  // The ungated form (next = prev + update) grows without bound; it must be
  // asked for explicitly.
  bool allow_ungated = false;

  void validate() const;
};

enum class MemoryAttentionVariant { Simple, SelfAttn, Interlayer, GatedSelfInterlayer };

const char* variant_name(MemoryAttentionVariant v);
MemoryAttentionVariant variant_from_name(const std::string& name);

// Slot state: one [S_mem×D] tensor per layer plus an interaction counter.
// Shape never changes after construction; updates produce a new state and
// bump the version by exactly one.
class ShortTermMemory {
 public:
  ShortTermMemory(std::vector<Tensor> slots, std::uint64_t version);

  std::int64_t layers() const { return static_cast<std::int64_t>(slots_.size()); }
  std::int64_t slot_count() const { return slots_[0].rows(); }
  std::int64_t dim() const { return slots_[0].cols(); }
  std::uint64_t version() const { return version_; }

  const Tensor& layer(std::int64_t l) const;
  const std::vector<Tensor>& slots() const { return slots_; }

  ShortTermMemory detached_clone() const;

 private:
  std::vector<Tensor> slots_;
  std::uint64_t version_;
};

// Per-layer encoder outputs for one interaction, consumed by the write path.
struct EncodedData {
  std::vector<Tensor> layers;
};

// G combines previous state and update elementwise:
//   sigmoid: next = (1-G)⊙prev + G⊙update        (convex combination)
//   tanh:    next = (1-G)⊙prev + (1+G)⊙update
//   none:    next = prev + update                 (explicit opt-in)
// Dynamic gates condition on both states, G = act((prev+update)·W_g + b_g);
// static gates broadcast a learned per-layer vector over the slots.
class ResidualGate {
 public:
  ResidualGate(const ResidualGateConfig& cfg, std::int64_t dim, Rng& rng);

  Tensor apply(const Tensor& prev, const Tensor& update) const;
  const ResidualGateConfig& config() const { return cfg_; }

  void collect_params(const std::string& prefix, ParamList& out);
  void cast_params(DType dt);

 private:
  ResidualGateConfig cfg_;
  Tensor wg_;  // [D×D], dynamic only
  Tensor bg_;  // [1×D]
};

// The write network: per layer, optional gated pre-steps (slots attending to
// themselves, slots attending to the mean of the other layers) followed by
// write attention over the encoded interaction and a final gate. The final
// gate always anchors to the incoming state, so a closed gate is exactly a
// no-op update for every variant.
class MemoryAttention {
 public:
  MemoryAttention(std::int64_t layers, std::int64_t slot_count, const AttentionConfig& acfg,
                  MemoryAttentionVariant variant, const ResidualGateConfig& gate_cfg, Rng& rng);

  MemoryAttentionVariant variant() const { return variant_; }
  std::int64_t layer_count() const { return static_cast<std::int64_t>(write_.size()); }

  // Update = Attention(Q=slots, K=V=encoded rows)
  Tensor write_attend(std::int64_t layer, const Tensor& stm_layer, const Tensor& ed_layer) const;
  // Q,K,V all from the layer's own slots
  Tensor self_attend(std::int64_t layer, const Tensor& stm_layer) const;
  // Q from q_state, K/V from the slotwise mean of every other layer
  Tensor interlayer_attend(std::int64_t layer, const Tensor& q_state,
                           const std::vector<Tensor>& stm_all) const;
  // direct access for the degenerate-equality test (same projections, given K/V)
  Tensor interlayer_attend_kv(std::int64_t layer, const Tensor& q_state, const Tensor& kv) const;

  // Full per-layer composition; returns the next slot tensors.
  std::vector<Tensor> update(const std::vector<Tensor>& stm_prev,
                             const std::vector<Tensor>& ed) const;

  const ResidualGate& final_gate(std::int64_t layer) const { return final_gates_[layer]; }

  void collect_params(const std::string& prefix, ParamList& out);
  void cast_params(DType dt);

 private:
  MemoryAttentionVariant variant_;
  std::int64_t slot_count_;
  std::vector<MultiHeadAttention> write_;
  std::vector<MultiHeadAttention> self_;       // SelfAttn, GatedSelfInterlayer
  std::vector<MultiHeadAttention> inter_;      // Interlayer, GatedSelfInterlayer
  std::vector<ResidualGate> final_gates_;
  std::vector<ResidualGate> self_gates_;
  std::vector<ResidualGate> inter_gates_;
};

// Owns the learnable initial slots and the write network; produces and
// advances ShortTermMemory states.
class MemorySystem {
 public:
  MemorySystem(std::int64_t layers, std::int64_t slot_count, const AttentionConfig& acfg,
               MemoryAttentionVariant variant, const ResidualGateConfig& gate_cfg, Rng& rng);

  std::int64_t layers() const { return layers_; }
  std::int64_t slot_count() const { return slot_count_; }
  std::int64_t dim() const { return dim_; }

  // Inference start state: the learned init values, version 0, off-tape.
  ShortTermMemory initial_state() const;
  // Training start state: init + Gaussian noise, kept on the tape so the
  // initial slots learn from unrolled losses.
  ShortTermMemory initial_state_noised(Rng& rng, double sigma) const;

  // next = gate-composed write of ed into prev; version increments by one.
  ShortTermMemory update(const ShortTermMemory& prev, const EncodedData& ed) const;

  const MemoryAttention& attention() const { return attn_; }
  const std::vector<Tensor>& init_params() const { return init_params_; }

  void collect_params(const std::string& prefix, ParamList& out);
  void cast_params(DType dt);

 private:
  std::int64_t layers_;
  std::int64_t slot_count_;
  std::int64_t dim_;
  std::vector<Tensor> init_params_;
  MemoryAttention attn_;
};

}  // namespace eventlm
