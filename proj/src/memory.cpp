#include "eventlm/memory.hpp"

#include <cmath>
#include <stdexcept>

#include "eventlm/ops.hpp"

namespace eventlm {

void ResidualGateConfig::validate() const {
  if (activation == GateActivation::None && !allow_ungated)
    throw std::invalid_argument(
        "gate config: ungated residual (activation=none) must be enabled explicitly; it lets "
        "memory magnitudes grow without bound");
}

const char* variant_name(MemoryAttentionVariant v) {
  switch (v) {
    case MemoryAttentionVariant::Simple: return "simple";
    case MemoryAttentionVariant::SelfAttn: return "self";
    case MemoryAttentionVariant::Interlayer: return "interlayer";
    default: return "gated-self-interlayer";
  }
}

MemoryAttentionVariant variant_from_name(const std::string& name) {
  if (name == "simple") return MemoryAttentionVariant::Simple;
  if (name == "self") return MemoryAttentionVariant::SelfAttn;
  if (name == "interlayer") return MemoryAttentionVariant::Interlayer;
  if (name == "gated-self-interlayer") return MemoryAttentionVariant::GatedSelfInterlayer;
  throw std::invalid_argument("unknown memory attention variant '" + name + "'");
}

ShortTermMemory::ShortTermMemory(std::vector<Tensor> slots, std::uint64_t version)
    : slots_(std::move(slots)), version_(version) {
  if (slots_.empty()) throw std::invalid_argument("short-term memory: no layers");
  for (const Tensor& s : slots_)
    if (s.rows() != slots_[0].rows() || s.cols() != slots_[0].cols())
      throw std::invalid_argument("short-term memory: layer shapes differ");
}

const Tensor& ShortTermMemory::layer(std::int64_t l) const {
  if (l < 0 || l >= layers())
    throw std::out_of_range("short-term memory: layer " + std::to_string(l) + " of " +
                            std::to_string(layers()));
  return slots_[static_cast<std::size_t>(l)];
}

ShortTermMemory ShortTermMemory::detached_clone() const {
  std::vector<Tensor> copy;
  copy.reserve(slots_.size());
  for (const Tensor& s : slots_) copy.push_back(s.detach());
  return ShortTermMemory(std::move(copy), version_);
}

ResidualGate::ResidualGate(const ResidualGateConfig& cfg, std::int64_t dim, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.dynamics == GateDynamics::Dynamic)
    wg_ = Tensor::randn(dim, dim, rng, 1.0 / std::sqrt(static_cast<double>(dim)))
              .set_requires_grad();
  // zero bias starts sigmoid gates at an even blend and tanh gates at plain
  // residual behavior
  bg_ = Tensor::zeros(1, dim).set_requires_grad();
}

Tensor ResidualGate::apply(const Tensor& prev, const Tensor& update) const {
  if (prev.rows() != update.rows() || prev.cols() != update.cols())
    throw std::invalid_argument("gate: prev " + prev.shape_str() + " vs update " +
                                update.shape_str());
  if (cfg_.activation == GateActivation::None) return ops::add(prev, update);

  Tensor pre;
  if (cfg_.dynamics == GateDynamics::Dynamic) {
    pre = ops::add_bias(ops::matmul(ops::add(prev, update), wg_), bg_);
  } else {
    // broadcast the learned [1×D] vector over slots
    Tensor ones = Tensor::full(prev.rows(), 1, 1.0, prev.dtype());
    pre = ops::matmul(ones, bg_);
  }
  if (cfg_.activation == GateActivation::Sigmoid) {
    Tensor g = ops::sigmoid(pre);
    Tensor keep = ops::scale(ops::add_scalar(g, -1.0), -1.0);  // 1 - G
    return ops::add(ops::mul(keep, prev), ops::mul(g, update));
  }
  Tensor g = ops::tanh(pre);
  Tensor keep = ops::scale(ops::add_scalar(g, -1.0), -1.0);  // 1 - G
  Tensor amplify = ops::add_scalar(g, 1.0);                  // 1 + G
  return ops::add(ops::mul(keep, prev), ops::mul(amplify, update));
}

void ResidualGate::collect_params(const std::string& prefix, ParamList& out) {
  if (wg_.defined()) out.emplace_back(prefix + ".wg", wg_);
  out.emplace_back(prefix + ".bg", bg_);
}

void ResidualGate::cast_params(DType dt) {
  if (wg_.defined()) wg_ = wg_.to(dt);
  bg_ = bg_.to(dt);
}

MemoryAttention::MemoryAttention(std::int64_t layers, std::int64_t slot_count,
                                 const AttentionConfig& acfg, MemoryAttentionVariant variant,
                                 const ResidualGateConfig& gate_cfg, Rng& rng)
    : variant_(variant), slot_count_(slot_count) {
  if (layers <= 0) throw std::invalid_argument("memory attention: no layers");
  bool uses_inter = variant == MemoryAttentionVariant::Interlayer ||
                    variant == MemoryAttentionVariant::GatedSelfInterlayer;
  bool uses_self = variant == MemoryAttentionVariant::SelfAttn ||
                   variant == MemoryAttentionVariant::GatedSelfInterlayer;
  if (uses_inter && layers < 2)
    throw std::invalid_argument(std::string("memory attention: variant '") +
                                variant_name(variant) + "' needs at least 2 layers");
  std::int64_t d = acfg.model_dim();
  for (std::int64_t l = 0; l < layers; ++l) {
    write_.emplace_back(acfg, rng);
    final_gates_.emplace_back(gate_cfg, d, rng);
    if (uses_self) {
      self_.emplace_back(acfg, rng);
      self_gates_.emplace_back(gate_cfg, d, rng);
    }
    if (uses_inter) {
      inter_.emplace_back(acfg, rng);
      inter_gates_.emplace_back(gate_cfg, d, rng);
    }
  }
}

Tensor MemoryAttention::write_attend(std::int64_t layer, const Tensor& stm_layer,
                                     const Tensor& ed_layer) const {
  return write_[static_cast<std::size_t>(layer)].attend_unpositioned(stm_layer, ed_layer);
}

Tensor MemoryAttention::self_attend(std::int64_t layer, const Tensor& stm_layer) const {
  if (self_.empty())
    throw std::logic_error(std::string("memory attention: variant '") + variant_name(variant_) +
                           "' has no self-attention step");
  return self_[static_cast<std::size_t>(layer)].attend_unpositioned(stm_layer, stm_layer);
}

Tensor MemoryAttention::interlayer_attend(std::int64_t layer, const Tensor& q_state,
                                          const std::vector<Tensor>& stm_all) const {
  std::int64_t L = static_cast<std::int64_t>(stm_all.size());
  if (L < 2) throw std::invalid_argument("interlayer attention needs at least 2 layers");
  Tensor mean;
  for (std::int64_t o = 0; o < L; ++o) {
    if (o == layer) continue;
    mean = mean.defined() ? ops::add(mean, stm_all[static_cast<std::size_t>(o)])
                          : stm_all[static_cast<std::size_t>(o)];
  }
  mean = ops::scale(mean, 1.0 / static_cast<double>(L - 1));
  return interlayer_attend_kv(layer, q_state, mean);
}

Tensor MemoryAttention::interlayer_attend_kv(std::int64_t layer, const Tensor& q_state,
                                             const Tensor& kv) const {
  if (inter_.empty())
    throw std::logic_error(std::string("memory attention: variant '") + variant_name(variant_) +
                           "' has no interlayer step");
  return inter_[static_cast<std::size_t>(layer)].attend_unpositioned(q_state, kv);
}

std::vector<Tensor> MemoryAttention::update(const std::vector<Tensor>& stm_prev,
                                            const std::vector<Tensor>& ed) const {
  std::int64_t L = layer_count();
  if (static_cast<std::int64_t>(stm_prev.size()) != L ||
      static_cast<std::int64_t>(ed.size()) != L)
    throw std::invalid_argument("memory attention: got " + std::to_string(stm_prev.size()) +
                                " state layers and " + std::to_string(ed.size()) +
                                " encoded layers for depth " + std::to_string(L));
  std::vector<Tensor> next;
  next.reserve(static_cast<std::size_t>(L));
  for (std::int64_t l = 0; l < L; ++l) {
    const Tensor& prev = stm_prev[static_cast<std::size_t>(l)];
    if (prev.rows() != slot_count_)
      throw std::invalid_argument("memory attention: layer " + std::to_string(l) + " has " +
                                  std::to_string(prev.rows()) + " slots, expected " +
                                  std::to_string(slot_count_));
    Tensor q = prev;
    if (variant_ == MemoryAttentionVariant::SelfAttn ||
        variant_ == MemoryAttentionVariant::GatedSelfInterlayer)
      q = self_gates_[static_cast<std::size_t>(l)].apply(q, self_attend(l, q));
    if (variant_ == MemoryAttentionVariant::Interlayer ||
        variant_ == MemoryAttentionVariant::GatedSelfInterlayer)
      q = inter_gates_[static_cast<std::size_t>(l)].apply(q, interlayer_attend(l, q, stm_prev));
    Tensor upd = write_attend(l, q, ed[static_cast<std::size_t>(l)]);
    // final gate anchors to the incoming state, so G=0 reproduces it exactly
    next.push_back(final_gates_[static_cast<std::size_t>(l)].apply(prev, upd));
  }
  return next;
}

void MemoryAttention::collect_params(const std::string& prefix, ParamList& out) {
  for (std::size_t l = 0; l < write_.size(); ++l) {
    std::string base = prefix + ".layer" + std::to_string(l);
    write_[l].collect_params(base + ".write", out);
    final_gates_[l].collect_params(base + ".final_gate", out);
    if (l < self_.size()) {
      self_[l].collect_params(base + ".self", out);
      self_gates_[l].collect_params(base + ".self_gate", out);
    }
    if (l < inter_.size()) {
      inter_[l].collect_params(base + ".inter", out);
      inter_gates_[l].collect_params(base + ".inter_gate", out);
    }
  }
}

void MemoryAttention::cast_params(DType dt) {
  for (auto& m : write_) m.cast_params(dt);
  for (auto& m : self_) m.cast_params(dt);
  for (auto& m : inter_) m.cast_params(dt);
  for (auto& g : final_gates_) g.cast_params(dt);
  for (auto& g : self_gates_) g.cast_params(dt);
  for (auto& g : inter_gates_) g.cast_params(dt);
}

MemorySystem::MemorySystem(std::int64_t layers, std::int64_t slot_count,
                           const AttentionConfig& acfg, MemoryAttentionVariant variant,
                           const ResidualGateConfig& gate_cfg, Rng& rng)
    : layers_(layers),
      slot_count_(slot_count),
      dim_(acfg.model_dim()),
      attn_(layers, slot_count, acfg, variant, gate_cfg, rng) {
  for (std::int64_t l = 0; l < layers; ++l)
    init_params_.push_back(Tensor::randn(slot_count, dim_, rng, 0.02).set_requires_grad());
}

ShortTermMemory MemorySystem::initial_state() const {
  std::vector<Tensor> slots;
  for (const Tensor& p : init_params_) slots.push_back(p.detach());
  return ShortTermMemory(std::move(slots), 0);
}

ShortTermMemory MemorySystem::initial_state_noised(Rng& rng, double sigma) const {
  std::vector<Tensor> slots;
  for (const Tensor& p : init_params_) {
    Tensor noise = Tensor::randn(slot_count_, dim_, rng, sigma);
    slots.push_back(ops::add(p, noise));
  }
  return ShortTermMemory(std::move(slots), 0);
}

ShortTermMemory MemorySystem::update(const ShortTermMemory& prev, const EncodedData& ed) const {
  if (prev.layers() != layers_)
    throw std::invalid_argument("memory update: state has " + std::to_string(prev.layers()) +
                                " layers, system has " + std::to_string(layers_));
  if (static_cast<std::int64_t>(ed.layers.size()) != layers_)
    throw std::invalid_argument("memory update: encoded data has " +
                                std::to_string(ed.layers.size()) + " layers, system has " +
                                std::to_string(layers_));
  std::vector<Tensor> next = attn_.update(prev.slots(), ed.layers);
  return ShortTermMemory(std::move(next), prev.version() + 1);
}

void MemorySystem::collect_params(const std::string& prefix, ParamList& out) {
  for (std::size_t l = 0; l < init_params_.size(); ++l)
    out.emplace_back(prefix + ".init.layer" + std::to_string(l), init_params_[l]);
  attn_.collect_params(prefix + ".attn", out);
}

void MemorySystem::cast_params(DType dt) {
  for (auto& p : init_params_) p = p.to(dt);
  attn_.cast_params(dt);
}

}  // namespace eventlm
