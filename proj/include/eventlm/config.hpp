#pragma once

#include <cstdint>
#include <string>

#include "eventlm/attention.hpp"
#include "eventlm/memory.hpp"

namespace eventlm {

// Architecture description shared by the reactive model and the stateless
// baseline. Serialized as JSON, hashed for checkpoint compatibility checks.
struct ModelConfig {
  std::int64_t vocab_size = 256;  // byte-level tokenizer, fixed
  std::int64_t l_layers = 2;
  std::int64_t n_heads = 4;
  std::int64_t d_model = 64;
  std::int64_t s_mem = 16;
  std::int64_t ffn_hidden = 128;
  std::int64_t moe_experts = 4;
  std::int64_t moe_top_k = 1;
  std::int64_t max_interaction_len = 64;
  // The baseline has no memory and must hold whole conversations; sized to
  // fit at least 8 turns of max_interaction_len.
  std::int64_t baseline_context_limit = 1024;
  double rope_base = 10000.0;
  ResidualGateConfig gate;
  MemoryAttentionVariant variant = MemoryAttentionVariant::Simple;
  std::uint64_t seed = 1;

  void validate() const;
  AttentionConfig attention_config() const;

  std::string canonical_json() const;
  std::uint64_t hash() const;  // CRC-64 of the canonical form

  static ModelConfig from_json_text(const std::string& text);
  static ModelConfig load_file(const std::string& path);
  void save_file(const std::string& path) const;
};

// CRC-64/ECMA-182, used for config hashes and checkpoint checksums.
std::uint64_t crc64(const unsigned char* data, std::size_t n, std::uint64_t crc = 0);

}  // namespace eventlm
