#include "eventlm/config.hpp"

#include <array>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace eventlm {

namespace {

const char* activation_name(GateActivation a) {
  switch (a) {
    case GateActivation::Sigmoid: return "sigmoid";
    case GateActivation::Tanh: return "tanh";
    default: return "none";
  }
}

GateActivation activation_from_name(const std::string& name) {
  if (name == "sigmoid") return GateActivation::Sigmoid;
  if (name == "tanh") return GateActivation::Tanh;
  if (name == "none") return GateActivation::None;
  throw std::invalid_argument("unknown gate activation '" + name + "'");
}

const std::array<std::uint64_t, 256>& crc64_table() {
  static const std::array<std::uint64_t, 256> table = [] {
    std::array<std::uint64_t, 256> t{};
    constexpr std::uint64_t poly = 0x42f0e1eba9ea3693ull;
    for (std::uint64_t i = 0; i < 256; ++i) {
      std::uint64_t c = i << 56;
      for (int bit = 0; bit < 8; ++bit) c = (c & 0x8000000000000000ull) ? (c << 1) ^ poly : c << 1;
      t[i] = c;
    }
    return t;
  }();
  return table;
}

}  // namespace

std::uint64_t crc64(const unsigned char* data, std::size_t n, std::uint64_t crc) {
  const auto& table = crc64_table();
  for (std::size_t i = 0; i < n; ++i) crc = (crc << 8) ^ table[((crc >> 56) ^ data[i]) & 0xff];
  return crc;
}

void ModelConfig::validate() const {
  if (vocab_size != 256)
    throw std::invalid_argument("config: vocab_size must be 256 (byte tokenizer is fixed)");
  if (l_layers < 0) throw std::invalid_argument("config: l_layers must be >= 0");
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
    throw std::invalid_argument("config: d_model must be a positive multiple of n_heads");
  if (d_model / n_heads % 2 != 0)
    throw std::invalid_argument("config: head dim must be even for rotary embedding");
  if (s_mem < 1) throw std::invalid_argument("config: s_mem must be >= 1");
  if (ffn_hidden <= 0) throw std::invalid_argument("config: ffn_hidden must be positive");
  if (moe_experts < 1) throw std::invalid_argument("config: moe_experts must be >= 1");
  if (moe_top_k < 1 || moe_top_k > moe_experts)
    throw std::invalid_argument("config: need 1 <= moe_top_k <= moe_experts");
  if (max_interaction_len < 4)
    throw std::invalid_argument("config: max_interaction_len too small for the template");
  if (baseline_context_limit < max_interaction_len)
    throw std::invalid_argument("config: baseline_context_limit below max_interaction_len");
  if (rope_base <= 1.0) throw std::invalid_argument("config: rope_base must exceed 1");
  gate.validate();
  if (l_layers == 1 && (variant == MemoryAttentionVariant::Interlayer ||
                        variant == MemoryAttentionVariant::GatedSelfInterlayer))
    throw std::invalid_argument(std::string("config: variant '") + variant_name(variant) +
                                "' needs at least 2 layers");
}

AttentionConfig ModelConfig::attention_config() const {
  AttentionConfig acfg;
  acfg.n_heads = n_heads;
  acfg.head_dim = d_model / n_heads;
  acfg.rope_base = rope_base;
  return acfg;
}

std::string ModelConfig::canonical_json() const {
  nlohmann::json j;
  j["vocab_size"] = vocab_size;
  j["l_layers"] = l_layers;
  j["n_heads"] = n_heads;
  j["d_model"] = d_model;
  j["s_mem"] = s_mem;
  j["ffn_hidden"] = ffn_hidden;
  j["moe_experts"] = moe_experts;
  j["moe_top_k"] = moe_top_k;
  j["max_interaction_len"] = max_interaction_len;
  j["baseline_context_limit"] = baseline_context_limit;
  j["rope_base"] = rope_base;
  j["gate_activation"] = activation_name(gate.activation);
  j["gate_dynamics"] = gate.dynamics == GateDynamics::Dynamic ? "dynamic" : "static";
  j["gate_allow_ungated"] = gate.allow_ungated;
  j["variant"] = variant_name(variant);
  j["seed"] = seed;
  // nlohmann objects keep keys sorted, so dump() is canonical
  return j.dump(2);
}

std::uint64_t ModelConfig::hash() const {
  std::string text = canonical_json();
  return crc64(reinterpret_cast<const unsigned char*>(text.data()), text.size());
}

ModelConfig ModelConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("config: not valid JSON: ") + e.what());
  }
  ModelConfig cfg;
  auto geti = [&](const char* key, std::int64_t& field) {
    if (j.contains(key)) field = j.at(key).get<std::int64_t>();
  };
  geti("vocab_size", cfg.vocab_size);
  geti("l_layers", cfg.l_layers);
  geti("n_heads", cfg.n_heads);
  geti("d_model", cfg.d_model);
  geti("s_mem", cfg.s_mem);
  geti("ffn_hidden", cfg.ffn_hidden);
  geti("moe_experts", cfg.moe_experts);
  geti("moe_top_k", cfg.moe_top_k);
  geti("max_interaction_len", cfg.max_interaction_len);
  geti("baseline_context_limit", cfg.baseline_context_limit);
  if (j.contains("rope_base")) cfg.rope_base = j.at("rope_base").get<double>();
  if (j.contains("gate_activation"))
    cfg.gate.activation = activation_from_name(j.at("gate_activation").get<std::string>());
  if (j.contains("gate_dynamics")) {
    std::string d = j.at("gate_dynamics").get<std::string>();
    if (d != "dynamic" && d != "static")
      throw std::invalid_argument("config: gate_dynamics must be 'dynamic' or 'static'");
    cfg.gate.dynamics = d == "dynamic" ? GateDynamics::Dynamic : GateDynamics::Static;
  }
  if (j.contains("gate_allow_ungated"))
    cfg.gate.allow_ungated = j.at("gate_allow_ungated").get<bool>();
  if (j.contains("variant")) cfg.variant = variant_from_name(j.at("variant").get<std::string>());
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

ModelConfig ModelConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

void ModelConfig::save_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write " + path);
  out << canonical_json() << "\n";
}

}  // namespace eventlm
