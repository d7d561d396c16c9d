#pragma once

#include <cstdint>
#include <string>

#include "eventlm/config.hpp"
#include "eventlm/rng.hpp"
#include "eventlm/tensor.hpp"

// Single-file checkpoint: magic, format version, model kind, canonical
// config JSON, sampler RNG state, then named little-endian float64 arrays,
// all covered by a trailing CRC-64. Loading verifies the checksum before
// touching the model; a failed load leaves the model untouched.
namespace eventlm::ckpt {

constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kKindReactive = 1;
constexpr std::uint32_t kKindBaseline = 2;

void save(const std::string& path, std::uint32_t kind, const ModelConfig& cfg,
          const ParamList& params, const Rng& rng);

struct Header {
  std::uint32_t kind = 0;
  ModelConfig cfg;
  std::uint64_t rng_key = 0;
  std::uint64_t rng_counter = 0;
};

// Checksum-verified header read (cheap relative to load_params only in code,
// not in I/O: the whole file is read either way).
Header read_header(const std::string& path);

// Fills the given parameter tensors by name. The checkpoint must carry
// exactly the same named shapes, the same kind, and a config hashing equal
// to `expected`, else the load is refused whole.
void load_params(const std::string& path, std::uint32_t kind, const ModelConfig& expected,
                 const ParamList& params, Rng& rng);

}  // namespace eventlm::ckpt
