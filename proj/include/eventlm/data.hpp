#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eventlm/tokenizer.hpp"

// Dialogue records shared by the trainer and the benchmark harness. Files are
// line-delimited JSON, one dialogue per line.
namespace eventlm::data {

struct DialogueTurn {
  std::string query;
  std::string answer;
  // index of the earlier turn this answer depends on, -1 when self-contained
  int fact_turn = -1;
};

struct Dialogue {
  std::uint64_t id = 0;
  std::vector<DialogueTurn> turns;
};

// [Query] q [Answer] a [EOS]
std::vector<int> turn_tokens(const DialogueTurn& turn);
// "q a" as raw bytes, truncated to cap; pre-training data without the template
std::vector<int> plain_tokens(const DialogueTurn& turn, std::size_t cap);
// the first turn_limit turns templated back to back (stateless model input)
std::vector<int> flatten_dialogue(const Dialogue& d, std::size_t turn_limit);

// Next-token targets: target[t] = tokens[t+1], with the final position, [PAD]
// successors, and (when answer_only) everything outside the answer span
// ignored as -1.
std::vector<int> shifted_targets(const std::vector<int>& tokens, bool answer_only);

void save_dialogues(const std::string& path, const std::vector<Dialogue>& dialogues);
std::vector<Dialogue> load_dialogues(const std::string& path);

}  // namespace eventlm::data
