#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Fixed byte-level tokenizer: ids 0..250 are literal bytes, the top five ids
// are special tokens. Bytes outside the literal range (251..255) cannot be
// represented and encode as '?'; the synthetic corpora are plain ASCII.
namespace eventlm::tok {

constexpr int kByteLimit = 251;  // ids below this are raw bytes
constexpr int kPad = 251;
constexpr int kMask = 252;
constexpr int kQuery = 253;
constexpr int kAnswer = 254;
constexpr int kEos = 255;
constexpr int kVocabSize = 256;

bool is_special(int id);

std::vector<int> encode(const std::string& text);
// Inverse of encode on representable text; special ids are dropped.
std::string decode(const std::vector<int>& ids);

// One interaction laid out as [Query] X [Answer] Y [EOS].
std::vector<int> interaction(const std::string& query, const std::string& answer);

// Positions t whose ids[t] lies after the [Answer] marker, [EOS] included:
// the answer region, where generation quality is scored.
std::vector<std::int64_t> answer_positions(const std::vector<int>& ids);

}  // namespace eventlm::tok
