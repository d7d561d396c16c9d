#include "eventlm/tokenizer.hpp"

namespace eventlm::tok {

bool is_special(int id) { return id >= kByteLimit && id < kVocabSize; }

std::vector<int> encode(const std::string& text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char ch : text) ids.push_back(ch < kByteLimit ? ch : '?');
  return ids;
}

std::string decode(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids)
    if (id >= 0 && id < kByteLimit) out.push_back(static_cast<char>(id));
  return out;
}

std::vector<int> interaction(const std::string& query, const std::string& answer) {
  std::vector<int> ids;
  ids.reserve(query.size() + answer.size() + 3);
  ids.push_back(kQuery);
  for (int id : encode(query)) ids.push_back(id);
  ids.push_back(kAnswer);
  for (int id : encode(answer)) ids.push_back(id);
  ids.push_back(kEos);
  return ids;
}

std::vector<std::int64_t> answer_positions(const std::vector<int>& ids) {
  std::vector<std::int64_t> out;
  bool in_answer = false;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] == kAnswer) {
      in_answer = true;
      continue;
    }
    if (!in_answer) continue;
    if (ids[t] == kEos) {
      out.push_back(static_cast<std::int64_t>(t));
      break;
    }
    if (!is_special(ids[t])) out.push_back(static_cast<std::int64_t>(t));
  }
  return out;
}

}  // namespace eventlm::tok
