#include "eventlm/data.hpp"

#include <fstream>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"

namespace eventlm::data {

std::vector<int> turn_tokens(const DialogueTurn& turn) {
  return tok::interaction(turn.query, turn.answer);
}

std::vector<int> plain_tokens(const DialogueTurn& turn, std::size_t cap) {
  std::vector<int> out = tok::encode(turn.query + " " + turn.answer);
  if (out.size() > cap) out.resize(cap);
  return out;
}

std::vector<int> flatten_dialogue(const Dialogue& d, std::size_t turn_limit) {
  std::vector<int> out;
  std::size_t n = std::min<std::size_t>(turn_limit, d.turns.size());
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> t = turn_tokens(d.turns[i]);
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

std::vector<int> shifted_targets(const std::vector<int>& tokens, bool answer_only) {
  std::vector<int> targets(tokens.size(), -1);
  if (tokens.empty()) return targets;
  std::unordered_set<std::int64_t> answer;
  if (answer_only) {
    for (std::int64_t p : tok::answer_positions(tokens)) answer.insert(p);
  }
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    int next = tokens[t + 1];
    if (next == tok::kPad) continue;
    if (answer_only && answer.count(static_cast<std::int64_t>(t + 1)) == 0) continue;
    targets[t] = next;
  }
  return targets;
}

void save_dialogues(const std::string& path, const std::vector<Dialogue>& dialogues) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open dialogue file for writing: " + path);
  for (const Dialogue& d : dialogues) {
    nlohmann::json turns = nlohmann::json::array();
    for (const DialogueTurn& t : d.turns) {
      turns.push_back({{"q", t.query}, {"a", t.answer}, {"fact_turn", t.fact_turn}});
    }
    nlohmann::json row = {{"id", d.id}, {"turns", turns}};
    out << row.dump() << "\n";
  }
  if (!out) throw std::runtime_error("failed writing dialogue file: " + path);
}

std::vector<Dialogue> load_dialogues(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dialogue file: " + path);
  std::vector<Dialogue> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad dialogue row: " + e.what());
    }
    Dialogue d;
    d.id = row.value("id", std::uint64_t{0});
    if (!row.contains("turns") || !row["turns"].is_array()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": dialogue row lacks turns");
    }
    for (const nlohmann::json& jt : row["turns"]) {
      DialogueTurn t;
      t.query = jt.value("q", std::string());
      t.answer = jt.value("a", std::string());
      t.fact_turn = jt.value("fact_turn", -1);
      if (t.query.empty() || t.answer.empty()) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": turn with empty query or answer");
      }
      d.turns.push_back(std::move(t));
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace eventlm::data
