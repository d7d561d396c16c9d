#include "eventlm/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "eventlm/rng.hpp"
#include "eventlm/runtime.hpp"
#include "eventlm/tape.hpp"
#include "eventlm/tokenizer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace eventlm::bench {

// ---- synthetic dialogues ----------------------------------------------------

namespace {

// Three disjoint word pools. No value is a substring of any attribute or
// filler, so a recall query can never leak its answer; the checker verifies
// that anyway instead of trusting the pools.
const std::vector<std::string> kAttrs = {
    "alpha", "bravo", "cedar", "delta", "ember", "flint", "gouda", "haven",
    "irons", "jumbo", "koala", "lotus", "maple", "nylon", "olive", "piano"};
const std::vector<std::string> kValues = {
    "red",  "blue", "green", "gold", "pink", "teal", "gray", "cyan",
    "rust", "plum", "mint",  "jade", "navy", "ruby", "sand", "wine"};
const std::vector<std::string> kFillers = {
    "among", "crowd", "drift", "extra", "floor", "habit", "metal", "spoke"};

data::Dialogue make_dialogue(int id, int n_turns, Rng& rng) {
  data::Dialogue d;
  d.id = id;
  std::vector<int> unused(kAttrs.size());
  for (std::size_t i = 0; i < unused.size(); ++i) unused[i] = static_cast<int>(i);
  std::vector<std::size_t> set_turns;  // indexes of turns that stated a fact
  std::vector<std::string> set_value;  // value stated by set_turns[i]

  auto add_set = [&]() {
    std::size_t pick = rng.below(unused.size());
    std::string attr = kAttrs[static_cast<std::size_t>(unused[pick])];
    unused.erase(unused.begin() + static_cast<std::ptrdiff_t>(pick));
    std::string value = kValues[rng.below(kValues.size())];
    set_turns.push_back(d.turns.size());
    set_value.push_back(value);
    d.turns.push_back(data::DialogueTurn{"set " + attr + " " + value, "ok " + attr, -1});
  };

  add_set();
  for (int t = 1; t < n_turns - 1; ++t) {
    if (rng.uniform() < 0.35) {
      add_set();
    } else {
      std::string w = kFillers[rng.below(kFillers.size())];
      d.turns.push_back(data::DialogueTurn{"ping " + w, "pong " + w, -1});
    }
  }
  std::size_t which = rng.below(set_turns.size());
  std::size_t src = set_turns[which];
  std::string attr = d.turns[src].query.substr(4, d.turns[src].query.find(' ', 4) - 4);
  d.turns.push_back(data::DialogueTurn{"get " + attr, set_value[which],
                                       static_cast<int>(src)});
  return d;
}

}  // namespace

bool fact_dependency_holds(const data::Dialogue& d) {
  for (std::size_t t = 0; t < d.turns.size(); ++t) {
    const data::DialogueTurn& turn = d.turns[t];
    if (turn.fact_turn < 0) continue;
    if (static_cast<std::size_t>(turn.fact_turn) >= t) return false;
    if (turn.answer.empty()) return false;
    if (turn.query.find(turn.answer) != std::string::npos) return false;
    // the stated fact must actually be on the record the turn points at
    const data::DialogueTurn& src = d.turns[static_cast<std::size_t>(turn.fact_turn)];
    if (src.query.find(turn.answer) == std::string::npos) return false;
  }
  return true;
}

void gen_dialogues(std::uint64_t seed, int n_dialogues, int n_turns, const std::string& out_dir) {
  if (n_dialogues < 3)
    throw std::invalid_argument("gen: need at least 3 dialogues for disjoint splits, got " +
                                std::to_string(n_dialogues));
  if (n_turns < 2)
    throw std::invalid_argument("gen: fact recall needs at least 2 turns, got " +
                                std::to_string(n_turns));
  // worst case every turn but the last states a fresh fact
  if (static_cast<std::size_t>(n_turns - 1) > kAttrs.size())
    throw std::invalid_argument("gen: template vocabulary of " + std::to_string(kAttrs.size()) +
                                " attributes cannot fill " + std::to_string(n_turns) +
                                "-turn dialogues");

  Rng rng(seed);
  std::vector<data::Dialogue> all;
  for (int i = 0; i < n_dialogues; ++i) {
    all.push_back(make_dialogue(i, n_turns, rng));
    if (!fact_dependency_holds(all.back()))
      throw std::logic_error("gen: produced a dialogue whose fact leaks into its query");
  }

  int n_train = std::max(1, n_dialogues * 8 / 10);
  int n_val = std::max(1, (n_dialogues - n_train) / 2);
  if (n_train + n_val >= n_dialogues) n_train = n_dialogues - n_val - 1;
  fs::create_directories(out_dir);
  auto slice = [&](int lo, int hi) {
    return std::vector<data::Dialogue>(all.begin() + lo, all.begin() + hi);
  };
  data::save_dialogues(out_dir + "/train.jsonl", slice(0, n_train));
  data::save_dialogues(out_dir + "/val.jsonl", slice(n_train, n_train + n_val));
  data::save_dialogues(out_dir + "/test.jsonl", slice(n_train + n_val, n_dialogues));
}

// ---- analytic cost model ----------------------------------------------------

void CostModelParams::validate() const {
  if (n_turns < 1 || t_query < 1 || t_answer < 1 || s_mem < 1)
    throw std::invalid_argument("cost model: every parameter must be positive");
}

std::string arch_name(Arch arch) {
  switch (arch) {
    case Arch::StatelessLlm: return "stateless_llm";
    case Arch::Rxt: return "rxt";
    case Arch::SyncMat: return "sync_mat";
  }
  throw std::logic_error("arch_name: bad enum");
}

CostReport conversation_token_cost(const CostModelParams& params, Arch arch) {
  params.validate();
  CostReport r;
  r.arch = arch;
  r.params = params;
  const std::int64_t T = params.t();
  const std::int64_t Tq = params.t_query, Ta = params.t_answer, S = params.s_mem;
  for (int k = 1; k <= params.n_turns; ++k) {
    TurnCost c;
    c.turn = k;
    c.gen_tokens = Ta;
    switch (arch) {
      case Arch::StatelessLlm:
        c.prompt_tokens = static_cast<std::int64_t>(k - 1) * T + Tq;
        break;
      case Arch::Rxt:
        c.prompt_tokens = Tq;
        c.update_tokens = T + 1 + S;  // interaction + end marker, then every slot
        break;
      case Arch::SyncMat:
        c.prompt_tokens = k == 1 ? Tq : T;  // previous answer rides with the query
        c.update_tokens = S;
        c.update_in_user_path = true;
        break;
    }
    r.cumulative_user_tokens += c.user_facing();
    r.turns.push_back(c);
  }
  return r;
}

// ---- latency benchmark ------------------------------------------------------

void LatencyBenchConfig::validate() const {
  if (n_turns < 1) throw std::invalid_argument("latency bench: n_turns must be positive");
  if (t_query < 3)
    throw std::invalid_argument("latency bench: t_query must be at least 3 (template markers)");
  if (t_answer < 1) throw std::invalid_argument("latency bench: t_answer must be positive");
  if (repeats < 1) throw std::invalid_argument("latency bench: repeats must be positive");
  if (warmups < 0) throw std::invalid_argument("latency bench: warmups must not be negative");
}

namespace {

double median(std::vector<double> xs) {
  std::size_t mid = xs.size() / 2;
  std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid), xs.end());
  double hi = xs[mid];
  if (xs.size() % 2 == 1) return hi;
  std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid) - 1, xs.end());
  return 0.5 * (xs[mid - 1] + hi);
}

// One fixed query per turn: t_query - 2 cycling letter bytes, so the decoder
// prompt [Query] X [Answer] is exactly t_query tokens for every architecture.
std::vector<std::vector<int>> scripted_queries(const LatencyBenchConfig& cfg) {
  std::vector<std::vector<int>> qs;
  for (int k = 0; k < cfg.n_turns; ++k) {
    std::vector<int> q;
    for (int i = 0; i < cfg.t_query - 2; ++i) q.push_back('a' + (k + i) % 26);
    qs.push_back(q);
  }
  return qs;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

LatencyReport latency_bench(ReactiveModel& rxt, BaselineModel& baseline,
                            const LatencyBenchConfig& cfg) {
  cfg.validate();
  if (cfg.t_query + cfg.t_answer + 1 > rxt.config().max_interaction_len)
    throw std::invalid_argument(
        "latency bench: " + std::to_string(cfg.t_query + cfg.t_answer + 1) +
        " interaction tokens exceed max_interaction_len of " +
        std::to_string(rxt.config().max_interaction_len));

  const std::size_t n = static_cast<std::size_t>(cfg.n_turns);
  const std::vector<std::vector<int>> queries = scripted_queries(cfg);
  GenerationSettings gs;
  gs.max_new_tokens = cfg.t_answer;
  gs.greedy = true;
  gs.stop_token = std::nullopt;  // fixed-length turns, both architectures

  LatencyReport report;
  report.config = cfg;
  std::vector<TurnLatency> rxt_rows(n), base_rows(n);
  std::vector<std::vector<double>> rxt_prompt(n), rxt_tok(n), rxt_upd(n);
  std::vector<std::vector<double>> base_prompt(n), base_tok(n);

  // reactive side: inline updates keep the run single-threaded, so the update
  // cost is measured instead of hidden behind the next turn
  {
    ReactiveEngine::Options opt;
    opt.async_updates = false;
    ReactiveEngine engine(rxt, opt);
    for (int run = 0; run < cfg.warmups + cfg.repeats; ++run) {
      engine.reset();
      for (std::size_t k = 0; k < n; ++k) engine.interact(queries[k], gs);
      if (run < cfg.warmups) continue;
      std::vector<InteractionRecord> recs = engine.records();
      for (std::size_t k = 0; k < n; ++k) {
        const InteractionRecord& rec = recs[recs.size() - n + k];
        rxt_prompt[k].push_back(rec.prompt_s);
        rxt_tok[k].push_back(rec.per_token_mean_s);
        rxt_upd[k].push_back(rec.memory_update_s);
        TurnLatency& row = rxt_rows[k];
        row.turn = static_cast<int>(k) + 1;
        row.arch = "rxt";
        row.prompt_tokens = rec.prompt_tokens;
        row.gen_tokens = rec.generated_tokens;
        row.update_tokens = rec.update_encoder_tokens + rec.update_slots;
      }
    }
  }

  // stateless side: a fresh session per turn over the whole accumulated
  // history, which is what serving without state costs
  {
    NoGrad ng;
    for (int run = 0; run < cfg.warmups + cfg.repeats; ++run) {
      std::vector<int> history;
      bool overflowed = false;
      for (std::size_t k = 0; k < n; ++k) {
        std::vector<int> prompt = history;
        prompt.push_back(tok::kQuery);
        prompt.insert(prompt.end(), queries[k].begin(), queries[k].end());
        prompt.push_back(tok::kAnswer);
        TurnLatency& row = base_rows[k];
        row.turn = static_cast<int>(k) + 1;
        row.arch = "stateless_llm";
        row.prompt_tokens = static_cast<std::int64_t>(prompt.size());
        row.gen_tokens = cfg.t_answer;
        if (overflowed ||
            static_cast<std::int64_t>(prompt.size()) + cfg.t_answer >
                baseline.config().baseline_context_limit) {
          overflowed = true;
          row.context_overflow = true;
          history = prompt;  // keep the analytic prompt sizes growing
          history.insert(history.end(), static_cast<std::size_t>(cfg.t_answer), 'x');
          continue;
        }
        auto t0 = std::chrono::steady_clock::now();
        BaselineModel::Session session = baseline.begin_session();
        ModelOutput out = baseline.decode_step(prompt, session);
        double prompt_s = seconds_since(t0);
        int next = pick_greedy(out.logits, out.logits.rows() - 1);
        std::vector<int> generated{next};
        auto t1 = std::chrono::steady_clock::now();
        for (int i = 1; i < cfg.t_answer; ++i) {
          out = baseline.decode_step({next}, session);
          next = pick_greedy(out.logits, out.logits.rows() - 1);
          generated.push_back(next);
        }
        double gen_s = seconds_since(t1);
        if (run >= cfg.warmups) {
          base_prompt[k].push_back(prompt_s);
          base_tok[k].push_back(gen_s / cfg.t_answer);
        }
        history = prompt;
        history.insert(history.end(), generated.begin(), generated.end());
      }
    }
  }

  for (std::size_t k = 0; k < n; ++k) {
    rxt_rows[k].prompt_s = median(rxt_prompt[k]);
    rxt_rows[k].per_token_s = median(rxt_tok[k]);
    rxt_rows[k].update_s = median(rxt_upd[k]);
    if (!base_prompt[k].empty()) {
      base_rows[k].prompt_s = median(base_prompt[k]);
      base_rows[k].per_token_s = median(base_tok[k]);
    } else {
      base_rows[k].prompt_s = std::nan("");
      base_rows[k].per_token_s = std::nan("");
    }
  }
  report.turns = rxt_rows;
  report.turns.insert(report.turns.end(), base_rows.begin(), base_rows.end());
  return report;
}

// ---- evaluation -------------------------------------------------------------

namespace {

struct TokenScore {
  double ce_total = 0.0;
  std::int64_t count = 0;
  std::int64_t hits = 0;

  // answer positions of one turn, given its logits block and the row offset
  // of the turn's first token inside that block
  void score_turn(const Tensor& logits, const std::vector<int>& turn_targets,
                  std::int64_t offset) {
    std::int64_t V = logits.cols();
    for (std::size_t i = 0; i < turn_targets.size(); ++i) {
      int target = turn_targets[i];
      if (target < 0) continue;
      std::int64_t row = offset + static_cast<std::int64_t>(i);
      double mx = logits.at(row, 0);
      std::int64_t arg = 0;
      for (std::int64_t v = 1; v < V; ++v) {
        double x = logits.at(row, v);
        if (x > mx) {
          mx = x;
          arg = v;
        }
      }
      double sum = 0.0;
      for (std::int64_t v = 0; v < V; ++v) sum += std::exp(logits.at(row, v) - mx);
      ce_total += mx + std::log(sum) - logits.at(row, target);
      if (arg == target) ++hits;
      ++count;
    }
  }

  EvalResult finish() const {
    if (count == 0) throw std::runtime_error("eval: no answer tokens");
    return EvalResult{std::exp(ce_total / static_cast<double>(count)),
                      static_cast<double>(hits) / static_cast<double>(count), count};
  }
};

}  // namespace

EvalResult evaluate(ReactiveModel& model, const std::vector<data::Dialogue>& dialogues) {
  if (dialogues.empty()) throw std::invalid_argument("eval: no dialogues");
  NoGrad ng;
  TokenScore score;
  for (const data::Dialogue& d : dialogues) {
    ShortTermMemory stm = model.memory().initial_state();
    for (std::size_t ti = 0; ti < d.turns.size(); ++ti) {
      std::vector<int> tk = data::turn_tokens(d.turns[ti]);
      ModelOutput out = model.decoder_forward(tk, stm);
      score.score_turn(out.logits, data::shifted_targets(tk, true), 0);
      if (ti + 1 < d.turns.size()) stm = model.memory().update(stm, model.encoder_forward(tk));
    }
  }
  return score.finish();
}

EvalResult evaluate(BaselineModel& model, const std::vector<data::Dialogue>& dialogues) {
  if (dialogues.empty()) throw std::invalid_argument("eval: no dialogues");
  NoGrad ng;
  TokenScore score;
  for (const data::Dialogue& d : dialogues) {
    std::vector<int> history;
    for (const data::DialogueTurn& turn : d.turns) {
      std::vector<int> tk = data::turn_tokens(turn);
      std::int64_t offset = static_cast<std::int64_t>(history.size());
      history.insert(history.end(), tk.begin(), tk.end());
      ModelOutput out = model.forward(history);
      score.score_turn(out.logits, data::shifted_targets(tk, true), offset);
    }
  }
  return score.finish();
}

// ---- coherence proxy --------------------------------------------------------

double bleu4_add1(const std::vector<int>& candidate, const std::vector<int>& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  double log_precision = 0.0;
  for (int order = 1; order <= 4; ++order) {
    std::map<std::vector<int>, std::int64_t> ref_counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(order) <= reference.size(); ++i)
      ++ref_counts[std::vector<int>(reference.begin() + static_cast<std::ptrdiff_t>(i),
                                    reference.begin() + static_cast<std::ptrdiff_t>(i) + order)];
    std::map<std::vector<int>, std::int64_t> cand_counts;
    std::int64_t total = 0;
    for (std::size_t i = 0; i + static_cast<std::size_t>(order) <= candidate.size(); ++i) {
      ++cand_counts[std::vector<int>(candidate.begin() + static_cast<std::ptrdiff_t>(i),
                                     candidate.begin() + static_cast<std::ptrdiff_t>(i) + order)];
      ++total;
    }
    std::int64_t matched = 0;
    for (const auto& [gram, c] : cand_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matched += std::min(c, it->second);
    }
    log_precision += 0.25 * std::log(static_cast<double>(matched + 1) /
                                     static_cast<double>(total + 1));
  }
  double bp = candidate.size() >= reference.size()
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(reference.size()) /
                                       static_cast<double>(candidate.size()));
  return bp * std::exp(log_precision);
}

namespace {

std::vector<double> mean_embedding(ReactiveModel& model, const std::vector<int>& tokens) {
  EncodedData ed = model.encoder_forward(tokens);
  const Tensor& h = ed.layers.back();
  std::vector<double> e(static_cast<std::size_t>(h.cols()), 0.0);
  for (std::int64_t r = 0; r < h.rows(); ++r)
    for (std::int64_t c = 0; c < h.cols(); ++c) e[static_cast<std::size_t>(c)] += h.at(r, c);
  for (double& x : e) x /= static_cast<double>(h.rows());
  return e;
}

// similarity clipped at zero so the proxy stays inside [0, 10]
double cosine_clipped(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::max(0.0, dot / std::sqrt(na * nb));
}

}  // namespace

CoherenceResult coherence_proxy(ReactiveModel& model, const std::vector<int>& response,
                                const std::vector<int>& reference,
                                const std::vector<std::vector<int>>& history,
                                const CoherenceWeights& w) {
  if (w.bleu < 0 || w.ref < 0 || w.hist < 0)
    throw std::invalid_argument("coherence: weights must not be negative");
  if (response.empty()) return CoherenceResult{0.0, true};
  if (reference.empty()) throw std::invalid_argument("coherence: empty reference");
  NoGrad ng;
  double bleu = bleu4_add1(response, reference);
  std::vector<double> er = mean_embedding(model, response);
  double c_ref = cosine_clipped(er, mean_embedding(model, reference));
  double c_hist = 0.0;
  if (!history.empty()) {
    std::vector<double> eh;
    for (const std::vector<int>& interaction : history) {
      std::vector<double> e = mean_embedding(model, interaction);
      if (eh.empty()) eh.assign(e.size(), 0.0);
      for (std::size_t i = 0; i < e.size(); ++i) eh[i] += e[i];
    }
    for (double& x : eh) x /= static_cast<double>(history.size());
    c_hist = cosine_clipped(er, eh);
  }
  return CoherenceResult{10.0 * (w.bleu * bleu + w.ref * c_ref + w.hist * c_hist), false};
}

// ---- reports ----------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

// whole-field numeric parses; anything else is a format error
double parse_double(const std::string& file, int line_no, const std::string& field) {
  const char* s = field.c_str();
  char* end = nullptr;
  double v = std::strtod(s, &end);
  if (field.empty() || end != s + field.size())
    throw std::runtime_error(file + ": line " + std::to_string(line_no) +
                             ": bad number '" + field + "'");
  return v;
}

std::int64_t parse_int(const std::string& file, int line_no, const std::string& field) {
  const char* s = field.c_str();
  char* end = nullptr;
  long long v = std::strtoll(s, &end, 10);
  if (field.empty() || end != s + field.size())
    throw std::runtime_error(file + ": line " + std::to_string(line_no) +
                             ": bad integer '" + field + "'");
  return v;
}

struct CsvReader {
  std::string name;
  std::vector<std::string> lines;

  CsvReader(const std::string& path, const std::string& header) {
    name = fs::path(path).filename().string();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open csv: " + path);
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    if (lines.empty() || lines[0] != header)
      throw std::runtime_error(name + ": bad header, expected '" + header + "'");
  }

  std::vector<std::string> fields(std::size_t i, std::size_t n) const {
    std::vector<std::string> f = split_fields(lines[i]);
    if (f.size() != n)
      throw std::runtime_error(name + ": line " + std::to_string(i + 1) + ": expected " +
                               std::to_string(n) + " fields, got " + std::to_string(f.size()));
    return f;
  }
};

const char* kLatencyHeader = "turn,arch,prompt_s,per_token_s,update_s,prompt_tokens";
const char* kCostHeader =
    "arch,turn,prompt_tokens,gen_tokens,update_tokens,user_tokens,cumulative_user_tokens";
const char* kMetricsHeader = "arch,ppl,accuracy,answer_tokens,coherence";

}  // namespace

void write_latency_csv(const std::string& path, const LatencyReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write csv: " + path);
  out << kLatencyHeader << "\n";
  for (const TurnLatency& row : report.turns)
    out << row.turn << ',' << row.arch << ',' << fmt_double(row.prompt_s) << ','
        << fmt_double(row.per_token_s) << ',' << fmt_double(row.update_s) << ','
        << row.prompt_tokens << "\n";
}

LatencyReport read_latency_csv(const std::string& path) {
  CsvReader csv(path, kLatencyHeader);
  LatencyReport report;
  for (std::size_t i = 1; i < csv.lines.size(); ++i) {
    std::vector<std::string> f = csv.fields(i, 6);
    int line_no = static_cast<int>(i) + 1;
    TurnLatency row;
    row.turn = static_cast<int>(parse_int(csv.name, line_no, f[0]));
    row.arch = f[1];
    row.prompt_s = parse_double(csv.name, line_no, f[2]);
    row.per_token_s = parse_double(csv.name, line_no, f[3]);
    row.update_s = parse_double(csv.name, line_no, f[4]);
    row.prompt_tokens = parse_int(csv.name, line_no, f[5]);
    row.context_overflow = std::isnan(row.prompt_s);
    report.turns.push_back(row);
  }
  return report;
}

void write_cost_csv(const std::string& path, const std::vector<CostReport>& reports) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write csv: " + path);
  out << kCostHeader << "\n";
  for (const CostReport& r : reports) {
    std::int64_t cumulative = 0;
    for (const TurnCost& c : r.turns) {
      cumulative += c.user_facing();
      out << arch_name(r.arch) << ',' << c.turn << ',' << c.prompt_tokens << ',' << c.gen_tokens
          << ',' << c.update_tokens << ',' << c.user_facing() << ',' << cumulative << "\n";
    }
  }
}

std::vector<CostCsvRow> read_cost_csv(const std::string& path) {
  CsvReader csv(path, kCostHeader);
  std::vector<CostCsvRow> rows;
  for (std::size_t i = 1; i < csv.lines.size(); ++i) {
    std::vector<std::string> f = csv.fields(i, 7);
    int line_no = static_cast<int>(i) + 1;
    CostCsvRow row;
    row.arch = f[0];
    row.turn = static_cast<int>(parse_int(csv.name, line_no, f[1]));
    row.prompt_tokens = parse_int(csv.name, line_no, f[2]);
    row.gen_tokens = parse_int(csv.name, line_no, f[3]);
    row.update_tokens = parse_int(csv.name, line_no, f[4]);
    row.user_tokens = parse_int(csv.name, line_no, f[5]);
    row.cumulative_user_tokens = parse_int(csv.name, line_no, f[6]);
    rows.push_back(row);
  }
  return rows;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsCsvRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write csv: " + path);
  out << kMetricsHeader << "\n";
  for (const MetricsCsvRow& row : rows)
    out << row.arch << ',' << fmt_double(row.ppl) << ',' << fmt_double(row.accuracy) << ','
        << row.answer_tokens << ',' << fmt_double(row.coherence) << "\n";
}

std::vector<MetricsCsvRow> read_metrics_csv(const std::string& path) {
  CsvReader csv(path, kMetricsHeader);
  std::vector<MetricsCsvRow> rows;
  for (std::size_t i = 1; i < csv.lines.size(); ++i) {
    std::vector<std::string> f = csv.fields(i, 5);
    int line_no = static_cast<int>(i) + 1;
    MetricsCsvRow row;
    row.arch = f[0];
    row.ppl = parse_double(csv.name, line_no, f[1]);
    row.accuracy = parse_double(csv.name, line_no, f[2]);
    row.answer_tokens = parse_int(csv.name, line_no, f[3]);
    row.coherence = parse_double(csv.name, line_no, f[4]);
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string fmt_ratio(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string emit_summary(const std::string& out_dir) {
  std::ostringstream out;

  std::string cost_path = out_dir + "/cost.csv";
  if (fs::exists(cost_path)) {
    std::vector<CostCsvRow> rows = read_cost_csv(cost_path);
    std::vector<std::string> archs;
    std::map<std::string, std::int64_t> totals;
    for (const CostCsvRow& row : rows) {
      if (!totals.count(row.arch)) archs.push_back(row.arch);
      totals[row.arch] = row.cumulative_user_tokens;  // rows come turn-ascending
    }
    for (const std::string& a : archs)
      out << "cost: " << a << " user-facing tokens = " << totals[a] << "\n";
    if (totals.count("stateless_llm") && totals.count("rxt"))
      out << "cost: stateless_llm / rxt = "
          << fmt_ratio(static_cast<double>(totals["stateless_llm"]) /
                       static_cast<double>(totals["rxt"]))
          << "\n";
  }

  std::string latency_path = out_dir + "/latency.csv";
  if (fs::exists(latency_path)) {
    LatencyReport report = read_latency_csv(latency_path);
    std::map<std::string, std::vector<const TurnLatency*>> by_arch;
    std::vector<std::string> archs;
    for (const TurnLatency& row : report.turns) {
      if (!by_arch.count(row.arch)) archs.push_back(row.arch);
      by_arch[row.arch].push_back(&row);
    }
    for (const std::string& a : archs) {
      std::vector<const TurnLatency*>& rows = by_arch[a];
      std::sort(rows.begin(), rows.end(),
                [](const TurnLatency* x, const TurnLatency* y) { return x->turn < y->turn; });
      const TurnLatency* first = rows.front();
      const TurnLatency* last = rows.back();
      int overflowed = 0;
      for (const TurnLatency* row : rows) overflowed += row->context_overflow ? 1 : 0;
      out << "latency: " << a << " prompt tokens turn " << last->turn << " / turn "
          << first->turn << " = " << last->prompt_tokens << " / " << first->prompt_tokens
          << " = "
          << fmt_ratio(static_cast<double>(last->prompt_tokens) /
                       static_cast<double>(first->prompt_tokens))
          << "\n";
      if (!last->context_overflow && !first->context_overflow)
        out << "latency: " << a << " prompt seconds turn " << last->turn << " / turn "
            << first->turn << " = " << fmt_ratio(last->prompt_s / first->prompt_s) << "\n";
      if (overflowed > 0)
        out << "latency: " << a << " overflowed the context limit on " << overflowed
            << " of " << rows.size() << " turns\n";
    }
  }

  std::string metrics_path = out_dir + "/eval.csv";
  if (fs::exists(metrics_path)) {
    for (const MetricsCsvRow& row : read_metrics_csv(metrics_path))
      out << "eval: " << row.arch << " ppl = " << fmt_ratio(row.ppl) << ", accuracy = "
          << fmt_ratio(row.accuracy) << ", coherence = " << fmt_ratio(row.coherence) << "\n";
  }

  std::string text = out.str();
  if (text.empty()) throw std::runtime_error("summary: no csv files in " + out_dir);
  std::ofstream f(out_dir + "/summary.txt");
  if (!f) throw std::runtime_error("cannot write summary: " + out_dir + "/summary.txt");
  f << text;
  return text;
}

// ---- CLI config -------------------------------------------------------------

BenchConfig BenchConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("bench config: not valid JSON: ") + e.what());
  }
  BenchConfig c;
  c.rxt_checkpoint = j.value("rxt_checkpoint", c.rxt_checkpoint);
  c.baseline_checkpoint = j.value("baseline_checkpoint", c.baseline_checkpoint);
  c.data_dir = j.value("data_dir", c.data_dir);
  if (j.contains("latency")) {
    const nlohmann::json& l = j.at("latency");
    c.latency.n_turns = l.value("n_turns", c.latency.n_turns);
    c.latency.t_query = l.value("t_query", c.latency.t_query);
    c.latency.t_answer = l.value("t_answer", c.latency.t_answer);
    c.latency.repeats = l.value("repeats", c.latency.repeats);
    c.latency.warmups = l.value("warmups", c.latency.warmups);
    c.latency.validate();
  }
  if (j.contains("cost")) {
    const nlohmann::json& k = j.at("cost");
    c.cost.n_turns = k.value("n_turns", c.cost.n_turns);
    c.cost.t_query = k.value("t_query", c.cost.t_query);
    c.cost.t_answer = k.value("t_answer", c.cost.t_answer);
    c.cost.s_mem = k.value("s_mem", c.cost.s_mem);
    c.cost.validate();
  }
  if (j.contains("weights")) {
    const nlohmann::json& w = j.at("weights");
    c.weights.bleu = w.value("bleu", c.weights.bleu);
    c.weights.ref = w.value("ref", c.weights.ref);
    c.weights.hist = w.value("hist", c.weights.hist);
  }
  return c;
}

BenchConfig BenchConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open bench config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

}  // namespace eventlm::bench
