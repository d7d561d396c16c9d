#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eventlm/data.hpp"
#include "eventlm/model.hpp"

// Synthetic fact-recall data, the analytic token-cost model, the latency
// benchmark against the stateless reference, evaluation metrics, and the
// CSV/summary emitters behind the bench CLI.
namespace eventlm::bench {

// ---- synthetic dialogues ----------------------------------------------------

// Writes train/val/test.jsonl with templated fact-recall dialogues: early
// turns state attribute/value pairs, fillers pass time, and recall turns ask
// for an attribute whose value never appears in their own query. Deterministic
// in seed, byte for byte.
void gen_dialogues(std::uint64_t seed, int n_dialogues, int n_turns, const std::string& out_dir);

// True when every fact-dependent turn is uncomputable from its own query:
// the answered value does not occur in the query text.
bool fact_dependency_holds(const data::Dialogue& d);

// ---- analytic cost model ----------------------------------------------------

struct CostModelParams {
  int n_turns = 8;
  int t_query = 50;
  int t_answer = 50;
  int s_mem = 16;
  int t() const { return t_query + t_answer; }
  void validate() const;  // all positive
};

enum class Arch { StatelessLlm, Rxt, SyncMat };
std::string arch_name(Arch arch);

struct TurnCost {
  int turn = 0;  // 1-based
  std::int64_t prompt_tokens = 0;
  std::int64_t gen_tokens = 0;
  std::int64_t update_tokens = 0;
  bool update_in_user_path = false;
  std::int64_t user_facing() const {
    return prompt_tokens + gen_tokens + (update_in_user_path ? update_tokens : 0);
  }
};

struct CostReport {
  Arch arch = Arch::StatelessLlm;
  CostModelParams params;
  std::vector<TurnCost> turns;
  std::int64_t cumulative_user_tokens = 0;
};

// Exact per-turn token counts. stateless_llm reprocesses the accumulated
// history every turn: prompt (k-1)*T + T_query. rxt touches T_query + T_answer
// in the user path and T + 1 + S_mem asynchronously (the encoded interaction
// carries its end marker; the write touches every slot). sync_mat re-reads the
// previous answer with the query and pays its S_mem update synchronously.
CostReport conversation_token_cost(const CostModelParams& params, Arch arch);

// ---- latency benchmark ------------------------------------------------------

struct LatencyBenchConfig {
  int n_turns = 8;
  int t_query = 24;   // full decoder prompt tokens per turn, template included
  int t_answer = 24;  // forced generation length
  int repeats = 24;   // timed conversations per architecture
  int warmups = 3;
  void validate() const;
};

struct TurnLatency {
  int turn = 0;  // 1-based
  std::string arch;
  double prompt_s = 0.0;     // median over repeats
  double per_token_s = 0.0;  // median of per-conversation mean
  double update_s = 0.0;     // memory update (rxt), 0 for the baseline
  std::int64_t prompt_tokens = 0;
  std::int64_t gen_tokens = 0;
  std::int64_t update_tokens = 0;  // encoder tokens + written slots
  bool context_overflow = false;
};

struct LatencyReport {
  LatencyBenchConfig config;
  std::vector<TurnLatency> turns;  // rxt rows then baseline rows, turn ascending
};

// Plays the same scripted conversation through both models: the reactive
// engine sees one fixed-size query per turn, the baseline reprocesses its
// whole accumulated history from scratch. Token counters are exact; timings
// are medians over repeats after the warmups. A baseline turn that outgrows
// the context limit is reported as an overflow row instead of aborting.
LatencyReport latency_bench(ReactiveModel& rxt, BaselineModel& baseline,
                            const LatencyBenchConfig& cfg);

// ---- evaluation -------------------------------------------------------------

struct EvalResult {
  double ppl = 0.0;
  double accuracy = 0.0;
  std::int64_t answer_tokens = 0;
};

// Teacher-forced: perplexity is exp(mean cross-entropy) and accuracy the
// argmax-match rate, both over answer tokens only, memory streamed turn by
// turn.
EvalResult evaluate(ReactiveModel& model, const std::vector<data::Dialogue>& dialogues);
// Same metrics for the stateless model conditioned on the flattened history.
EvalResult evaluate(BaselineModel& model, const std::vector<data::Dialogue>& dialogues);

// ---- coherence proxy --------------------------------------------------------

struct CoherenceWeights {
  double bleu = 0.4;
  double ref = 0.4;
  double hist = 0.2;
};

// Add-one smoothed BLEU-4 with a brevity penalty, in [0, 1].
double bleu4_add1(const std::vector<int>& candidate, const std::vector<int>& reference);

struct CoherenceResult {
  double score = 0.0;
  bool empty_response = false;
};

// 10 * (w_b * BLEU4 + w_i * cos(response, reference) + w_h * cos(response,
// history)). Embeddings are means of the encoder's final-layer hidden states;
// the history embedding averages the prior ground-truth interactions, and an
// empty history contributes 0. An empty response scores 0 and is flagged.
CoherenceResult coherence_proxy(ReactiveModel& model, const std::vector<int>& response,
                                const std::vector<int>& reference,
                                const std::vector<std::vector<int>>& history,
                                const CoherenceWeights& w = CoherenceWeights{});

// ---- reports ----------------------------------------------------------------

// latency.csv: turn,arch,prompt_s,per_token_s,update_s,prompt_tokens
void write_latency_csv(const std::string& path, const LatencyReport& report);
// Strict parse of the exact schema write_latency_csv emits; only the columns
// stored in the file are recovered.
LatencyReport read_latency_csv(const std::string& path);

struct CostCsvRow {
  std::string arch;
  int turn = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t gen_tokens = 0;
  std::int64_t update_tokens = 0;
  std::int64_t user_tokens = 0;
  std::int64_t cumulative_user_tokens = 0;
};

// cost.csv: arch,turn,prompt_tokens,gen_tokens,update_tokens,user_tokens,cumulative_user_tokens
void write_cost_csv(const std::string& path, const std::vector<CostReport>& reports);
std::vector<CostCsvRow> read_cost_csv(const std::string& path);

struct MetricsCsvRow {
  std::string arch;
  double ppl = 0.0;
  double accuracy = 0.0;
  std::int64_t answer_tokens = 0;
  double coherence = 0.0;  // nan when the architecture has no encoder
};

// eval.csv: arch,ppl,accuracy,answer_tokens,coherence
void write_metrics_csv(const std::string& path, const std::vector<MetricsCsvRow>& rows);
std::vector<MetricsCsvRow> read_metrics_csv(const std::string& path);

// Rebuilds the headline numbers purely from the CSV files present in out_dir
// (latency.csv, cost.csv, eval.csv), writes out_dir/summary.txt, and returns
// the text.
std::string emit_summary(const std::string& out_dir);

// ---- CLI config -------------------------------------------------------------

struct BenchConfig {
  std::string rxt_checkpoint;
  std::string baseline_checkpoint;
  std::string data_dir;
  LatencyBenchConfig latency;
  CostModelParams cost;
  CoherenceWeights weights;

  static BenchConfig from_json_text(const std::string& text);
  static BenchConfig load_file(const std::string& path);
};

}  // namespace eventlm::bench
