#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "eventlm/model.hpp"
#include "eventlm/tokenizer.hpp"

namespace eventlm {

struct GenerationSettings {
  int max_new_tokens = 48;
  bool greedy = true;
  double temperature = 1.0;                 // sampling only; must be > 0
  std::optional<std::uint64_t> seed;        // reseeds the sampler per call when set
  std::optional<int> stop_token = tok::kEos;

  void validate() const;
};

// One side of an interaction with wall-clock marks (seconds since engine
// start). Query and response events of an interaction share the index.
struct Event {
  enum class Kind { Query, Response };
  Kind kind = Kind::Query;
  std::vector<int> tokens;
  int interaction_index = 0;
  double received_s = 0.0;
  double first_token_s = 0.0;
  double last_token_s = 0.0;
};

// Full bookkeeping for one query→response→update cycle. Latency fields are
// disjoint by construction: the memory update starts only after last_token_s.
// The update fields are zero until the background commit lands; records()
// returns them filled once the engine is idle.
struct InteractionRecord {
  int index = 0;
  Event query;
  Event response;
  std::vector<int> query_tokens;     // raw bytes, no control tokens
  std::vector<int> response_tokens;  // generated, stop token trimmed

  std::uint64_t stm_version_used = 0;
  std::uint64_t stm_version_produced = 0;  // used + 1

  double blocked_s = 0.0;  // waiting on the previous interaction's commit
  double prompt_s = 0.0;
  double generate_s = 0.0;
  double per_token_mean_s = 0.0;
  double memory_update_s = 0.0;
  double prompt_begin_s = 0.0;
  double prompt_end_s = 0.0;
  double generate_end_s = 0.0;
  double update_begin_s = 0.0;
  double update_end_s = 0.0;

  std::int64_t prompt_tokens = 0;          // [Query] X [Answer]
  std::int64_t generated_tokens = 0;
  std::int64_t update_encoder_tokens = 0;  // [Query] X [Answer] Y [EOS]
  std::int64_t update_slots = 0;           // S_mem, per layer

  bool update_committed = false;
  std::string update_error;
};

// The event-driven inference cycle around one ReactiveModel: synchronous
// response generation against the committed memory state, asynchronous
// encode+update producing the next state, atomic version handoff. A new
// interact() blocks until the previous update commits, so the state carried
// into turn t+1 is always STM_t (back-pressure, never queue or drop).
class ReactiveEngine {
 public:
  struct Options {
    bool async_updates = true;    // false: update runs inline before interact returns
    double update_delay_s = 0.0;  // test hook: stretches the update window
    bool fail_updates = false;    // test hook: every update aborts pre-commit
  };

  explicit ReactiveEngine(ReactiveModel& model) : ReactiveEngine(model, Options()) {}
  ReactiveEngine(ReactiveModel& model, Options opt);
  ~ReactiveEngine();
  ReactiveEngine(const ReactiveEngine&) = delete;
  ReactiveEngine& operator=(const ReactiveEngine&) = delete;

  // on_token streams each accepted token (stop token excluded) as it is
  // produced. Blocks first if the previous update is still in flight.
  InteractionRecord interact(const std::vector<int>& query_tokens,
                             const GenerationSettings& settings,
                             const std::function<void(int)>& on_token = {});

  // Blocks until no update is in flight.
  void wait_for_commit();
  // Back to the learned initial state, version 0. Waits for a pending commit.
  void reset();

  std::uint64_t stm_version();
  // Detached copy of the committed state.
  ShortTermMemory committed_stm();
  // Replaces the committed state (session restore, tests). Waits first.
  void set_stm(const ShortTermMemory& stm);

  // Completed records, update timings filled for committed turns.
  std::vector<InteractionRecord> records();
  std::string last_update_error();

  ReactiveModel& model() { return model_; }

 private:
  double now() const;
  void run_update(std::size_t record_index, std::vector<int> encoder_input,
                  ShortTermMemory base);

  ReactiveModel& model_;
  Options opt_;
  std::chrono::steady_clock::time_point epoch_;

  std::mutex mu_;
  std::condition_variable cv_;
  bool pending_ = false;
  ShortTermMemory committed_;
  std::vector<InteractionRecord> records_;
  std::string last_error_;
  std::thread worker_;
  int next_index_ = 0;
};

// Greedy argmax over one logits row, ties to the lowest id; temperature > 0
// draws from softmax(logits/τ) via the given RNG.
int pick_greedy(const Tensor& logits, std::int64_t row);
int pick_sampled(const Tensor& logits, std::int64_t row, double temperature, Rng& rng);

// STM session file: slots + version, checksummed. Refuses shape mismatches.
void save_stm(const std::string& path, const ShortTermMemory& stm);
ShortTermMemory load_stm(const std::string& path);

struct ChatOptions {
  std::string session_log_path;  // JSONL transcript, one object per interaction
  std::string stm_path;          // persist/restore memory across runs; off when empty
  bool async_updates = true;
};

// Line-oriented REPL: reads queries, streams responses, `/reset` drops back
// to STM_0, `/stats` prints the per-turn latency table, EOF or `/quit` shuts
// down after the pending update commits. Returns the process exit code.
int chat_repl(ReactiveModel& model, const GenerationSettings& settings, const ChatOptions& copt,
              std::istream& in, std::ostream& out);

}  // namespace eventlm
