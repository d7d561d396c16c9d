#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eventlm/bench.hpp"
#include "eventlm/runtime.hpp"
#include "eventlm/training.hpp"

namespace {

int run_chat(const std::string& checkpoint, bool greedy, std::optional<double> temp,
             std::optional<std::uint64_t> seed, const std::string& session_log,
             const std::string& stm_path, int max_new_tokens) {
  eventlm::ReactiveModel model = eventlm::ReactiveModel::load(checkpoint);
  eventlm::GenerationSettings settings;
  settings.max_new_tokens = max_new_tokens;
  if (temp) {
    settings.greedy = false;
    settings.temperature = *temp;
  } else {
    settings.greedy = true;
  }
  (void)greedy;  // --greedy is the default; the flag exists to be explicit
  settings.seed = seed;
  settings.validate();

  eventlm::ChatOptions copt;
  copt.session_log_path = session_log;
  copt.stm_path = stm_path;
  return eventlm::chat_repl(model, settings, copt, std::cin, std::cout);
}

int run_train(const std::string& stage, const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
  eventlm::CurriculumConfig cfg = config_path.empty()
                                      ? eventlm::CurriculumConfig{}
                                      : eventlm::CurriculumConfig::load_file(config_path);
  eventlm::run_curriculum(cfg, data_dir, out_dir, stage, std::cout);
  return 0;
}

// Mean proxy score over the model's own greedy responses, each judged against
// the reference answer and the ground-truth turns before it.
double mean_coherence(eventlm::ReactiveModel& model,
                      const std::vector<eventlm::data::Dialogue>& dialogues) {
  eventlm::ReactiveEngine::Options opt;
  opt.async_updates = false;
  eventlm::ReactiveEngine engine(model, opt);
  eventlm::GenerationSettings settings;  // greedy, stops at the end marker
  double total = 0.0;
  std::int64_t count = 0;
  for (const eventlm::data::Dialogue& d : dialogues) {
    engine.reset();
    std::vector<std::vector<int>> history;
    for (const eventlm::data::DialogueTurn& turn : d.turns) {
      eventlm::InteractionRecord rec =
          engine.interact(eventlm::tok::encode(turn.query), settings);
      total += eventlm::bench::coherence_proxy(model, rec.response_tokens,
                                               eventlm::tok::encode(turn.answer), history)
                   .score;
      ++count;
      history.push_back(eventlm::data::turn_tokens(turn));
    }
  }
  return total / static_cast<double>(count);
}

int run_bench(const std::string& mode, const std::string& config_path, const std::string& out_dir) {
  eventlm::bench::BenchConfig cfg = config_path.empty()
                                        ? eventlm::bench::BenchConfig{}
                                        : eventlm::bench::BenchConfig::load_file(config_path);
  std::filesystem::create_directories(out_dir);
  if (mode == "cost") {
    eventlm::bench::write_cost_csv(
        out_dir + "/cost.csv",
        {eventlm::bench::conversation_token_cost(cfg.cost, eventlm::bench::Arch::StatelessLlm),
         eventlm::bench::conversation_token_cost(cfg.cost, eventlm::bench::Arch::Rxt),
         eventlm::bench::conversation_token_cost(cfg.cost, eventlm::bench::Arch::SyncMat)});
  } else if (mode == "latency") {
    if (cfg.rxt_checkpoint.empty() || cfg.baseline_checkpoint.empty())
      throw std::invalid_argument("bench latency: config must name both checkpoints");
    eventlm::ReactiveModel rxt = eventlm::ReactiveModel::load(cfg.rxt_checkpoint);
    eventlm::BaselineModel baseline = eventlm::BaselineModel::load(cfg.baseline_checkpoint);
    eventlm::bench::LatencyReport report = eventlm::bench::latency_bench(rxt, baseline, cfg.latency);
    eventlm::bench::write_latency_csv(out_dir + "/latency.csv", report);
  } else {  // eval
    if (cfg.rxt_checkpoint.empty() || cfg.baseline_checkpoint.empty())
      throw std::invalid_argument("bench eval: config must name both checkpoints");
    if (cfg.data_dir.empty())
      throw std::invalid_argument("bench eval: config must name a data directory");
    eventlm::ReactiveModel rxt = eventlm::ReactiveModel::load(cfg.rxt_checkpoint);
    eventlm::BaselineModel baseline = eventlm::BaselineModel::load(cfg.baseline_checkpoint);
    std::vector<eventlm::data::Dialogue> test =
        eventlm::data::load_dialogues(cfg.data_dir + "/test.jsonl");
    eventlm::bench::EvalResult r = eventlm::bench::evaluate(rxt, test);
    eventlm::bench::EvalResult b = eventlm::bench::evaluate(baseline, test);
    std::vector<eventlm::bench::MetricsCsvRow> rows(2);
    rows[0].arch = "rxt";
    rows[0].ppl = r.ppl;
    rows[0].accuracy = r.accuracy;
    rows[0].answer_tokens = r.answer_tokens;
    rows[0].coherence = mean_coherence(rxt, test);
    rows[1].arch = "stateless_llm";
    rows[1].ppl = b.ppl;
    rows[1].accuracy = b.accuracy;
    rows[1].answer_tokens = b.answer_tokens;
    rows[1].coherence = std::nan("");
    eventlm::bench::write_metrics_csv(out_dir + "/eval.csv", rows);
  }
  std::cout << eventlm::bench::emit_summary(out_dir);
  return 0;
}

int run_gen(std::uint64_t seed, int dialogues, int turns, const std::string& out_dir) {
  eventlm::bench::gen_dialogues(seed, dialogues, turns, out_dir);
  std::cout << "wrote train/val/test.jsonl to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event-driven stateful language model"};
  app.require_subcommand(1);

  auto* chat = app.add_subcommand("chat", "interactive conversation against a checkpoint");
  std::string checkpoint;
  chat->add_option("--checkpoint", checkpoint, "model checkpoint file")->required();
  bool greedy = false;
  std::optional<double> temp;
  auto* greedy_flag = chat->add_flag("--greedy", greedy, "greedy decoding (default)");
  auto* temp_opt = chat->add_option("--temp", temp, "sample with this temperature");
  greedy_flag->excludes(temp_opt);
  std::optional<std::uint64_t> seed;
  chat->add_option("--seed", seed, "sampler seed (reseeds every turn)");
  std::string session_log;
  chat->add_option("--session", session_log, "write a JSONL transcript here");
  std::string stm_path;
  chat->add_option("--memory-file", stm_path, "persist/restore the memory state across runs");
  int max_new_tokens = 48;
  chat->add_option("--max-new-tokens", max_new_tokens, "per-turn generation cap");

  auto* train = app.add_subcommand("train", "run the supervised curriculum");
  std::string stage = "all";
  train->add_option("--stage", stage, "1, 2, 3, 4, baseline, or all")
      ->check(CLI::IsMember({"1", "2", "3", "4", "baseline", "all"}));
  std::string train_config;
  train->add_option("--config", train_config, "training config JSON (defaults when omitted)");
  std::string data_dir;
  train->add_option("--data", data_dir, "directory holding train.jsonl / val.jsonl")->required();
  std::string train_out;
  train->add_option("--out", train_out, "checkpoint and metrics directory")->required();

  auto* bench = app.add_subcommand("bench", "cost model, latency, and quality benchmarks");
  std::string bench_mode;
  bench->add_option("mode", bench_mode, "latency, cost, or eval")
      ->required()
      ->check(CLI::IsMember({"latency", "cost", "eval"}));
  std::string bench_config;
  bench->add_option("--config", bench_config, "bench config JSON (defaults when omitted)");
  std::string bench_out;
  bench->add_option("--out", bench_out, "CSV and summary directory")->required();

  auto* gen = app.add_subcommand("gen-data", "write synthetic fact-recall dialogues");
  std::uint64_t gen_seed = 1;
  gen->add_option("--seed", gen_seed, "generator seed");
  int gen_dialogues = 64;
  gen->add_option("--dialogues", gen_dialogues, "total dialogues across the splits");
  int gen_turns = 4;
  gen->add_option("--turns", gen_turns, "turns per dialogue");
  std::string gen_out;
  gen->add_option("--out", gen_out, "directory for train/val/test.jsonl")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(chat))
      return run_chat(checkpoint, greedy, temp, seed, session_log, stm_path, max_new_tokens);
    if (app.got_subcommand(train)) return run_train(stage, train_config, data_dir, train_out);
    if (app.got_subcommand(bench)) return run_bench(bench_mode, bench_config, bench_out);
    if (app.got_subcommand(gen)) return run_gen(gen_seed, gen_dialogues, gen_turns, gen_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
