#include "eventlm/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <stdexcept>

#include "eventlm/tape.hpp"
#include "json.hpp"

namespace eventlm {

void GenerationSettings::validate() const {
  if (max_new_tokens < 1)
    throw std::invalid_argument("generation: max_new_tokens must be at least 1");
  if (!greedy && !(temperature > 0.0))
    throw std::invalid_argument("generation: temperature must be positive when sampling");
  if (stop_token && (*stop_token < 0 || *stop_token >= tok::kVocabSize))
    throw std::invalid_argument("generation: stop token outside the vocabulary");
}

int pick_greedy(const Tensor& logits, std::int64_t row) {
  int best = 0;
  double best_val = logits.at(row, 0);
  for (std::int64_t v = 1; v < logits.cols(); ++v) {
    double val = logits.at(row, v);
    if (val > best_val) {
      best_val = val;
      best = static_cast<int>(v);
    }
  }
  return best;
}

int pick_sampled(const Tensor& logits, std::int64_t row, double temperature, Rng& rng) {
  std::int64_t vocab = logits.cols();
  double max_val = logits.at(row, 0);
  for (std::int64_t v = 1; v < vocab; ++v) max_val = std::max(max_val, logits.at(row, v));
  std::vector<double> weights(static_cast<std::size_t>(vocab));
  double total = 0.0;
  for (std::int64_t v = 0; v < vocab; ++v) {
    double w = std::exp((logits.at(row, v) - max_val) / temperature);
    weights[static_cast<std::size_t>(v)] = w;
    total += w;
  }
  double u = rng.uniform() * total;
  double cumulative = 0.0;
  for (std::int64_t v = 0; v < vocab; ++v) {
    cumulative += weights[static_cast<std::size_t>(v)];
    if (u < cumulative) return static_cast<int>(v);
  }
  return static_cast<int>(vocab - 1);
}

namespace {

ShortTermMemory initial_state_of(ReactiveModel& model) {
  if (!model.has_memory())
    throw std::invalid_argument("engine: the model has no memory layers to run a conversation on");
  return model.memory().initial_state();
}

}  // namespace

ReactiveEngine::ReactiveEngine(ReactiveModel& model, Options opt)
    : model_(model),
      opt_(opt),
      epoch_(std::chrono::steady_clock::now()),
      committed_(initial_state_of(model)) {}

ReactiveEngine::~ReactiveEngine() {
  wait_for_commit();
}

double ReactiveEngine::now() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_).count();
}

void ReactiveEngine::wait_for_commit() {
  {
    std::unique_lock<std::mutex> lk(mu_);
    cv_.wait(lk, [&] { return !pending_; });
  }
  if (worker_.joinable()) worker_.join();
}

void ReactiveEngine::reset() {
  wait_for_commit();
  std::lock_guard<std::mutex> lk(mu_);
  committed_ = model_.memory().initial_state();
}

std::uint64_t ReactiveEngine::stm_version() {
  std::lock_guard<std::mutex> lk(mu_);
  return committed_.version();
}

ShortTermMemory ReactiveEngine::committed_stm() {
  std::lock_guard<std::mutex> lk(mu_);
  return committed_.detached_clone();
}

void ReactiveEngine::set_stm(const ShortTermMemory& stm) {
  const ModelConfig& cfg = model_.config();
  if (stm.layers() != cfg.l_layers || stm.slot_count() != cfg.s_mem || stm.dim() != cfg.d_model)
    throw std::invalid_argument(
        "engine: memory state of " + std::to_string(stm.layers()) + "x[" +
        std::to_string(stm.slot_count()) + "x" + std::to_string(stm.dim()) +
        "] does not fit a model expecting " + std::to_string(cfg.l_layers) + "x[" +
        std::to_string(cfg.s_mem) + "x" + std::to_string(cfg.d_model) + "]");
  wait_for_commit();
  std::lock_guard<std::mutex> lk(mu_);
  committed_ = stm.detached_clone();
}

std::vector<InteractionRecord> ReactiveEngine::records() {
  std::lock_guard<std::mutex> lk(mu_);
  return records_;
}

std::string ReactiveEngine::last_update_error() {
  std::lock_guard<std::mutex> lk(mu_);
  return last_error_;
}

InteractionRecord ReactiveEngine::interact(const std::vector<int>& query_tokens,
                                           const GenerationSettings& settings,
                                           const std::function<void(int)>& on_token) {
  settings.validate();
  if (query_tokens.empty()) throw std::invalid_argument("interact: empty query");
  for (int id : query_tokens)
    if (id < 0 || id >= model_.config().vocab_size)
      throw std::invalid_argument("interact: token id " + std::to_string(id) +
                                  " outside the vocabulary");

  std::vector<int> prompt;
  prompt.reserve(query_tokens.size() + 2);
  prompt.push_back(tok::kQuery);
  prompt.insert(prompt.end(), query_tokens.begin(), query_tokens.end());
  prompt.push_back(tok::kAnswer);

  // the whole interaction, plus the closing [EOS], must fit the encoder
  std::int64_t room = model_.config().max_interaction_len -
                      static_cast<std::int64_t>(prompt.size()) - 1;
  if (room < 1)
    throw std::invalid_argument("interact: query of " + std::to_string(query_tokens.size()) +
                                " tokens leaves no room to generate within the interaction "
                                "limit of " +
                                std::to_string(model_.config().max_interaction_len));
  std::int64_t gen_cap = std::min<std::int64_t>(settings.max_new_tokens, room);

  InteractionRecord rec;
  rec.query_tokens = query_tokens;

  // ordering contract: the state carried into this turn is the previous
  // turn's committed update, never an in-flight one
  double wait_begin = now();
  ShortTermMemory base = [&] {
    std::unique_lock<std::mutex> lk(mu_);
    cv_.wait(lk, [&] { return !pending_; });
    return committed_;
  }();
  if (worker_.joinable()) worker_.join();
  rec.blocked_s = now() - wait_begin;

  rec.index = next_index_++;
  rec.stm_version_used = base.version();
  rec.stm_version_produced = base.version() + 1;
  rec.query.kind = Event::Kind::Query;
  rec.query.tokens = prompt;
  rec.query.interaction_index = rec.index;
  rec.query.received_s = wait_begin;
  rec.query.first_token_s = wait_begin;
  rec.query.last_token_s = wait_begin;

  NoGrad inference;
  Rng local;
  Rng* sampler = &model_.sampler_rng();
  if (settings.seed) {
    local = Rng(*settings.seed);
    sampler = &local;
  }

  rec.prompt_begin_s = now();
  DecoderSession session = model_.begin_session(base);
  Tensor logits = model_.decode_step(prompt, session).logits;
  rec.prompt_end_s = now();
  rec.prompt_s = rec.prompt_end_s - rec.prompt_begin_s;
  rec.prompt_tokens = static_cast<std::int64_t>(prompt.size());

  rec.response.kind = Event::Kind::Response;
  rec.response.interaction_index = rec.index;
  rec.response.received_s = rec.prompt_end_s;

  std::vector<int> generated;
  std::int64_t row = logits.rows() - 1;
  double gen_begin = now();
  for (std::int64_t i = 0; i < gen_cap; ++i) {
    int token = settings.greedy ? pick_greedy(logits, row)
                                : pick_sampled(logits, row, settings.temperature, *sampler);
    double t_now = now();
    if (generated.empty()) rec.response.first_token_s = t_now;
    rec.response.last_token_s = t_now;
    if (settings.stop_token && token == *settings.stop_token) break;
    generated.push_back(token);
    if (on_token) on_token(token);
    if (i + 1 < gen_cap) {
      logits = model_.decode_step({token}, session).logits;
      row = 0;
    }
  }
  rec.generate_end_s = now();
  rec.generate_s = rec.generate_end_s - gen_begin;
  rec.generated_tokens = static_cast<std::int64_t>(generated.size());
  rec.per_token_mean_s = rec.generate_s / static_cast<double>(std::max<std::int64_t>(
                                              1, rec.generated_tokens));
  rec.response_tokens = generated;
  rec.response.tokens = generated;

  std::vector<int> encoder_input = prompt;
  encoder_input.insert(encoder_input.end(), generated.begin(), generated.end());
  encoder_input.push_back(tok::kEos);
  rec.update_encoder_tokens = static_cast<std::int64_t>(encoder_input.size());
  rec.update_slots = model_.config().s_mem;

  std::size_t record_index;
  {
    std::lock_guard<std::mutex> lk(mu_);
    records_.push_back(rec);
    record_index = records_.size() - 1;
    pending_ = true;
  }
  if (opt_.async_updates) {
    worker_ = std::thread(&ReactiveEngine::run_update, this, record_index,
                          std::move(encoder_input), base);
    return rec;
  }
  run_update(record_index, std::move(encoder_input), base);
  std::lock_guard<std::mutex> lk(mu_);
  return records_[record_index];
}

void ReactiveEngine::run_update(std::size_t record_index, std::vector<int> encoder_input,
                                ShortTermMemory base) {
  double begin = now();
  std::string error;
  std::optional<ShortTermMemory> next;
  try {
    if (opt_.fail_updates) throw std::runtime_error("injected update failure");
    NoGrad inference;
    EncodedData ed = model_.encoder_forward(encoder_input);
    next = model_.memory().update(base, ed);
    if (opt_.update_delay_s > 0.0)
      std::this_thread::sleep_for(std::chrono::duration<double>(opt_.update_delay_s));
  } catch (const std::exception& e) {
    error = e.what();
  }
  double end = now();
  {
    std::lock_guard<std::mutex> lk(mu_);
    InteractionRecord& rec = records_[record_index];
    rec.update_begin_s = begin;
    rec.update_end_s = end;
    rec.memory_update_s = end - begin;
    if (next) {
      committed_ = *next;  // whole-state swap: readers see old or new, never a mix
      rec.update_committed = true;
    } else {
      rec.update_error = error;
      last_error_ = error;
    }
    pending_ = false;
  }
  cv_.notify_all();
}

namespace {

constexpr char kStmMagic[8] = {'E', 'V', 'L', 'M', 'S', 'T', 'M', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t take_u64(const std::string& buf, std::size_t& pos) {
  if (pos + 8 > buf.size())
    throw std::runtime_error("memory session file: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)]))
         << (8 * i);
  pos += 8;
  return v;
}

}  // namespace

void save_stm(const std::string& path, const ShortTermMemory& stm) {
  std::string body;
  put_u64(body, stm.version());
  put_u64(body, static_cast<std::uint64_t>(stm.layers()));
  put_u64(body, static_cast<std::uint64_t>(stm.slot_count()));
  put_u64(body, static_cast<std::uint64_t>(stm.dim()));
  for (std::int64_t l = 0; l < stm.layers(); ++l) {
    const Tensor& slots = stm.layer(l);
    for (std::int64_t r = 0; r < slots.rows(); ++r)
      for (std::int64_t c = 0; c < slots.cols(); ++c) {
        double v = slots.at(r, c);
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, 8);
        put_u64(body, bits);
      }
  }
  std::uint64_t crc = crc64(reinterpret_cast<const unsigned char*>(body.data()), body.size());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("memory session file: cannot open '" + path + "' for writing");
  f.write(kStmMagic, 8);
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  std::string tail;
  put_u64(tail, crc);
  f.write(tail.data(), 8);
  f.flush();
  if (!f) throw std::runtime_error("memory session file: write to '" + path + "' failed");
}

ShortTermMemory load_stm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("memory session file: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 16 || std::memcmp(buf.data(), kStmMagic, 8) != 0)
    throw std::runtime_error("memory session file: '" + path + "' is not a memory session file");
  std::string body = buf.substr(8, buf.size() - 16);
  std::size_t tail_pos = buf.size() - 8;
  std::uint64_t stored = take_u64(buf, tail_pos);
  std::uint64_t actual =
      crc64(reinterpret_cast<const unsigned char*>(body.data()), body.size());
  if (stored != actual)
    throw std::runtime_error("memory session file: checksum mismatch, '" + path +
                             "' is corrupted");
  std::size_t pos = 0;
  std::uint64_t version = take_u64(body, pos);
  auto layers = static_cast<std::int64_t>(take_u64(body, pos));
  auto rows = static_cast<std::int64_t>(take_u64(body, pos));
  auto cols = static_cast<std::int64_t>(take_u64(body, pos));
  if (layers < 1 || rows < 1 || cols < 1)
    throw std::runtime_error("memory session file: invalid shape header");
  std::vector<Tensor> slots;
  for (std::int64_t l = 0; l < layers; ++l) {
    Tensor t = Tensor::zeros(rows, cols);
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < cols; ++c) {
        std::uint64_t bits = take_u64(body, pos);
        double v;
        std::memcpy(&v, &bits, 8);
        t.set(r, c, v);
      }
    slots.push_back(t);
  }
  if (pos != body.size())
    throw std::runtime_error("memory session file: trailing bytes after slot data");
  return ShortTermMemory(std::move(slots), version);
}

namespace {

std::string format_ms(double seconds) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", seconds * 1e3);
  return buf;
}

void print_stats(const std::vector<InteractionRecord>& records, std::ostream& out) {
  if (records.empty()) {
    out << "no interactions yet\n";
    return;
  }
  out << "turn  stm      prompt_ms  per_tok_ms  update_ms  blocked_ms\n";
  for (const InteractionRecord& rec : records) {
    out << rec.index << "     " << rec.stm_version_used << "->" << rec.stm_version_produced
        << "     " << format_ms(rec.prompt_s) << "      " << format_ms(rec.per_token_mean_s)
        << "       ";
    if (rec.update_committed)
      out << format_ms(rec.memory_update_s);
    else if (!rec.update_error.empty())
      out << "failed";
    else
      out << "pending";
    out << "      " << format_ms(rec.blocked_s) << "\n";
  }
}

void write_session_log(const std::string& path, const std::vector<InteractionRecord>& records,
                       std::ostream& out) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) {
    out << "error: cannot open session log '" << path << "'\n";
    return;
  }
  for (const InteractionRecord& rec : records) {
    nlohmann::json j;
    j["turn"] = rec.index;
    j["query"] = tok::decode(rec.query_tokens);
    j["response"] = tok::decode(rec.response_tokens);
    j["query_tokens"] = rec.query_tokens;
    j["response_tokens"] = rec.response_tokens;
    j["stm_version_used"] = rec.stm_version_used;
    j["stm_version_produced"] = rec.stm_version_produced;
    j["prompt_s"] = rec.prompt_s;
    j["per_token_s"] = rec.per_token_mean_s;
    j["update_s"] = rec.memory_update_s;
    j["blocked_s"] = rec.blocked_s;
    j["update_committed"] = rec.update_committed;
    if (!rec.update_error.empty()) j["update_error"] = rec.update_error;
    // responses are raw bytes; non-UTF-8 sequences become U+FFFD in the log
    f << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
  }
}

}  // namespace

int chat_repl(ReactiveModel& model, const GenerationSettings& settings, const ChatOptions& copt,
              std::istream& in, std::ostream& out) {
  ReactiveEngine::Options eopt;
  eopt.async_updates = copt.async_updates;
  ReactiveEngine engine(model, eopt);

  if (!copt.stm_path.empty() && std::filesystem::exists(copt.stm_path)) {
    try {
      engine.set_stm(load_stm(copt.stm_path));
      out << "restored memory state, version " << engine.stm_version() << "\n";
    } catch (const std::exception& e) {
      out << "error: " << e.what() << " (starting from the initial state)\n";
    }
  }

  std::string line;
  out << "> " << std::flush;
  while (std::getline(in, line)) {
    if (line == "/quit") break;
    if (line == "/reset") {
      engine.reset();
      out << "memory reset to the initial state\n> " << std::flush;
      continue;
    }
    if (line == "/stats") {
      print_stats(engine.records(), out);
      out << "> " << std::flush;
      continue;
    }
    if (line.empty()) {
      out << "> " << std::flush;
      continue;
    }
    try {
      engine.interact(tok::encode(line), settings,
                      [&](int token) { out << tok::decode({token}) << std::flush; });
      out << "\n";
    } catch (const std::exception& e) {
      out << "error: " << e.what() << "\n";
    }
    out << "> " << std::flush;
  }

  engine.wait_for_commit();
  if (!copt.stm_path.empty()) {
    try {
      save_stm(copt.stm_path, engine.committed_stm());
    } catch (const std::exception& e) {
      out << "error: " << e.what() << "\n";
    }
  }
  if (!copt.session_log_path.empty())
    write_session_log(copt.session_log_path, engine.records(), out);
  return 0;
}

}  // namespace eventlm
