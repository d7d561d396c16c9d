// Acceptance gate. Every guarantee the project ships is re-verified here from
// scratch, one test case per guarantee, each ending in a single
// [PASS]/[FAIL] line with the measured numbers next to the threshold they
// were held to. The cases rebuild their own oracles (closed-form sums,
// finite differences, byte comparisons) instead of trusting the unit suites.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "eventlm/bench.hpp"
#include "eventlm/data.hpp"
#include "eventlm/memory.hpp"
#include "eventlm/model.hpp"
#include "eventlm/ops.hpp"
#include "eventlm/tape.hpp"
#include "eventlm/tokenizer.hpp"
#include "eventlm/training.hpp"
#include "oracles.hpp"

using namespace eventlm;
namespace op = eventlm::ops;
namespace fs = std::filesystem;

namespace {

void report(int idx, const char* what, bool ok, const std::string& detail) {
  std::printf("[%s] %d. %s: %s\n", ok ? "PASS" : "FAIL", idx, what, detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double secs() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

// Tiny model for gradient checks. top_k == experts keeps the routing smooth,
// so central differences see no selection boundaries.
ModelConfig smooth_cfg() {
  ModelConfig cfg;
  cfg.l_layers = 2;
  cfg.n_heads = 2;
  cfg.d_model = 8;
  cfg.s_mem = 4;
  cfg.ffn_hidden = 16;
  cfg.moe_experts = 2;
  cfg.moe_top_k = 2;
  cfg.max_interaction_len = 32;
  cfg.baseline_context_limit = 96;
  cfg.seed = 11;
  return cfg;
}

ModelConfig tiny_cfg() {
  ModelConfig cfg = smooth_cfg();
  cfg.moe_top_k = 1;
  return cfg;
}

Tensor leaf_randn(std::int64_t r, std::int64_t c, Rng& rng, double sd = 1.0) {
  Tensor t = Tensor::randn(r, c, rng, sd);
  t.set_requires_grad();
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::int64_t r = 0; r < a.rows(); ++r)
    for (std::int64_t c = 0; c < a.cols(); ++c)
      worst = std::max(worst, std::abs(a.at(r, c) - b.at(r, c)));
  return worst;
}

bool bits_equal(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (std::int64_t r = 0; r < a.rows(); ++r)
    for (std::int64_t c = 0; c < a.cols(); ++c)
      if (a.at(r, c) != b.at(r, c)) return false;
  return true;
}

void fill(Tensor& t, double v) {
  for (std::int64_t r = 0; r < t.rows(); ++r)
    for (std::int64_t c = 0; c < t.cols(); ++c) t.set(r, c, v);
}

int fill_by_suffix(ParamList& params, const std::string& suffix, double v) {
  int n = 0;
  for (auto& [name, t] : params) {
    if (name.ends_with(suffix)) {
      fill(t, v);
      ++n;
    }
  }
  return n;
}

std::string temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---- 1. finite-difference gradient audit ------------------------------------

namespace {

struct FdTally {
  int cases = 0;
  double worst = 0.0;
  std::string worst_case = "none";

  void add(const std::string& name, double err) {
    ++cases;
    if (err > worst) {
      worst = err;
      worst_case = name;
    }
  }
};

double fd_err(const std::vector<Tensor>& leaves, const std::function<Tensor()>& fwd,
              std::uint64_t seed, int coords = 4) {
  Rng rng(seed ^ 0x5bd1e995ULL);
  return oracles::fd_max_rel_error(leaves, fwd, rng, coords, 1e-5);
}

std::vector<Tensor> all_params(ReactiveModel& m) {
  std::vector<Tensor> leaves;
  for (auto& [name, t] : m.parameters()) leaves.push_back(t);
  return leaves;
}

}  // namespace

TEST_CASE("acceptance 1: finite-difference gradient audit") {
  Timer timer;
  FdTally t;

  for (std::uint64_t seed : {101ull, 202ull}) {
    Rng r(seed);

    {  // elementwise and unary, all one shape
      Tensor a = leaf_randn(3, 4, r), b = leaf_randn(3, 4, r);
      Tensor w = Tensor::randn(3, 4, r);
      t.add("add", fd_err({a, b}, [&] { return op::sum_all(op::mul(op::add(a, b), w)); }, seed));
      t.add("sub", fd_err({a, b}, [&] { return op::sum_all(op::mul(op::sub(a, b), w)); }, seed));
      t.add("mul", fd_err({a, b}, [&] { return op::sum_all(op::mul(op::mul(a, b), w)); }, seed));
      t.add("scale",
            fd_err({a}, [&] { return op::sum_all(op::mul(op::scale(a, 1.7), w)); }, seed));
      t.add("add_scalar",
            fd_err({a}, [&] { return op::sum_all(op::mul(op::add_scalar(a, 0.3), w)); }, seed));
      t.add("sigmoid", fd_err({a}, [&] { return op::sum_all(op::mul(op::sigmoid(a), w)); }, seed));
      t.add("tanh", fd_err({a}, [&] { return op::sum_all(op::mul(op::tanh(a), w)); }, seed));
      t.add("silu", fd_err({a}, [&] { return op::sum_all(op::mul(op::silu(a), w)); }, seed));
    }

    {  // row and column broadcasts
      Tensor x = leaf_randn(3, 4, r);
      Tensor bias = leaf_randn(1, 4, r);
      Tensor wr = leaf_randn(3, 1, r);
      Tensor d = leaf_randn(3, 1, r);
      for (std::int64_t i = 0; i < 3; ++i) d.set(i, 0, 0.7 + std::abs(d.at(i, 0)));
      Tensor w = Tensor::randn(3, 4, r);
      t.add("add_bias",
            fd_err({x, bias}, [&] { return op::sum_all(op::mul(op::add_bias(x, bias), w)); }, seed));
      t.add("mul_rowwise",
            fd_err({x, wr}, [&] { return op::sum_all(op::mul(op::mul_rowwise(x, wr), w)); }, seed));
      t.add("div_rowwise",
            fd_err({x, d}, [&] { return op::sum_all(op::mul(op::div_rowwise(x, d), w)); }, seed));
    }

    {  // matrix products
      Tensor a = leaf_randn(3, 4, r), b = leaf_randn(4, 5, r), c = leaf_randn(5, 4, r);
      Tensor w = Tensor::randn(3, 5, r);
      t.add("matmul",
            fd_err({a, b}, [&] { return op::sum_all(op::mul(op::matmul(a, b), w)); }, seed));
      t.add("matmul_nt",
            fd_err({a, c}, [&] { return op::sum_all(op::mul(op::matmul_nt(a, c), w)); }, seed));
    }

    {  // normalizations
      Tensor x = leaf_randn(3, 5, r);
      Tensor w = Tensor::randn(3, 5, r);
      t.add("softmax_rows",
            fd_err({x}, [&] { return op::sum_all(op::mul(op::softmax_rows(x), w)); }, seed));
      Tensor y = leaf_randn(3, 8, r);
      Tensor gain = leaf_randn(1, 8, r);
      Tensor w8 = Tensor::randn(3, 8, r);
      t.add("rms_norm",
            fd_err({y, gain}, [&] { return op::sum_all(op::mul(op::rms_norm(y, gain), w8)); },
                   seed));
    }

    {  // scalar-valued ops (the -1 target exercises the ignore path)
      Tensor logits = leaf_randn(4, 6, r);
      std::vector<int> targets = {1, 5, -1, 2};
      t.add("cross_entropy",
            fd_err({logits}, [&] { return op::scale(op::cross_entropy(logits, targets), 1.3); },
                   seed));
      Tensor a = leaf_randn(3, 4, r), b = leaf_randn(3, 4, r);
      t.add("cosine_rows_mean",
            fd_err({a, b}, [&] { return op::scale(op::cosine_rows_mean(a, b), 1.3); }, seed));
      t.add("sum_all", fd_err({a}, [&] { return op::scale(op::sum_all(a), 0.7); }, seed));
      t.add("mean_all", fd_err({a}, [&] { return op::scale(op::mean_all(a), 0.7); }, seed));
    }

    {  // positions and indexing (repeated ids exercise the scatter-add grads)
      Tensor x = leaf_randn(2, 8, r);
      Tensor w = Tensor::randn(2, 8, r);
      std::vector<std::int64_t> pos = {0, 3};
      t.add("rope", fd_err({x}, [&] { return op::sum_all(op::mul(op::rope(x, pos, 2, 1e4), w)); },
                           seed));
      Tensor table = leaf_randn(7, 4, r);
      std::vector<int> ids = {0, 3, 3, 6};
      Tensor w4 = Tensor::randn(4, 4, r);
      t.add("embedding",
            fd_err({table}, [&] { return op::sum_all(op::mul(op::embedding(table, ids), w4)); },
                   seed));
      Tensor src = leaf_randn(5, 4, r);
      std::vector<std::int64_t> gi = {0, 2, 2, 4};
      t.add("gather_rows",
            fd_err({src}, [&] { return op::sum_all(op::mul(op::gather_rows(src, gi), w4)); },
                   seed));
      Tensor s3 = leaf_randn(3, 4, r);
      std::vector<std::int64_t> si = {0, 2, 2};
      t.add("scatter_rows",
            fd_err({s3}, [&] { return op::sum_all(op::mul(op::scatter_rows(s3, si, 4), w4)); },
                   seed));
    }

    {  // column shaping
      Tensor x = leaf_randn(3, 6, r);
      Tensor w3 = Tensor::randn(3, 3, r);
      t.add("slice_cols",
            fd_err({x}, [&] { return op::sum_all(op::mul(op::slice_cols(x, 1, 3), w3)); }, seed));
      Tensor a = leaf_randn(3, 2, r), b = leaf_randn(3, 3, r);
      Tensor w5 = Tensor::randn(3, 5, r);
      t.add("concat_cols",
            fd_err({a, b}, [&] { return op::sum_all(op::mul(op::concat_cols({a, b}), w5)); },
                   seed));
    }
  }

  {  // decoder cross-entropy with the MoE auxiliary, memory input held fixed
    ReactiveModel m(smooth_cfg());
    std::vector<int> tk = tok::interaction("fd loss", "probe");
    Rng mr(31);
    std::vector<Tensor> mem;
    for (int l = 0; l < 2; ++l) mem.push_back(Tensor::randn(4, 8, mr, 0.5));
    std::vector<Tensor> leaves = all_params(m);
    t.add("loss: decoder answer CE", fd_err(leaves,
                                            [&] {
                                              ModelOutput out = m.decoder_forward(tk, mem);
                                              Tensor ce = op::cross_entropy(
                                                  out.logits, data::shifted_targets(tk, false));
                                              return op::add(ce,
                                                             op::scale(out.aux, kMoEAuxWeight));
                                            },
                                            301, 2));
  }

  {  // masked-prediction head through the encoder
    ReactiveModel m(smooth_cfg());
    std::vector<int> tk = tok::interaction("masked modeling", "check");
    Rng mrng(17);
    MaskResult mask = mask_tokens(tk, 0.3, mrng);
    std::vector<int> targets(tk.size(), -1);
    for (std::int64_t p : mask.positions) targets[static_cast<std::size_t>(p)] = tk[static_cast<std::size_t>(p)];
    std::vector<Tensor> leaves = all_params(m);
    t.add("loss: masked CE", fd_err(leaves,
                                    [&] {
                                      EncodedData ed = m.encoder_forward(mask.tokens);
                                      return op::cross_entropy(m.mlm_logits(ed.layers.back()),
                                                               targets);
                                    },
                                    302, 2));
  }

  {  // the joint two-headed objective. The autoregressive branch reads the
     // encoding across its detach boundary, so the closure holds that tensor
     // fixed; the gradient under test is exactly the one the stage computes.
    ReactiveModel m(smooth_cfg());
    std::vector<int> tk = tok::interaction("joint objective", "value");
    Rng jr(23);
    MaskResult mask = mask_tokens(tk, 0.3, jr);
    std::vector<int> mtgt(tk.size(), -1);
    for (std::int64_t p : mask.positions) mtgt[static_cast<std::size_t>(p)] = tk[static_cast<std::size_t>(p)];
    std::vector<Tensor> noised;
    {
      NoGrad ng;
      EncodedData ed = m.encoder_forward(mask.tokens);
      for (const Tensor& l : ed.layers)
        noised.push_back(op::add(l, Tensor::randn(l.rows(), l.cols(), jr, 0.02)).detach());
    }
    const double alpha = 0.7, beta = 0.4;
    std::vector<Tensor> leaves = all_params(m);
    t.add("loss: joint objective",
          fd_err(leaves,
                 [&] {
                   ModelOutput out = m.decoder_forward(tk, noised);
                   Tensor l_ar = op::cross_entropy(out.logits, data::shifted_targets(tk, false));
                   EncodedData enc = m.encoder_forward(mask.tokens);
                   Tensor l_mlm = op::cross_entropy(m.mlm_logits(enc.layers.back()), mtgt);
                   Tensor joint = op::add(op::scale(l_ar, alpha), op::scale(l_mlm, beta));
                   return op::add(joint, op::scale(out.aux, kMoEAuxWeight));
                 },
                 303, 2));
  }

  {  // memory-update cosine loss; only the write path owns gradients here
    ReactiveModel m(smooth_cfg());
    std::vector<int> tk = tok::interaction("memory target", "fit");
    EncodedData ed;
    ShortTermMemory prev = m.memory().initial_state();
    std::vector<Tensor> targets;
    const double w = 0.6;
    {
      NoGrad ng;
      ed = m.encoder_forward(tk);
      for (std::size_t l = 0; l < ed.layers.size(); ++l) {
        Tensor pooled = pool_to_slots(ed.layers[l], m.config().s_mem);
        targets.push_back(op::add(op::scale(prev.layer(static_cast<std::int64_t>(l)), 1.0 - w),
                                  op::scale(pooled, w)));
      }
    }
    std::vector<Tensor> leaves;
    for (auto& [name, tt] : m.parameters())
      if (name.rfind("memory.attn", 0) == 0) leaves.push_back(tt);
    const double inv_layers = 1.0 / static_cast<double>(targets.size());
    t.add("loss: memory cosine", fd_err(leaves,
                                        [&] {
                                          ShortTermMemory next = m.memory().update(prev, ed);
                                          Tensor acc;
                                          for (std::size_t l = 0; l < targets.size(); ++l) {
                                            Tensor c = op::cosine_rows_mean(
                                                next.layer(static_cast<std::int64_t>(l)),
                                                targets[l]);
                                            acc = acc.defined() ? op::add(acc, c) : c;
                                          }
                                          return op::scale(acc, -inv_layers);
                                        },
                                        304, 3));
  }

  {  // the unrolled multi-turn objective on a 2-turn dialogue
    ReactiveModel m(smooth_cfg());
    std::vector<std::vector<int>> turns = {tok::interaction("ab", "cd"),
                                           tok::interaction("ef", "gh")};
    std::vector<Tensor> leaves = all_params(m);
    t.add("loss: unrolled two-turn", fd_err(leaves,
                                            [&] {
                                              Rng noise(99);
                                              ShortTermMemory stm =
                                                  m.memory().initial_state_noised(noise, 0.02);
                                              Tensor obj;
                                              for (std::size_t i = 0; i < turns.size(); ++i) {
                                                ModelOutput out = m.decoder_forward(turns[i], stm);
                                                Tensor l = op::cross_entropy(
                                                    out.logits,
                                                    data::shifted_targets(turns[i], false));
                                                Tensor term =
                                                    op::add(l, op::scale(out.aux, kMoEAuxWeight));
                                                obj = obj.defined() ? op::add(obj, term) : term;
                                                if (i + 1 < turns.size()) {
                                                  EncodedData ed = m.encoder_forward(turns[i]);
                                                  stm = m.memory().update(stm, ed);
                                                }
                                              }
                                              return obj;
                                            },
                                            305, 2));
  }

  double secs = timer.secs();
  bool ok = t.worst <= 1e-4 && t.cases >= 50 && secs < 120.0;
  report(1, "finite-difference gradient audit", ok,
         std::to_string(t.cases) + " cases, max rel err " + fmt(t.worst) + " <= 1e-4 (worst: " +
             t.worst_case + "), " + fmt(secs) + "s < 120s");
  CHECK(ok);
}

// ---- 2. memory state invariants ---------------------------------------------

TEST_CASE("acceptance 2: memory state invariants") {
  ModelConfig cfg;  // shipped desk-scale defaults
  cfg.seed = 5;
  std::string detail;
  bool ok = true;

  {  // the decoder's read is order-free over slots
    ReactiveModel model(cfg);
    NoGrad ng;
    Rng rng(41);
    std::vector<int> tokens = tok::interaction("permute probe", "ok");
    std::vector<Tensor> state, shuffled;
    std::vector<std::int64_t> perm(static_cast<std::size_t>(cfg.s_mem));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::int64_t>(i);
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[rng.below(i)]);
    for (std::int64_t l = 0; l < cfg.l_layers; ++l) {
      Tensor s = Tensor::randn(cfg.s_mem, cfg.d_model, rng, 0.5);
      Tensor p = Tensor::zeros(cfg.s_mem, cfg.d_model);
      for (std::int64_t r = 0; r < cfg.s_mem; ++r)
        for (std::int64_t c = 0; c < cfg.d_model; ++c) p.set(r, c, s.at(perm[static_cast<std::size_t>(r)], c));
      state.push_back(s);
      shuffled.push_back(p);
    }
    Tensor la = model.decoder_forward(tokens, ShortTermMemory(state, 3)).logits;
    Tensor lb = model.decoder_forward(tokens, ShortTermMemory(shuffled, 3)).logits;
    double d = max_abs_diff(la, lb);
    ok = ok && d <= 1e-10;
    detail += "read permutation diff " + fmt(d) + " <= 1e-10";
  }

  {  // sigmoid gates keep every element between the old state and the write
    NoGrad ng;
    Rng rng(7);
    AttentionConfig acfg = cfg.attention_config();
    MemoryAttention attn(cfg.l_layers, cfg.s_mem, acfg, MemoryAttentionVariant::Simple,
                         ResidualGateConfig{}, rng);
    std::vector<Tensor> state;
    for (std::int64_t l = 0; l < cfg.l_layers; ++l)
      state.push_back(Tensor::randn(cfg.s_mem, cfg.d_model, rng, 0.5));
    double slack = 0.0;
    for (int it = 0; it < 50; ++it) {
      std::vector<Tensor> ed;
      std::int64_t rows = 5 + (it % 26);
      for (std::int64_t l = 0; l < cfg.l_layers; ++l)
        ed.push_back(Tensor::randn(rows, cfg.d_model, rng, 0.5));
      std::vector<Tensor> upd;
      for (std::int64_t l = 0; l < cfg.l_layers; ++l)
        upd.push_back(attn.write_attend(l, state[static_cast<std::size_t>(l)], ed[static_cast<std::size_t>(l)]));
      std::vector<Tensor> next = attn.update(state, ed);
      for (std::int64_t l = 0; l < cfg.l_layers; ++l) {
        for (std::int64_t r = 0; r < cfg.s_mem; ++r)
          for (std::int64_t c = 0; c < cfg.d_model; ++c) {
            double p = state[static_cast<std::size_t>(l)].at(r, c);
            double u = upd[static_cast<std::size_t>(l)].at(r, c);
            double n = next[static_cast<std::size_t>(l)].at(r, c);
            slack = std::max(slack, std::min(p, u) - n);
            slack = std::max(slack, n - std::max(p, u));
          }
      }
      state = next;
    }
    ok = ok && slack <= 1e-10;
    detail += ", 50-update convexity slack " + fmt(slack);
  }

  {  // saturated gates pin the state to either end of the mix
    NoGrad ng;
    Rng rng(13);
    AttentionConfig acfg = cfg.attention_config();
    std::vector<Tensor> state, ed;
    for (std::int64_t l = 0; l < cfg.l_layers; ++l) {
      state.push_back(Tensor::randn(cfg.s_mem, cfg.d_model, rng, 0.5));
      ed.push_back(Tensor::randn(20, cfg.d_model, rng, 0.5));
    }
    double open_diff = 0.0, closed_diff = 0.0;
    {
      MemoryAttention attn(cfg.l_layers, cfg.s_mem, acfg, MemoryAttentionVariant::Simple,
                           ResidualGateConfig{}, rng);
      ParamList params;
      attn.collect_params("ma", params);
      fill_by_suffix(params, ".final_gate.bg", 40.0);
      std::vector<Tensor> next = attn.update(state, ed);
      for (std::int64_t l = 0; l < cfg.l_layers; ++l)
        open_diff = std::max(
            open_diff,
            max_abs_diff(next[static_cast<std::size_t>(l)],
                         attn.write_attend(l, state[static_cast<std::size_t>(l)], ed[static_cast<std::size_t>(l)])));
      fill_by_suffix(params, ".final_gate.bg", -40.0);
      next = attn.update(state, ed);
      for (std::int64_t l = 0; l < cfg.l_layers; ++l)
        closed_diff = std::max(closed_diff, max_abs_diff(next[static_cast<std::size_t>(l)],
                                                         state[static_cast<std::size_t>(l)]));
    }
    ok = ok && open_diff <= 1e-10 && closed_diff <= 1e-10;
    detail += ", open-gate diff " + fmt(open_diff) + ", closed-gate diff " + fmt(closed_diff);
  }

  {  // 50 streamed turns: same shape throughout, version up by one per turn
    ReactiveModel model(cfg);
    NoGrad ng;
    ShortTermMemory stm = model.memory().initial_state();
    bool shapes = stm.version() == 0;
    for (int i = 0; i < 50 && shapes; ++i) {
      std::vector<int> tk =
          tok::interaction("turn " + std::to_string(i), "reply " + std::to_string(i));
      ShortTermMemory next = model.memory().update(stm, model.encoder_forward(tk));
      shapes = next.layers() == cfg.l_layers && next.slot_count() == cfg.s_mem &&
               next.dim() == cfg.d_model && next.version() == stm.version() + 1;
      stm = next;
    }
    shapes = shapes && stm.version() == 50;
    ok = ok && shapes;
    detail += std::string(", 50-turn shape/version ") + (shapes ? "stable" : "BROKEN");
  }

  report(2, "memory state invariants", ok, detail);
  CHECK(ok);
}

// ---- 3. kv-cache equivalence ------------------------------------------------

TEST_CASE("acceptance 3: kv-cache equivalence") {
  ModelConfig cfg;
  cfg.seed = 7;
  ReactiveModel model(cfg);
  NoGrad ng;
  Rng rng(3);
  std::vector<Tensor> state;
  for (std::int64_t l = 0; l < cfg.l_layers; ++l)
    state.push_back(Tensor::randn(cfg.s_mem, cfg.d_model, rng, 0.5));
  ShortTermMemory stm(state, 1);
  std::vector<int> tokens = tok::interaction("cache equivalence probe", "steady");

  double reactive_diff = 0.0;
  {
    Tensor full = model.decoder_forward(tokens, stm).logits;
    DecoderSession session = model.begin_session(stm);
    std::vector<int> prompt(tokens.begin(), tokens.begin() + 6);
    Tensor chunk = model.decode_step(prompt, session).logits;
    for (std::int64_t r = 0; r < chunk.rows(); ++r)
      for (std::int64_t c = 0; c < chunk.cols(); ++c)
        reactive_diff = std::max(reactive_diff, std::abs(chunk.at(r, c) - full.at(r, c)));
    for (std::size_t i = 6; i < tokens.size(); ++i) {
      Tensor step = model.decode_step({tokens[i]}, session).logits;
      for (std::int64_t c = 0; c < step.cols(); ++c)
        reactive_diff = std::max(
            reactive_diff, std::abs(step.at(0, c) - full.at(static_cast<std::int64_t>(i), c)));
    }
  }

  double baseline_diff = 0.0;
  {
    BaselineModel bm(cfg);
    std::vector<int> history = tok::interaction("first question", "first reply");
    std::vector<int> more = tok::interaction("second question", "second reply");
    history.insert(history.end(), more.begin(), more.end());
    Tensor full = bm.forward(history).logits;
    BaselineModel::Session session = bm.begin_session();
    std::vector<int> prompt(history.begin(), history.begin() + 9);
    Tensor chunk = bm.decode_step(prompt, session).logits;
    for (std::int64_t r = 0; r < chunk.rows(); ++r)
      for (std::int64_t c = 0; c < chunk.cols(); ++c)
        baseline_diff = std::max(baseline_diff, std::abs(chunk.at(r, c) - full.at(r, c)));
    for (std::size_t i = 9; i < history.size(); ++i) {
      Tensor step = bm.decode_step({history[i]}, session).logits;
      for (std::int64_t c = 0; c < step.cols(); ++c)
        baseline_diff = std::max(
            baseline_diff, std::abs(step.at(0, c) - full.at(static_cast<std::int64_t>(i), c)));
    }
  }

  // The session projects the memory K/V once. Recomputing those projections
  // fresh at every position must give the same bits, both in the projections
  // and in the logits they feed.
  int bit_steps = 0;
  bool bits_ok = true;
  {
    DecoderSession cached = model.begin_session(stm);
    for (std::size_t t = 0; t < tokens.size() && bits_ok; ++t) {
      DecoderSession fresh = model.begin_session(stm);
      for (std::size_t l = 0; l < cached.mem_kv.size(); ++l) {
        bits_ok = bits_ok && bits_equal(cached.mem_kv[l].k, fresh.mem_kv[l].k) &&
                  bits_equal(cached.mem_kv[l].v, fresh.mem_kv[l].v);
      }
      Tensor replay;
      for (std::size_t i = 0; i <= t; ++i) replay = model.decode_step({tokens[i]}, fresh).logits;
      Tensor step = model.decode_step({tokens[t]}, cached).logits;
      bits_ok = bits_ok && bits_equal(replay, step);
      ++bit_steps;
    }
  }

  bool ok = reactive_diff <= 1e-8 && baseline_diff <= 1e-8 && bits_ok;
  report(3, "kv-cache equivalence", ok,
         "reactive incremental vs full " + fmt(reactive_diff) + " <= 1e-8, baseline " +
             fmt(baseline_diff) + " <= 1e-8, memory k/v + logits bit-identical over " +
             std::to_string(bit_steps) + " steps" + (bits_ok ? "" : " (MISMATCH)"));
  CHECK(ok);
}

// ---- 4. conversation token-cost model ---------------------------------------

TEST_CASE("acceptance 4: conversation token-cost model") {
  bench::CostModelParams params;  // 8 turns, 50+50, 16 slots
  bench::CostReport llm = bench::conversation_token_cost(params, bench::Arch::StatelessLlm);
  bench::CostReport rxt = bench::conversation_token_cost(params, bench::Arch::Rxt);

  // closed-form oracle: sum_k ((k-1)T + T) = T * N(N+1)/2, and per-turn
  // accumulation as a second independent route
  const std::int64_t T = params.t_query + params.t_answer;
  const std::int64_t N = params.n_turns;
  std::int64_t closed_llm = T * N * (N + 1) / 2;
  std::int64_t closed_rxt = T * N;
  std::int64_t acc_llm = 0, acc_rxt = 0;
  for (std::int64_t k = 1; k <= N; ++k) {
    acc_llm += (k - 1) * T + params.t_query + params.t_answer;
    acc_rxt += params.t_query + params.t_answer;
  }
  bool analytic_ok = llm.cumulative_user_tokens == 3600 && rxt.cumulative_user_tokens == 800 &&
                     llm.cumulative_user_tokens == closed_llm && closed_llm == acc_llm &&
                     rxt.cumulative_user_tokens == closed_rxt && closed_rxt == acc_rxt;

  // instrumented: play the same conversation through real models and add up
  // the counters the runtime reports
  bool instr_ok = true;
  std::int64_t instr_llm = 0, instr_rxt = 0;
  {
    ModelConfig cfg;
    cfg.l_layers = 1;
    cfg.n_heads = 2;
    cfg.d_model = 16;
    cfg.s_mem = params.s_mem;
    cfg.ffn_hidden = 32;
    cfg.moe_experts = 2;
    cfg.moe_top_k = 1;
    cfg.max_interaction_len = 128;
    cfg.baseline_context_limit = 1024;
    cfg.seed = 3;
    ReactiveModel rm(cfg);
    BaselineModel bm(cfg);
    bench::LatencyBenchConfig lcfg;
    lcfg.n_turns = params.n_turns;
    lcfg.t_query = params.t_query;
    lcfg.t_answer = params.t_answer;
    lcfg.repeats = 1;
    lcfg.warmups = 0;
    bench::LatencyReport rep = bench::latency_bench(rm, bm, lcfg);
    for (const bench::TurnLatency& row : rep.turns) {
      instr_ok = instr_ok && !row.context_overflow;
      const bench::CostReport& want = row.arch == "rxt" ? rxt : llm;
      const bench::TurnCost& turn = want.turns[static_cast<std::size_t>(row.turn - 1)];
      instr_ok = instr_ok && row.prompt_tokens == turn.prompt_tokens &&
                 row.gen_tokens == turn.gen_tokens && row.update_tokens == turn.update_tokens;
      if (row.arch == "rxt")
        instr_rxt += row.prompt_tokens + row.gen_tokens;
      else
        instr_llm += row.prompt_tokens + row.gen_tokens;
    }
    instr_ok = instr_ok && instr_llm == 3600 && instr_rxt == 800;
  }

  // the ratio is (N+1)/2: an integer identity, checked exactly
  bool affine_ok = true;
  for (int n = 1; n <= 32; ++n) {
    bench::CostModelParams p = params;
    p.n_turns = n;
    std::int64_t a = bench::conversation_token_cost(p, bench::Arch::StatelessLlm).cumulative_user_tokens;
    std::int64_t b = bench::conversation_token_cost(p, bench::Arch::Rxt).cumulative_user_tokens;
    affine_ok = affine_ok && a * 2 == b * static_cast<std::int64_t>(n + 1);
  }

  bool ok = analytic_ok && instr_ok && affine_ok;
  report(4, "conversation token-cost model", ok,
         "stateless 3600, reactive 800 (analytic " + std::string(analytic_ok ? "==" : "!=") +
             " closed form; instrumented " + std::to_string(instr_llm) + "/" +
             std::to_string(instr_rxt) + "), ratio (N+1)/2 " +
             (affine_ok ? "exact" : "BROKEN") + " for N=1..32");
  CHECK(ok);
}

// ---- 7. training contracts --------------------------------------------------

TEST_CASE("acceptance 7: training contracts") {
  bool ok = true;
  std::string detail;

  {  // beta = 0: nothing reaches the encoder or the masked head
    ReactiveModel model(tiny_cfg());
    Adam opt(model.parameters(), Adam::Hyper{});
    JointTrainConfig jcfg;
    jcfg.alpha = 1.0;
    jcfg.beta = 0.0;
    Rng rng(3);
    stage1_joint_step(model, opt, {tok::encode("alpha beta gamma")}, jcfg, rng);
    bool enc_zero = true, dec_moved = false, mem_empty = true;
    for (auto& [name, t] : model.parameters()) {
      const std::vector<double>& g = t.impl()->grad;
      if (name.rfind("encoder.", 0) == 0 || name.rfind("mlm.", 0) == 0) {
        enc_zero = enc_zero && !g.empty() &&
                   std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; });
      }
      if (name.rfind("decoder.", 0) == 0 &&
          std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; }))
        dec_moved = true;
      if (name.rfind("memory.", 0) == 0) mem_empty = mem_empty && g.empty();
    }
    ok = ok && enc_zero && dec_moved && mem_empty;
    detail += std::string("beta=0 encoder grads ") + (enc_zero ? "exactly zero" : "NONZERO");
  }

  {  // the reported joint loss is the affine combination, bit for bit
    ReactiveModel model(tiny_cfg());
    Adam opt(model.parameters(), Adam::Hyper{});
    JointTrainConfig jcfg;
    jcfg.alpha = 0.7;
    jcfg.beta = 0.4;
    Rng rng(5);
    JointLosses l = stage1_joint_step(model, opt, {tok::encode("identity check")}, jcfg, rng);
    bool exact = l.l_joint == 0.7 * l.l_ar + 0.4 * l.l_mlm;
    ok = ok && exact;
    detail += std::string(", joint identity ") + (exact ? "exact" : "BROKEN");
  }

  {  // interpolation schedule: fixed first step, clamped tail
    MemAttnPretrainConfig mcfg;  // 0.9 -> 0.1 over 6
    bool sched = w_schedule(1, mcfg) == 0.9 && std::abs(w_schedule(6, mcfg) - 0.1) <= 1e-12 &&
                 w_schedule(7, mcfg) == 0.1 && w_schedule(100, mcfg) == 0.1;
    for (int t = 2; t <= 6; ++t) sched = sched && w_schedule(t, mcfg) <= w_schedule(t - 1, mcfg);
    MemAttnPretrainConfig ecfg = mcfg;
    ecfg.shape = ScheduleShape::Exponential;
    sched = sched && w_schedule(1, ecfg) == 0.9 && std::abs(w_schedule(6, ecfg) - 0.1) <= 1e-12 &&
            w_schedule(9, ecfg) == 0.1;
    ok = ok && sched;
    detail += std::string(", schedule w(1)=0.9 and clamp ") + (sched ? "hold" : "BROKEN");
  }

  {  // frozen components do not move by a single bit
    ReactiveModel model(tiny_cfg());
    Adam opt(model.parameters(), Adam::Hyper{1e-2, 0.9, 0.999, 1e-8, 1.0});
    opt.set_frozen("encoder", true);
    opt.set_frozen("memory.attn", true);
    ParamList params = model.parameters();
    std::vector<std::vector<double>> before;
    for (auto& [name, t] : params) before.push_back(t.impl()->data64);
    std::vector<std::vector<int>> turns = {tok::interaction("one", "first"),
                                           tok::interaction("two", "second")};
    Rng rng(8);
    for (int i = 0; i < 3; ++i) stage4_memory_aware_step(model, opt, turns, 0.02, rng);
    bool frozen_same = true, decoder_changed = false;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::string& name = params[i].first;
      const std::vector<double>& now = params[i].second.impl()->data64;
      if (name.rfind("encoder", 0) == 0 || name.rfind("memory.attn", 0) == 0)
        frozen_same = frozen_same && now == before[i];
      if (name.rfind("decoder.", 0) == 0 && now != before[i]) decoder_changed = true;
    }
    ok = ok && frozen_same && decoder_changed;
    detail += std::string(", frozen params ") + (frozen_same ? "bit-identical" : "MOVED");
  }

  report(7, "training contracts", ok, detail);
  CHECK(ok);
}

// ---- 8. round-trips ----------------------------------------------------------

TEST_CASE("acceptance 8: round-trips") {
  bool ok = true;
  std::string detail;
  std::string dir = temp_dir("eventlm_accept8");

  {  // checkpoints reproduce the forward pass bit for bit
    ReactiveModel model(tiny_cfg());
    {
      Adam opt(model.parameters(), Adam::Hyper{});
      JointTrainConfig jcfg;
      Rng rng(9);
      for (int i = 0; i < 2; ++i)
        stage1_joint_step(model, opt, {tok::encode("move the weights")}, jcfg, rng);
    }
    model.save(dir + "/model.ckpt");
    ReactiveModel loaded = ReactiveModel::load(dir + "/model.ckpt");
    NoGrad ng;
    std::vector<int> tk = tok::interaction("round", "trip");
    ShortTermMemory sa = model.memory().initial_state();
    ShortTermMemory sb = loaded.memory().initial_state();
    bool model_bits = bits_equal(model.decoder_forward(tk, sa).logits,
                                 loaded.decoder_forward(tk, sb).logits) &&
                      bits_equal(model.encoder_forward(tk).layers.back(),
                                 loaded.encoder_forward(tk).layers.back());
    ShortTermMemory ua = model.memory().update(sa, model.encoder_forward(tk));
    ShortTermMemory ub = loaded.memory().update(sb, loaded.encoder_forward(tk));
    for (std::int64_t l = 0; l < ua.layers(); ++l)
      model_bits = model_bits && bits_equal(ua.layer(l), ub.layer(l));

    BaselineModel bm(tiny_cfg());
    bm.save(dir + "/baseline.ckpt");
    BaselineModel bloaded = BaselineModel::load(dir + "/baseline.ckpt");
    model_bits = model_bits && bits_equal(bm.forward(tk).logits, bloaded.forward(tk).logits);
    ok = ok && model_bits;
    detail += std::string("checkpoints ") + (model_bits ? "bit-exact" : "DRIFTED");
  }

  {  // dataset generation is a pure function of its seed
    std::string a = temp_dir("eventlm_accept8_gen_a");
    std::string b = temp_dir("eventlm_accept8_gen_b");
    std::string c = temp_dir("eventlm_accept8_gen_c");
    bench::gen_dialogues(9, 12, 3, a);
    bench::gen_dialogues(9, 12, 3, b);
    bench::gen_dialogues(10, 12, 3, c);
    bool same = true, differs = false;
    for (const char* f : {"/train.jsonl", "/val.jsonl", "/test.jsonl"}) {
      same = same && slurp(a + f) == slurp(b + f);
      differs = differs || slurp(a + f) != slurp(c + f);
    }
    ok = ok && same && differs;
    detail += std::string(", dataset generation ") + (same ? "deterministic" : "UNSTABLE");
  }

  {  // csv files survive write -> read -> write byte for byte
    const double nan = std::nan("");
    bench::LatencyReport lat;
    lat.turns.push_back({1, "rxt", 0.011, 0.0005, 0.002, 24, 24, 65, false});
    lat.turns.push_back({2, "stateless_llm", nan, nan, 0.0, 72, 24, 0, true});
    std::string lp = dir + "/latency.csv";
    bench::write_latency_csv(lp, lat);
    std::string first = slurp(lp);
    bench::write_latency_csv(lp, bench::read_latency_csv(lp));
    bool stable = slurp(lp) == first;

    bench::CostModelParams params;
    params.n_turns = 4;
    std::vector<bench::CostReport> reports = {
        bench::conversation_token_cost(params, bench::Arch::StatelessLlm),
        bench::conversation_token_cost(params, bench::Arch::Rxt)};
    std::string cp = dir + "/cost.csv";
    bench::write_cost_csv(cp, reports);
    std::vector<bench::CostCsvRow> rows = bench::read_cost_csv(cp);
    std::size_t i = 0;
    bool cost_rt = rows.size() == 8;
    for (const bench::CostReport& rep : reports) {
      std::int64_t cum = 0;
      for (const bench::TurnCost& t : rep.turns) {
        cum += t.user_facing();
        cost_rt = cost_rt && i < rows.size() && rows[i].arch == bench::arch_name(rep.arch) &&
                  rows[i].turn == t.turn && rows[i].prompt_tokens == t.prompt_tokens &&
                  rows[i].gen_tokens == t.gen_tokens && rows[i].update_tokens == t.update_tokens &&
                  rows[i].user_tokens == t.user_facing() && rows[i].cumulative_user_tokens == cum;
        ++i;
      }
    }
    stable = stable && cost_rt;

    std::vector<bench::MetricsCsvRow> met = {{"rxt", 1.31, 0.92, 140, 7.5},
                                             {"stateless_llm", 4.02, 0.44, 140, nan}};
    std::string mp = dir + "/eval.csv";
    bench::write_metrics_csv(mp, met);
    first = slurp(mp);
    bench::write_metrics_csv(mp, bench::read_metrics_csv(mp));
    stable = stable && slurp(mp) == first;
    ok = ok && stable;
    detail += std::string(", csv round-trips ") + (stable ? "byte-stable" : "UNSTABLE");
  }

  report(8, "round-trips", ok, detail);
  CHECK(ok);
}

// ---- 5. latency shape --------------------------------------------------------

TEST_CASE("acceptance 5: constant-latency shape") {
  Timer timer;
  ModelConfig cfg;  // desk-scale defaults
  cfg.seed = 21;
  ReactiveModel rm(cfg);
  BaselineModel bm(cfg);
  bench::LatencyBenchConfig lcfg;  // 8 turns, 24+24, medians over repeats
  lcfg.repeats = 30;
  bench::LatencyReport rep = bench::latency_bench(rm, bm, lcfg);

  const bench::TurnLatency *r1 = nullptr, *r8 = nullptr, *b1 = nullptr, *b8 = nullptr;
  bool overflow = false;
  for (const bench::TurnLatency& row : rep.turns) {
    overflow = overflow || row.context_overflow;
    if (row.arch == "rxt" && row.turn == 1) r1 = &row;
    if (row.arch == "rxt" && row.turn == lcfg.n_turns) r8 = &row;
    if (row.arch == "stateless_llm" && row.turn == 1) b1 = &row;
    if (row.arch == "stateless_llm" && row.turn == lcfg.n_turns) b8 = &row;
  }
  REQUIRE(r1 != nullptr);
  REQUIRE(r8 != nullptr);
  REQUIRE(b1 != nullptr);
  REQUIRE(b8 != nullptr);

  double rxt_ratio = r8->prompt_s / r1->prompt_s;
  double llm_ratio = b8->prompt_s / b1->prompt_s;

  // the operation counters must show the same shape with no timer noise at
  // all: flat for the reactive model, linear growth for the baseline
  std::int64_t expect_b8 =
      static_cast<std::int64_t>(lcfg.n_turns - 1) * (lcfg.t_query + lcfg.t_answer) + lcfg.t_query;
  bool counters = r1->prompt_tokens == lcfg.t_query && r8->prompt_tokens == r1->prompt_tokens &&
                  b1->prompt_tokens == lcfg.t_query && b8->prompt_tokens == expect_b8;

  double secs = timer.secs();
  bool ok = rxt_ratio <= 1.25 && llm_ratio >= 2.0 && counters && !overflow && secs < 300.0;
  report(5, "constant-latency shape", ok,
         "reactive prompt turn8/turn1 " + fmt(rxt_ratio) + "x <= 1.25x (" + fmt(r1->prompt_s * 1e3) +
             "ms -> " + fmt(r8->prompt_s * 1e3) + "ms), stateless " + fmt(llm_ratio) +
             "x >= 2.0x (" + fmt(b1->prompt_s * 1e3) + "ms -> " + fmt(b8->prompt_s * 1e3) +
             "ms), counters " + std::to_string(r8->prompt_tokens) + "/" +
             std::to_string(r1->prompt_tokens) + " and " + std::to_string(b8->prompt_tokens) +
             "/" + std::to_string(b1->prompt_tokens) + ", " + fmt(secs) + "s < 300s");
  CHECK(ok);
}

// ---- 6. curriculum efficacy at desk scale -----------------------------------

namespace {

// Per-seed training budgets for the efficacy run. The desk-scale recipe has
// to finish on one CPU core, so the budgets stay as small as the pass
// margins allow.
constexpr int kEffDialogues = 160;  // splits 128/16/16
constexpr int kEffStage1Steps = 250;
constexpr int kEffStage2Steps = 400;
constexpr int kEffStage3Steps = 500;
constexpr int kEffStage4Steps = 1800;
constexpr int kEffBaselineSteps = 600;

struct FactStats {
  double ce_sum = 0.0;
  std::int64_t count = 0;
  std::int64_t hits = 0;

  void score(const Tensor& logits, const std::vector<int>& targets) {
    for (std::int64_t r = 0; r < logits.rows(); ++r) {
      int tgt = targets[static_cast<std::size_t>(r)];
      if (tgt < 0) continue;
      double mx = logits.at(r, 0);
      std::int64_t arg = 0;
      for (std::int64_t c = 1; c < logits.cols(); ++c) {
        double v = logits.at(r, c);
        if (v > mx) {
          mx = v;
          arg = c;
        }
      }
      double sum = 0.0;
      for (std::int64_t c = 0; c < logits.cols(); ++c) sum += std::exp(logits.at(r, c) - mx);
      ce_sum += mx + std::log(sum) - logits.at(r, tgt);
      ++count;
      if (arg == tgt) ++hits;
    }
  }
  double ppl() const { return std::exp(ce_sum / static_cast<double>(count)); }
  double acc() const { return static_cast<double>(hits) / static_cast<double>(count); }
};

// Answer-token stats on the turns that depend on an earlier fact, with the
// memory streamed normally, or read as all-zero slots when ablated.
FactStats fact_eval_reactive(ReactiveModel& model, const std::vector<data::Dialogue>& dialogues,
                             bool zero_stm) {
  NoGrad ng;
  FactStats stats;
  std::vector<Tensor> zero;
  for (std::int64_t l = 0; l < model.config().l_layers; ++l)
    zero.push_back(Tensor::zeros(model.config().s_mem, model.config().d_model));
  ShortTermMemory zeros(zero, 0);
  for (const data::Dialogue& d : dialogues) {
    ShortTermMemory stm = model.memory().initial_state();
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
      std::vector<int> tk = data::turn_tokens(d.turns[i]);
      if (d.turns[i].fact_turn >= 0) {
        ModelOutput out = model.decoder_forward(tk, zero_stm ? zeros : stm);
        stats.score(out.logits, data::shifted_targets(tk, true));
      }
      if (i + 1 < d.turns.size())
        stm = model.memory().update(stm, model.encoder_forward(tk));
    }
  }
  return stats;
}

// The stateless reference answers every fact turn from the current query
// alone; the earlier turns are simply not in its input.
FactStats fact_eval_query_only(BaselineModel& model, const std::vector<data::Dialogue>& dialogues) {
  NoGrad ng;
  FactStats stats;
  for (const data::Dialogue& d : dialogues) {
    for (const data::DialogueTurn& turn : d.turns) {
      if (turn.fact_turn < 0) continue;
      std::vector<int> tk = data::turn_tokens(turn);
      stats.score(model.forward(tk).logits, data::shifted_targets(tk, true));
    }
  }
  return stats;
}

struct SeedOutcome {
  double cos3 = 0.0;
  double rxt_ppl = 0.0;
  double base_ppl = 0.0;
  double acc_mem = 0.0;
  double acc_zero = 0.0;
};

SeedOutcome run_efficacy_seed(std::uint64_t seed) {
  std::string data_dir = temp_dir("eventlm_accept6_data_" + std::to_string(seed));
  std::string out_dir = temp_dir("eventlm_accept6_out_" + std::to_string(seed));
  bench::gen_dialogues(seed, kEffDialogues, 2, data_dir);

  CurriculumConfig cfg;  // desk-scale model defaults
  cfg.model.seed = seed;
  cfg.seed = seed;
  cfg.stage1.steps = kEffStage1Steps;
  cfg.stage2.steps = kEffStage2Steps;
  cfg.stage3.steps = kEffStage3Steps;
  cfg.stage4.steps = kEffStage4Steps;
  cfg.stage4.turns_start = 2;
  cfg.stage4.turns_end = 2;
  std::ostringstream log;
  run_curriculum(cfg, data_dir, out_dir, "all", log);

  std::vector<data::Dialogue> val = data::load_dialogues(data_dir + "/val.jsonl");
  std::vector<data::Dialogue> test = data::load_dialogues(data_dir + "/test.jsonl");

  SeedOutcome out;
  {
    ReactiveModel m3 = ReactiveModel::load(out_dir + "/stage3.ckpt");
    out.cos3 = stage3_eval_cosine(m3, val, cfg.stage3);
  }
  ReactiveModel m4 = ReactiveModel::load(out_dir + "/stage4.ckpt");

  // parameter-matched stateless reference, trained on the same interactions
  // but always given only the current query
  BaselineModel bm(cfg.model);
  {
    std::vector<data::Dialogue> train = data::load_dialogues(data_dir + "/train.jsonl");
    std::vector<std::vector<int>> rows;
    for (const data::Dialogue& d : train)
      for (const data::DialogueTurn& t : d.turns) rows.push_back(data::turn_tokens(t));
    Adam opt(bm.parameters(), cfg.baseline.optim);
    Rng rng(seed ^ 0xb5ULL);
    for (int step = 0; step < kEffBaselineSteps; ++step) {
      std::vector<std::vector<int>> batch;
      for (int i = 0; i < cfg.baseline.batch_size; ++i)
        batch.push_back(rows[rng.below(rows.size())]);
      baseline_train_step(bm, opt, batch);
    }
  }

  FactStats mem = fact_eval_reactive(m4, test, false);
  FactStats zero = fact_eval_reactive(m4, test, true);
  FactStats base = fact_eval_query_only(bm, test);
  out.rxt_ppl = mem.ppl();
  out.base_ppl = base.ppl();
  out.acc_mem = mem.acc();
  out.acc_zero = zero.acc();
  return out;
}

std::string fmt_triple(double a, double b, double c) {
  return "[" + fmt(a) + " " + fmt(b) + " " + fmt(c) + "]";
}

}  // namespace

TEST_CASE("acceptance 6: curriculum efficacy at desk scale") {
  Timer timer;
  const std::uint64_t seeds[3] = {71, 72, 73};
  SeedOutcome res[3];
  for (int i = 0; i < 3; ++i) res[i] = run_efficacy_seed(seeds[i]);

  double cos_min = std::min({res[0].cos3, res[1].cos3, res[2].cos3});
  bool strictly_below = true;
  double gaps[3];
  for (int i = 0; i < 3; ++i) {
    gaps[i] = res[i].base_ppl - res[i].rxt_ppl;
    strictly_below = strictly_below && res[i].rxt_ppl < res[i].base_ppl;
  }
  double gap_mean = (gaps[0] + gaps[1] + gaps[2]) / 3.0;
  double var = 0.0;
  for (double g : gaps) var += (g - gap_mean) * (g - gap_mean);
  double gap_sd = std::sqrt(var / 2.0);  // sample stddev over the 3 runs

  double acc_mem = (res[0].acc_mem + res[1].acc_mem + res[2].acc_mem) / 3.0;
  double acc_zero = (res[0].acc_zero + res[1].acc_zero + res[2].acc_zero) / 3.0;
  double degrade = acc_mem > 0.0 ? (acc_mem - acc_zero) / acc_mem : 0.0;

  double secs = timer.secs();
  bool ok = cos_min >= 0.9 && strictly_below && gap_mean > 3.0 * gap_sd && degrade >= 0.20 &&
            secs < 3600.0;
  report(6, "curriculum efficacy at desk scale", ok,
         "stage3 held-out cosine " + fmt_triple(res[0].cos3, res[1].cos3, res[2].cos3) +
             " min " + fmt(cos_min) + " >= 0.9; fact-answer ppl reactive " +
             fmt_triple(res[0].rxt_ppl, res[1].rxt_ppl, res[2].rxt_ppl) + " vs query-only " +
             fmt_triple(res[0].base_ppl, res[1].base_ppl, res[2].base_ppl) + ", gap " +
             fmt(gap_mean) + " > 3*sd " + fmt(3.0 * gap_sd) + "; stm zeroing accuracy " +
             fmt(acc_mem) + " -> " + fmt(acc_zero) + " (" + fmt(degrade * 100.0) +
             "% >= 20%); " + fmt(secs) + "s < 3600s");
  CHECK(ok);
}
