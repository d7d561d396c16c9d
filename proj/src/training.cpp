#include "eventlm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "eventlm/ops.hpp"
#include "eventlm/tape.hpp"

namespace eventlm {

namespace fs = std::filesystem;

// ---- Adam -------------------------------------------------------------------

Adam::Adam(ParamList params, Hyper h) : h_(h) {
  if (params.empty()) throw std::invalid_argument("adam: empty parameter list");
  if (h_.lr < 0.0) throw std::invalid_argument("adam: lr must be >= 0");
  if (h_.beta1 < 0.0 || h_.beta1 >= 1.0 || h_.beta2 < 0.0 || h_.beta2 >= 1.0)
    throw std::invalid_argument("adam: betas must lie in [0, 1)");
  if (h_.eps <= 0.0) throw std::invalid_argument("adam: eps must be positive");
  if (h_.clip_norm < 0.0) throw std::invalid_argument("adam: clip_norm must be >= 0");
  for (auto& [name, t] : params) {
    if (!t.defined()) throw std::invalid_argument("adam: undefined parameter " + name);
    if (t.dtype() != DType::F64) throw std::invalid_argument("adam: parameter " + name + " is not float64");
    slots_.push_back(Slot{name, t, {}, {}, false});
  }
}

void Adam::zero_grad() {
  // Fill rather than deallocate: grad buffers stay attached to their tensors
  // and the allocation accounting stays balanced.
  for (Slot& s : slots_) {
    auto& g = s.param.impl()->grad;
    std::fill(g.begin(), g.end(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  double norm_sq = 0.0;
  std::vector<const std::vector<double>*> grads(slots_.size(), nullptr);
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].frozen) continue;
    const auto& g = slots_[i].param.impl()->grad;
    if (g.empty()) continue;  // untouched by this step's backward
    grads[i] = &g;
    for (double v : g) norm_sq += v * v;
  }
  double scale = 1.0;
  if (h_.clip_norm > 0.0) {
    double norm = std::sqrt(norm_sq);
    if (norm > h_.clip_norm) scale = h_.clip_norm / norm;
  }
  double bc1 = 1.0 - std::pow(h_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(h_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (!grads[i]) continue;
    Slot& s = slots_[i];
    auto& data = s.param.impl()->data64;
    if (s.m.empty()) {
      s.m.assign(data.size(), 0.0);
      s.v.assign(data.size(), 0.0);
    }
    const auto& g = *grads[i];
    for (std::size_t e = 0; e < data.size(); ++e) {
      double ge = g[e] * scale;
      s.m[e] = h_.beta1 * s.m[e] + (1.0 - h_.beta1) * ge;
      s.v[e] = h_.beta2 * s.v[e] + (1.0 - h_.beta2) * ge * ge;
      double mhat = s.m[e] / bc1;
      double vhat = s.v[e] / bc2;
      data[e] -= h_.lr * mhat / (std::sqrt(vhat) + h_.eps);
    }
  }
}

void Adam::set_frozen(const std::string& prefix, bool frozen) {
  int hits = 0;
  for (Slot& s : slots_) {
    if (s.name.rfind(prefix, 0) == 0) {
      s.frozen = frozen;
      ++hits;
    }
  }
  if (hits == 0) throw std::invalid_argument("adam: no parameter matches prefix '" + prefix + "'");
}

bool Adam::is_frozen(const std::string& name) const {
  for (const Slot& s : slots_) {
    if (s.name == name) return s.frozen;
  }
  throw std::invalid_argument("adam: unknown parameter '" + name + "'");
}

// ---- masking ----------------------------------------------------------------

MaskResult mask_tokens(const std::vector<int>& seq, double mask_prob, Rng& rng) {
  if (seq.empty()) throw std::invalid_argument("mask_tokens: empty sequence");
  if (!(mask_prob > 0.0 && mask_prob < 1.0))
    throw std::invalid_argument("mask_tokens: mask_prob must lie in (0, 1)");
  std::vector<std::int64_t> candidates;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!tok::is_special(seq[i])) candidates.push_back(static_cast<std::int64_t>(i));
  }
  if (candidates.empty())
    throw std::invalid_argument("mask_tokens: sequence has only special tokens");

  MaskResult out;
  for (int attempt = 0; attempt < 10000 && out.positions.empty(); ++attempt) {
    for (std::int64_t c : candidates) {
      if (rng.uniform() < mask_prob) out.positions.push_back(c);
    }
  }
  if (out.positions.empty()) {
    auto pick = static_cast<std::size_t>(rng.uniform() * static_cast<double>(candidates.size()));
    out.positions.push_back(candidates[std::min(pick, candidates.size() - 1)]);
  }
  out.tokens = seq;
  for (std::int64_t p : out.positions) out.tokens[static_cast<std::size_t>(p)] = tok::kMask;
  return out;
}

// ---- config validation ------------------------------------------------------

void JointTrainConfig::validate() const {
  if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("joint config: alpha and beta must be >= 0");
  if (alpha + beta <= 0.0) throw std::invalid_argument("joint config: alpha + beta must be positive");
  if (!(mask_prob > 0.0 && mask_prob < 1.0))
    throw std::invalid_argument("joint config: mask_prob must lie in (0, 1)");
  if (noise_std < 0.0) throw std::invalid_argument("joint config: noise_std must be >= 0");
  if (steps < 1) throw std::invalid_argument("joint config: steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("joint config: batch_size must be >= 1");
}

void MemAttnPretrainConfig::validate() const {
  if (!(w_end > 0.0 && w_end <= w_start && w_start <= 1.0))
    throw std::invalid_argument("memory pretrain config: need 0 < w_end <= w_start <= 1");
  if (n_curriculum_steps < 1)
    throw std::invalid_argument("memory pretrain config: n_curriculum_steps must be >= 1");
  if (steps < 1) throw std::invalid_argument("memory pretrain config: steps must be >= 1");
}

void Stage4Config::validate() const {
  if (turns_start < 2) throw std::invalid_argument("stage4 config: turns_start must be >= 2");
  if (turns_end < turns_start) throw std::invalid_argument("stage4 config: turns_end must be >= turns_start");
  if (stm_noise_sigma < 0.0) throw std::invalid_argument("stage4 config: stm_noise_sigma must be >= 0");
  if (!(unfreeze_fraction >= 0.0 && unfreeze_fraction <= 1.0))
    throw std::invalid_argument("stage4 config: unfreeze_fraction must lie in [0, 1]");
  if (steps < 1) throw std::invalid_argument("stage4 config: steps must be >= 1");
  for (std::size_t i = 0; i < unfreeze_plan.size(); ++i) {
    if (unfreeze_plan[i].unfreeze_step < 0)
      throw std::invalid_argument("stage4 config: unfreeze steps must be >= 0");
    if (i > 0 && unfreeze_plan[i].unfreeze_step < unfreeze_plan[i - 1].unfreeze_step)
      throw std::invalid_argument("stage4 config: unfreeze plan steps must be non-decreasing");
  }
}

std::vector<FreezeEntry> Stage4Config::effective_plan() const {
  if (!unfreeze_plan.empty()) return unfreeze_plan;
  int u = static_cast<int>(unfreeze_fraction * steps);
  return {{"encoder", u}, {"memory.attn", u}};
}

void apply_freeze_plan(Adam& opt, const std::vector<FreezeEntry>& plan, int step) {
  for (const FreezeEntry& e : plan) opt.set_frozen(e.component, step < e.unfreeze_step);
}

// ---- stages 1 and 2 ---------------------------------------------------------

namespace {

Tensor accumulate(Tensor acc, const Tensor& x) {
  return acc.defined() ? ops::add(acc, x) : x;
}

void check_interaction_template(const std::vector<int>& seq) {
  std::size_t end = seq.size();
  while (end > 0 && seq[end - 1] == tok::kPad) --end;
  bool ok = end >= 4 && seq[0] == tok::kQuery && seq[end - 1] == tok::kEos;
  if (ok) {
    auto it = std::find(seq.begin() + 1, seq.begin() + static_cast<std::ptrdiff_t>(end) - 1, tok::kAnswer);
    ok = it != seq.begin() + static_cast<std::ptrdiff_t>(end) - 1;
  }
  if (!ok)
    throw std::invalid_argument(
        "sft: row is not a [Query] ... [Answer] ... [EOS] interaction");
}

JointLosses joint_core(ReactiveModel& model, Adam& opt,
                       const std::vector<std::vector<int>>& batch,
                       const JointTrainConfig& cfg, Rng& rng) {
  cfg.validate();
  if (batch.empty()) throw std::invalid_argument("joint step: empty batch");
  for (const auto& seq : batch) {
    if (seq.size() < 2) throw std::invalid_argument("joint step: sequence needs at least 2 tokens");
  }

  opt.zero_grad();
  Tape tape;
  Tensor ar_sum, mlm_sum, aux_sum;
  for (const std::vector<int>& seq : batch) {
    MaskResult mr = mask_tokens(seq, cfg.mask_prob, rng);

    EncodedData ed = model.encoder_forward(mr.tokens);
    Tensor mlm_logits = model.mlm_logits(ed.layers.back());
    std::vector<int> mlm_targets(seq.size(), -1);
    for (std::int64_t p : mr.positions) mlm_targets[static_cast<std::size_t>(p)] = seq[static_cast<std::size_t>(p)];
    mlm_sum = accumulate(mlm_sum, ops::cross_entropy(mlm_logits, mlm_targets));

    // The decoder's memory input is the same encoding, detached so no decoder
    // gradient reaches the encoder, plus optional gaussian noise.
    std::vector<Tensor> mem;
    mem.reserve(ed.layers.size());
    for (const Tensor& layer : ed.layers) {
      Tensor det = layer.detach();
      if (cfg.noise_std > 0.0)
        det = ops::add(det, Tensor::randn(det.rows(), det.cols(), rng, cfg.noise_std));
      mem.push_back(det);
    }
    ModelOutput out = model.decoder_forward(seq, mem);
    ar_sum = accumulate(ar_sum, ops::cross_entropy(out.logits, data::shifted_targets(seq, false)));
    aux_sum = accumulate(aux_sum, out.aux);
  }

  double inv = 1.0 / static_cast<double>(batch.size());
  Tensor ar_mean = ops::scale(ar_sum, inv);
  Tensor mlm_mean = ops::scale(mlm_sum, inv);
  Tensor aux_mean = ops::scale(aux_sum, inv);
  // The MoE auxiliary loss rides with the autoregressive term: alpha = 0 must
  // leave every decoder gradient exactly zero, the router's included.
  Tensor objective = ops::add(ops::add(ops::scale(ar_mean, cfg.alpha), ops::scale(mlm_mean, cfg.beta)),
                              ops::scale(aux_mean, kMoEAuxWeight * cfg.alpha));
  tape.backward(objective);
  opt.step();

  JointLosses losses;
  losses.l_ar = ar_mean.at(0, 0);
  losses.l_mlm = mlm_mean.at(0, 0);
  losses.l_joint = cfg.alpha * losses.l_ar + cfg.beta * losses.l_mlm;
  losses.aux = aux_mean.at(0, 0);
  return losses;
}

}  // namespace

JointLosses stage1_joint_step(ReactiveModel& model, Adam& opt,
                              const std::vector<std::vector<int>>& batch,
                              const JointTrainConfig& cfg, Rng& rng) {
  return joint_core(model, opt, batch, cfg, rng);
}

JointLosses stage2_sft_step(ReactiveModel& model, Adam& opt,
                            const std::vector<std::vector<int>>& batch,
                            const JointTrainConfig& cfg, Rng& rng) {
  for (const auto& seq : batch) check_interaction_template(seq);
  return joint_core(model, opt, batch, cfg, rng);
}

// ---- stage 3 ----------------------------------------------------------------

double w_schedule(int t, const MemAttnPretrainConfig& cfg) {
  cfg.validate();
  if (t < 1) throw std::invalid_argument("w_schedule: t is 1-based");
  int n = cfg.n_curriculum_steps;
  if (t >= n) return cfg.w_end;
  double frac = static_cast<double>(t - 1) / static_cast<double>(n - 1);
  if (cfg.shape == ScheduleShape::Linear) return cfg.w_start + frac * (cfg.w_end - cfg.w_start);
  return cfg.w_start * std::pow(cfg.w_end / cfg.w_start, frac);
}

Tensor pool_to_slots(const Tensor& rows, std::int64_t s_mem) {
  if (s_mem < 1) throw std::invalid_argument("pool_to_slots: s_mem must be >= 1");
  std::int64_t t = rows.rows(), d = rows.cols();
  std::int64_t width = (t + s_mem - 1) / s_mem;
  Tensor out = Tensor::zeros(s_mem, d);
  for (std::int64_t b = 0; b < s_mem; ++b) {
    std::int64_t lo = b * width;
    std::int64_t hi = std::min(lo + width, t);
    for (std::int64_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::int64_t r = lo; r < hi; ++r) acc += rows.at(r, c);
      out.set(b, c, acc / static_cast<double>(width));
    }
  }
  return out;
}

namespace {

struct SlotCosine {
  Tensor weighted_sum;  // sum over layers of (per-layer mean cosine * valid slots)
  std::int64_t valid = 0;
  int skipped = 0;
};

// Targets (1-w)*prev + w*pooled(ed) per layer, slots with a zero-norm side
// excluded. weighted_sum stays on the tape when stm_next does.
SlotCosine slot_cosine(const ShortTermMemory& stm_prev, const ShortTermMemory& stm_next,
                       const EncodedData& ed, double w_t, std::ostream* warnings) {
  SlotCosine out;
  std::int64_t s = stm_prev.slot_count(), d = stm_prev.dim();
  for (std::int64_t l = 0; l < stm_prev.layers(); ++l) {
    Tensor pooled = pool_to_slots(ed.layers[static_cast<std::size_t>(l)], s);
    const Tensor& prev = stm_prev.layer(l);
    Tensor target = Tensor::zeros(s, d);
    for (std::int64_t r = 0; r < s; ++r) {
      for (std::int64_t c = 0; c < d; ++c) {
        target.set(r, c, (1.0 - w_t) * prev.at(r, c) + w_t * pooled.at(r, c));
      }
    }
    const Tensor& next = stm_next.layer(l);
    std::vector<std::int64_t> valid;
    for (std::int64_t r = 0; r < s; ++r) {
      double nn = 0.0, tn = 0.0;
      for (std::int64_t c = 0; c < d; ++c) {
        nn += next.at(r, c) * next.at(r, c);
        tn += target.at(r, c) * target.at(r, c);
      }
      if (nn == 0.0 || tn == 0.0) {
        ++out.skipped;
        if (warnings)
          *warnings << "stage3: skipping zero-norm slot " << r << " in layer " << l << "\n";
      } else {
        valid.push_back(r);
      }
    }
    if (valid.empty()) continue;
    Tensor cos = ops::cosine_rows_mean(ops::gather_rows(next, valid), ops::gather_rows(target, valid));
    out.weighted_sum = accumulate(out.weighted_sum, ops::scale(cos, static_cast<double>(valid.size())));
    out.valid += static_cast<std::int64_t>(valid.size());
  }
  return out;
}

}  // namespace

Stage3Result stage3_memattn_step(ReactiveModel& model, Adam& opt,
                                 const ShortTermMemory& stm_prev,
                                 const std::vector<int>& interaction_tokens,
                                 double w_t, std::ostream* warnings) {
  if (!(w_t >= 0.0 && w_t <= 1.0)) throw std::invalid_argument("stage3: w_t must lie in [0, 1]");
  opt.zero_grad();
  Tape tape;
  EncodedData ed;
  {
    NoGrad ng;
    ed = model.encoder_forward(interaction_tokens);
  }
  ShortTermMemory stm_next = model.memory().update(stm_prev, ed);
  SlotCosine sc = slot_cosine(stm_prev, stm_next, ed, w_t, warnings);
  if (sc.valid == 0) throw std::runtime_error("stage3: every slot had zero norm; nothing to train on");
  Tensor loss = ops::scale(sc.weighted_sum, -1.0 / static_cast<double>(sc.valid));
  tape.backward(loss);
  opt.step();
  return Stage3Result{loss.at(0, 0), sc.skipped, stm_next.detached_clone()};
}

double stage3_eval_cosine(ReactiveModel& model, const std::vector<data::Dialogue>& dialogues,
                          const MemAttnPretrainConfig& cfg) {
  if (dialogues.empty()) throw std::invalid_argument("stage3 eval: no dialogues");
  NoGrad ng;
  double cos_sum = 0.0;
  std::int64_t valid = 0;
  for (const data::Dialogue& d : dialogues) {
    ShortTermMemory stm = model.memory().initial_state();
    for (std::size_t ti = 0; ti < d.turns.size(); ++ti) {
      double w = w_schedule(static_cast<int>(ti) + 1, cfg);
      EncodedData ed = model.encoder_forward(data::turn_tokens(d.turns[ti]));
      ShortTermMemory next = model.memory().update(stm, ed);
      SlotCosine sc = slot_cosine(stm, next, ed, w, nullptr);
      if (sc.valid > 0) {
        cos_sum += sc.weighted_sum.at(0, 0);
        valid += sc.valid;
      }
      stm = next;
    }
  }
  if (valid == 0) throw std::runtime_error("stage3 eval: every slot had zero norm");
  return cos_sum / static_cast<double>(valid);
}

// ---- stage 4 ----------------------------------------------------------------

Stage4Losses stage4_memory_aware_step(ReactiveModel& model, Adam& opt,
                                      const std::vector<std::vector<int>>& turns,
                                      double stm_noise_sigma, Rng& rng) {
  if (turns.empty()) throw std::invalid_argument("stage4: dialogue with no turns");
  for (const auto& t : turns) {
    if (t.size() < 2) throw std::invalid_argument("stage4: turn needs at least 2 tokens");
  }

  opt.zero_grad();
  Tape tape;
  ShortTermMemory stm = model.memory().initial_state_noised(rng, stm_noise_sigma);
  Stage4Losses losses;
  Tensor ce_sum, objective;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    ModelOutput out = model.decoder_forward(turns[i], stm);
    Tensor l = ops::cross_entropy(out.logits, data::shifted_targets(turns[i], false));
    losses.per_turn.push_back(l.at(0, 0));
    ce_sum = accumulate(ce_sum, l);
    objective = accumulate(objective, ops::add(l, ops::scale(out.aux, kMoEAuxWeight)));
    if (i + 1 < turns.size()) {
      // Nothing is detached: the next turn's loss reaches this update, the
      // encoder behind it, and every earlier state.
      EncodedData ed = model.encoder_forward(turns[i]);
      stm = model.memory().update(stm, ed);
    }
  }
  tape.backward(objective);
  opt.step();

  losses.l_total = ce_sum.at(0, 0);
  losses.l_ar_mean = losses.l_total / static_cast<double>(turns.size());
  return losses;
}

double baseline_train_step(BaselineModel& model, Adam& opt,
                           const std::vector<std::vector<int>>& histories) {
  if (histories.empty()) throw std::invalid_argument("baseline step: empty batch");
  for (const auto& h : histories) {
    if (h.size() < 2) throw std::invalid_argument("baseline step: history needs at least 2 tokens");
  }
  opt.zero_grad();
  Tape tape;
  Tensor ce_sum, aux_sum;
  for (const std::vector<int>& h : histories) {
    ModelOutput out = model.forward(h);
    ce_sum = accumulate(ce_sum, ops::cross_entropy(out.logits, data::shifted_targets(h, false)));
    aux_sum = accumulate(aux_sum, out.aux);
  }
  double inv = 1.0 / static_cast<double>(histories.size());
  Tensor ce_mean = ops::scale(ce_sum, inv);
  Tensor objective = ops::add(ce_mean, ops::scale(aux_sum, kMoEAuxWeight * inv));
  tape.backward(objective);
  opt.step();
  return ce_mean.at(0, 0);
}

// ---- evaluation -------------------------------------------------------------

double eval_answer_ce(ReactiveModel& model, const std::vector<data::Dialogue>& dialogues) {
  if (dialogues.empty()) throw std::invalid_argument("eval: no dialogues");
  NoGrad ng;
  double total = 0.0;
  std::int64_t count = 0;
  for (const data::Dialogue& d : dialogues) {
    ShortTermMemory stm = model.memory().initial_state();
    for (std::size_t ti = 0; ti < d.turns.size(); ++ti) {
      std::vector<int> tk = data::turn_tokens(d.turns[ti]);
      std::vector<int> targets = data::shifted_targets(tk, true);
      std::int64_t n = static_cast<std::int64_t>(std::count_if(
          targets.begin(), targets.end(), [](int t) { return t >= 0; }));
      ModelOutput out = model.decoder_forward(tk, stm);
      total += ops::cross_entropy(out.logits, targets).at(0, 0) * static_cast<double>(n);
      count += n;
      if (ti + 1 < d.turns.size()) {
        EncodedData ed = model.encoder_forward(tk);
        stm = model.memory().update(stm, ed);
      }
    }
  }
  if (count == 0) throw std::runtime_error("eval: no answer tokens");
  return total / static_cast<double>(count);
}

double baseline_answer_ce(BaselineModel& model, const std::vector<data::Dialogue>& dialogues) {
  if (dialogues.empty()) throw std::invalid_argument("eval: no dialogues");
  NoGrad ng;
  double total = 0.0;
  std::int64_t count = 0;
  for (const data::Dialogue& d : dialogues) {
    std::vector<int> history;
    for (const data::DialogueTurn& turn : d.turns) {
      std::vector<int> tk = data::turn_tokens(turn);
      std::vector<int> turn_targets = data::shifted_targets(tk, true);
      std::size_t offset = history.size();
      history.insert(history.end(), tk.begin(), tk.end());
      std::vector<int> targets(history.size(), -1);
      std::int64_t n = 0;
      for (std::size_t i = 0; i < turn_targets.size(); ++i) {
        if (turn_targets[i] >= 0) {
          targets[offset + i] = turn_targets[i];
          ++n;
        }
      }
      ModelOutput out = model.forward(history);
      total += ops::cross_entropy(out.logits, targets).at(0, 0) * static_cast<double>(n);
      count += n;
    }
  }
  if (count == 0) throw std::runtime_error("eval: no answer tokens");
  return total / static_cast<double>(count);
}

// ---- curriculum config ------------------------------------------------------

void CurriculumConfig::validate() const {
  model.validate();
  stage1.validate();
  stage2.validate();
  stage3.validate();
  stage4.validate();
  baseline.validate();
}

namespace {

void patch_hyper(const nlohmann::json& j, Adam::Hyper& h) {
  h.lr = j.value("lr", h.lr);
  h.beta1 = j.value("beta1", h.beta1);
  h.beta2 = j.value("beta2", h.beta2);
  h.eps = j.value("eps", h.eps);
  h.clip_norm = j.value("clip_norm", h.clip_norm);
}

void patch_joint(const nlohmann::json& j, JointTrainConfig& c) {
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.mask_prob = j.value("mask_prob", c.mask_prob);
  c.noise_std = j.value("noise_std", c.noise_std);
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("optim")) patch_hyper(j.at("optim"), c.optim);
}

void patch_stage3(const nlohmann::json& j, MemAttnPretrainConfig& c) {
  c.w_start = j.value("w_start", c.w_start);
  c.w_end = j.value("w_end", c.w_end);
  c.n_curriculum_steps = j.value("n_curriculum_steps", c.n_curriculum_steps);
  if (j.contains("schedule")) {
    std::string s = j.at("schedule").get<std::string>();
    if (s == "linear") {
      c.shape = ScheduleShape::Linear;
    } else if (s == "exponential") {
      c.shape = ScheduleShape::Exponential;
    } else {
      throw std::invalid_argument("training config: schedule must be 'linear' or 'exponential'");
    }
  }
  c.steps = j.value("steps", c.steps);
  if (j.contains("optim")) patch_hyper(j.at("optim"), c.optim);
}

void patch_stage4(const nlohmann::json& j, Stage4Config& c) {
  c.turns_start = j.value("turns_start", c.turns_start);
  c.turns_end = j.value("turns_end", c.turns_end);
  c.stm_noise_sigma = j.value("stm_noise_sigma", c.stm_noise_sigma);
  c.unfreeze_fraction = j.value("unfreeze_fraction", c.unfreeze_fraction);
  c.steps = j.value("steps", c.steps);
  if (j.contains("unfreeze_plan")) {
    c.unfreeze_plan.clear();
    for (const nlohmann::json& e : j.at("unfreeze_plan")) {
      c.unfreeze_plan.push_back(FreezeEntry{e.at("component").get<std::string>(),
                                            e.at("step").get<int>()});
    }
  }
  if (j.contains("optim")) patch_hyper(j.at("optim"), c.optim);
}

}  // namespace

CurriculumConfig CurriculumConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("training config: not valid JSON: ") + e.what());
  }
  CurriculumConfig c;
  if (j.contains("model")) c.model = ModelConfig::from_json_text(j.at("model").dump());
  if (j.contains("stage1")) patch_joint(j.at("stage1"), c.stage1);
  if (j.contains("stage2")) patch_joint(j.at("stage2"), c.stage2);
  if (j.contains("stage3")) patch_stage3(j.at("stage3"), c.stage3);
  if (j.contains("stage4")) patch_stage4(j.at("stage4"), c.stage4);
  if (j.contains("baseline")) patch_joint(j.at("baseline"), c.baseline);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

CurriculumConfig CurriculumConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open training config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

// ---- curriculum driver ------------------------------------------------------

namespace {

std::string fmt_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

class MetricsCsv {
 public:
  explicit MetricsCsv(const std::string& path) {
    bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    out_.open(path, std::ios::app);
    if (!out_) throw std::runtime_error("cannot open metrics file: " + path);
    if (fresh) out_ << "step,stage,L_AR,L_MLM,L_Mem,L_total,ppl\n";
  }
  void row(long step, const std::string& stage, double ar, double mlm, double mem, double total,
           double ppl) {
    out_ << step << ',' << stage << ',' << fmt_metric(ar) << ',' << fmt_metric(mlm) << ','
         << fmt_metric(mem) << ',' << fmt_metric(total) << ',' << fmt_metric(ppl) << '\n';
  }
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

class Cycle {
 public:
  explicit Cycle(std::vector<std::vector<int>> rows) : rows_(std::move(rows)) {}
  std::vector<std::vector<int>> next(int n) {
    std::vector<std::vector<int>> batch;
    for (int i = 0; i < n; ++i) batch.push_back(rows_[cursor_++ % rows_.size()]);
    return batch;
  }

 private:
  std::vector<std::vector<int>> rows_;
  std::size_t cursor_ = 0;
};

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// Disjoint rng streams per stage, so rerunning one stage draws the same
// randomness no matter what ran before it.
Rng stage_rng(std::uint64_t seed, int stage) {
  return Rng::restore(seed, static_cast<std::uint64_t>(stage) << 40);
}

void log_progress(std::ostream& log, const char* stage, int step, int steps, const std::string& tail) {
  int every = std::max(1, steps / 10);
  if (step % every == 0 || step + 1 == steps)
    log << "[stage " << stage << "] step " << (step + 1) << "/" << steps << " " << tail << "\n";
}

std::vector<std::vector<int>> plain_corpus(const std::vector<data::Dialogue>& train,
                                           std::int64_t cap) {
  std::vector<std::vector<int>> rows;
  for (const data::Dialogue& d : train) {
    for (const data::DialogueTurn& t : d.turns) {
      std::vector<int> tk = data::plain_tokens(t, static_cast<std::size_t>(cap));
      if (tk.size() >= 2) rows.push_back(std::move(tk));
    }
  }
  if (rows.empty()) throw std::runtime_error("curriculum: no usable pre-training rows");
  return rows;
}

std::vector<std::vector<int>> interaction_corpus(const std::vector<data::Dialogue>& train,
                                                 std::int64_t cap) {
  std::vector<std::vector<int>> rows;
  for (const data::Dialogue& d : train) {
    for (const data::DialogueTurn& t : d.turns) {
      std::vector<int> tk = data::turn_tokens(t);
      if (static_cast<std::int64_t>(tk.size()) <= cap) rows.push_back(std::move(tk));
    }
  }
  if (rows.empty())
    throw std::runtime_error("curriculum: no interaction fits max_interaction_len");
  return rows;
}

void need_checkpoint(const std::string& path, const char* stage, const char* prereq) {
  if (!fs::exists(path))
    throw std::runtime_error(std::string("curriculum: stage ") + stage + " needs the stage " +
                             prereq + " checkpoint (" + path + "); run stage " + prereq +
                             " first");
}

void run_stage1(const CurriculumConfig& cfg, const std::vector<data::Dialogue>& train,
                const std::string& out_dir, MetricsCsv& csv, std::ostream& log) {
  ReactiveModel model(cfg.model);
  Adam opt(model.parameters(), cfg.stage1.optim);
  Rng rng = stage_rng(cfg.seed, 1);
  Cycle rows(plain_corpus(train, cfg.model.max_interaction_len));
  for (int step = 0; step < cfg.stage1.steps; ++step) {
    JointLosses l = stage1_joint_step(model, opt, rows.next(cfg.stage1.batch_size), cfg.stage1, rng);
    csv.row(step, "1", l.l_ar, l.l_mlm, kNan, l.l_joint, std::exp(l.l_ar));
    log_progress(log, "1", step, cfg.stage1.steps,
                 "L_AR=" + fmt_metric(l.l_ar) + " L_MLM=" + fmt_metric(l.l_mlm));
  }
  csv.flush();
  model.save(out_dir + "/stage1.ckpt");
  log << "[stage 1] saved " << out_dir << "/stage1.ckpt\n";
}

void run_stage2(const CurriculumConfig& cfg, const std::vector<data::Dialogue>& train,
                const std::string& out_dir, MetricsCsv& csv, std::ostream& log) {
  need_checkpoint(out_dir + "/stage1.ckpt", "2", "1");
  ReactiveModel model = ReactiveModel::load(out_dir + "/stage1.ckpt");
  Adam opt(model.parameters(), cfg.stage2.optim);
  Rng rng = stage_rng(cfg.seed, 2);
  Cycle rows(interaction_corpus(train, cfg.model.max_interaction_len));
  for (int step = 0; step < cfg.stage2.steps; ++step) {
    JointLosses l = stage2_sft_step(model, opt, rows.next(cfg.stage2.batch_size), cfg.stage2, rng);
    csv.row(step, "2", l.l_ar, l.l_mlm, kNan, l.l_joint, std::exp(l.l_ar));
    log_progress(log, "2", step, cfg.stage2.steps,
                 "L_AR=" + fmt_metric(l.l_ar) + " L_MLM=" + fmt_metric(l.l_mlm));
  }
  csv.flush();
  model.save(out_dir + "/stage2.ckpt");
  log << "[stage 2] saved " << out_dir << "/stage2.ckpt\n";
}

void run_stage3(const CurriculumConfig& cfg, const std::vector<data::Dialogue>& train,
                const std::vector<data::Dialogue>& val, const std::string& out_dir,
                MetricsCsv& csv, std::ostream& log) {
  need_checkpoint(out_dir + "/stage2.ckpt", "3", "2");
  ReactiveModel model = ReactiveModel::load(out_dir + "/stage2.ckpt");
  ParamList attn_params;
  for (auto& [name, t] : model.parameters()) {
    if (name.rfind("memory.attn", 0) == 0) attn_params.emplace_back(name, t);
  }
  Adam opt(attn_params, cfg.stage3.optim);
  int done = 0, skipped = 0;
  std::ostringstream warnings;
  while (done < cfg.stage3.steps) {
    for (const data::Dialogue& d : train) {
      ShortTermMemory stm = model.memory().initial_state();
      for (std::size_t ti = 0; ti < d.turns.size() && done < cfg.stage3.steps; ++ti) {
        double w = w_schedule(static_cast<int>(ti) + 1, cfg.stage3);
        Stage3Result r = stage3_memattn_step(model, opt, stm, data::turn_tokens(d.turns[ti]), w,
                                             &warnings);
        stm = r.stm_next;
        skipped += r.skipped_slots;
        csv.row(done, "3", kNan, kNan, r.l_mem, r.l_mem, kNan);
        log_progress(log, "3", done, cfg.stage3.steps, "L_Mem=" + fmt_metric(r.l_mem));
        ++done;
      }
      if (done >= cfg.stage3.steps) break;
    }
  }
  if (skipped > 0) log << "[stage 3] skipped " << skipped << " zero-norm slots\n";
  if (!val.empty())
    log << "[stage 3] held-out cosine " << fmt_metric(stage3_eval_cosine(model, val, cfg.stage3))
        << "\n";
  csv.flush();
  model.save(out_dir + "/stage3.ckpt");
  log << "[stage 3] saved " << out_dir << "/stage3.ckpt\n";
}

int stage4_sched_turns(const Stage4Config& c, int step) {
  if (c.steps <= 1) return c.turns_start;
  double f = static_cast<double>(step) / static_cast<double>(c.steps - 1);
  auto n = static_cast<int>(std::lround(c.turns_start + f * (c.turns_end - c.turns_start)));
  return std::clamp(n, c.turns_start, c.turns_end);
}

void run_stage4(const CurriculumConfig& cfg, const std::vector<data::Dialogue>& train,
                const std::vector<data::Dialogue>& val, const std::string& out_dir,
                MetricsCsv& csv, std::ostream& log) {
  need_checkpoint(out_dir + "/stage3.ckpt", "4", "3");
  for (const data::Dialogue& d : train) {
    if (d.turns.size() < 2)
      throw std::runtime_error("curriculum: stage 4 needs dialogues of at least 2 turns; dialogue " +
                               std::to_string(d.id) + " has " + std::to_string(d.turns.size()));
  }
  ReactiveModel model = ReactiveModel::load(out_dir + "/stage3.ckpt");
  Adam opt(model.parameters(), cfg.stage4.optim);
  std::vector<FreezeEntry> plan = cfg.stage4.effective_plan();
  Rng rng = stage_rng(cfg.seed, 4);
  std::size_t cursor = 0;
  for (int step = 0; step < cfg.stage4.steps; ++step) {
    apply_freeze_plan(opt, plan, step);
    const data::Dialogue& d = train[cursor++ % train.size()];
    int want = stage4_sched_turns(cfg.stage4, step);
    std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(want), d.turns.size());
    std::vector<std::vector<int>> turns;
    for (std::size_t i = 0; i < m; ++i) turns.push_back(data::turn_tokens(d.turns[i]));
    Stage4Losses l = stage4_memory_aware_step(model, opt, turns, cfg.stage4.stm_noise_sigma, rng);
    csv.row(step, "4", l.l_ar_mean, kNan, kNan, l.l_total, std::exp(l.l_ar_mean));
    log_progress(log, "4", step, cfg.stage4.steps,
                 "turns=" + std::to_string(m) + " L_total=" + fmt_metric(l.l_total));
  }
  if (!val.empty())
    log << "[stage 4] held-out answer CE " << fmt_metric(eval_answer_ce(model, val)) << "\n";
  csv.flush();
  model.save(out_dir + "/stage4.ckpt");
  log << "[stage 4] saved " << out_dir << "/stage4.ckpt\n";
}

void run_baseline(const CurriculumConfig& cfg, const std::vector<data::Dialogue>& train,
                  const std::vector<data::Dialogue>& val, const std::string& out_dir,
                  MetricsCsv& csv, std::ostream& log) {
  BaselineModel model(cfg.model);
  Adam opt(model.parameters(), cfg.baseline.optim);
  std::vector<std::vector<int>> rows;
  for (const data::Dialogue& d : train) {
    std::vector<int> h = data::flatten_dialogue(d, d.turns.size());
    if (static_cast<std::int64_t>(h.size()) > cfg.model.baseline_context_limit)
      h.resize(static_cast<std::size_t>(cfg.model.baseline_context_limit));
    if (h.size() >= 2) rows.push_back(std::move(h));
  }
  if (rows.empty()) throw std::runtime_error("curriculum: no usable baseline histories");
  Cycle cycle(std::move(rows));
  for (int step = 0; step < cfg.baseline.steps; ++step) {
    double ce = baseline_train_step(model, opt, cycle.next(cfg.baseline.batch_size));
    csv.row(step, "baseline", ce, kNan, kNan, ce, std::exp(ce));
    log_progress(log, "baseline", step, cfg.baseline.steps, "L_AR=" + fmt_metric(ce));
  }
  if (!val.empty())
    log << "[baseline] held-out answer CE " << fmt_metric(baseline_answer_ce(model, val)) << "\n";
  csv.flush();
  model.save(out_dir + "/baseline.ckpt");
  log << "[baseline] saved " << out_dir << "/baseline.ckpt\n";
}

}  // namespace

void run_curriculum(const CurriculumConfig& cfg, const std::string& data_dir,
                    const std::string& out_dir, const std::string& stage, std::ostream& log) {
  cfg.validate();
  std::vector<std::string> order;
  if (stage == "all") {
    order = {"1", "2", "3", "4"};
  } else if (stage == "1" || stage == "2" || stage == "3" || stage == "4" || stage == "baseline") {
    order = {stage};
  } else {
    throw std::invalid_argument("curriculum: unknown stage '" + stage +
                                "' (expected 1, 2, 3, 4, baseline, or all)");
  }

  std::vector<data::Dialogue> train = data::load_dialogues(data_dir + "/train.jsonl");
  if (train.empty()) throw std::runtime_error("curriculum: train.jsonl holds no dialogues");
  std::vector<data::Dialogue> val;
  if (fs::exists(data_dir + "/val.jsonl")) val = data::load_dialogues(data_dir + "/val.jsonl");

  fs::create_directories(out_dir);
  MetricsCsv csv(out_dir + "/metrics.csv");
  for (const std::string& s : order) {
    if (s == "1") run_stage1(cfg, train, out_dir, csv, log);
    if (s == "2") run_stage2(cfg, train, out_dir, csv, log);
    if (s == "3") run_stage3(cfg, train, val, out_dir, csv, log);
    if (s == "4") run_stage4(cfg, train, val, out_dir, csv, log);
    if (s == "baseline") run_baseline(cfg, train, val, out_dir, csv, log);
  }
}

}  // namespace eventlm
