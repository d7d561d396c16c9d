#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "eventlm/data.hpp"
#include "eventlm/model.hpp"

namespace eventlm {

// Adam with optional global-norm gradient clipping. Parameters whose gradient
// buffer is empty after backward are skipped entirely (no moment decay), so an
// untouched branch of the model never drifts. Frozen parameters are skipped
// the same way and keep their moments.
class Adam {
 public:
  struct Hyper {
    double lr = 5e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // 0 disables clipping
  };

  Adam(ParamList params, Hyper h);

  void zero_grad();
  void step();
  // freezes every parameter whose name starts with prefix
  void set_frozen(const std::string& prefix, bool frozen);
  bool is_frozen(const std::string& name) const;
  std::int64_t step_count() const { return t_; }
  const Hyper& hyper() const { return h_; }

 private:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m, v;
    bool frozen = false;
  };
  std::vector<Slot> slots_;
  Hyper h_;
  std::int64_t t_ = 0;
};

// ---- stage 1 / 2: joint pre-training ----------------------------------------

struct JointTrainConfig {
  double alpha = 1.0;  // autoregressive weight
  double beta = 1.0;   // masked-prediction weight
  double mask_prob = 0.15;
  double noise_std = 0.02;  // stddev of the noise added to the detached memory input
  int steps = 200;
  int batch_size = 8;
  Adam::Hyper optim;
  void validate() const;  // alpha,beta >= 0, alpha+beta > 0, 0 < mask_prob < 1
};

struct MaskResult {
  std::vector<int> tokens;
  std::vector<std::int64_t> positions;  // ascending
};

// Masks each non-special position independently with probability mask_prob and
// guarantees at least one mask (resampling, then forcing a single uniform pick
// if the sequence refuses). Errors on empty or all-special input.
MaskResult mask_tokens(const std::vector<int>& seq, double mask_prob, Rng& rng);

struct JointLosses {
  double l_ar = 0.0;
  double l_mlm = 0.0;
  double l_joint = 0.0;  // alpha * l_ar + beta * l_mlm
  double aux = 0.0;
};

// One optimizer step of the two-headed objective. Per sequence, in this rng
// order: mask_tokens, then (only when noise_std > 0) one randn per encoder
// layer. The encoder sees the masked sequence; the decoder sees the clean
// sequence teacher-forced, cross-attending over the detached noised encoding.
JointLosses stage1_joint_step(ReactiveModel& model, Adam& opt,
                              const std::vector<std::vector<int>>& batch,
                              const JointTrainConfig& cfg, Rng& rng);

// Same mechanics on templated interactions; rejects rows that do not follow
// the [Query] ... [Answer] ... [EOS] layout.
JointLosses stage2_sft_step(ReactiveModel& model, Adam& opt,
                            const std::vector<std::vector<int>>& batch,
                            const JointTrainConfig& cfg, Rng& rng);

// ---- stage 3: memory-attention pre-training ---------------------------------

enum class ScheduleShape { Linear, Exponential };

struct MemAttnPretrainConfig {
  double w_start = 0.9;
  double w_end = 0.1;
  int n_curriculum_steps = 6;
  ScheduleShape shape = ScheduleShape::Linear;
  int steps = 300;
  Adam::Hyper optim;
  void validate() const;  // 0 < w_end <= w_start <= 1, n >= 1
};

// Interpolation weight for curriculum step t (1-based); clamps to w_end past
// n_curriculum_steps.
double w_schedule(int t, const MemAttnPretrainConfig& cfg);

// Mean-pools T rows into s_mem contiguous buckets of width ceil(T/s_mem); the
// tail is zero-padded, so trailing buckets with no rows come out all-zero.
Tensor pool_to_slots(const Tensor& rows, std::int64_t s_mem);

struct Stage3Result {
  double l_mem = 0.0;  // -mean slotwise cosine against the interpolated target
  int skipped_slots = 0;
  ShortTermMemory stm_next;  // detached, ready to stream into the next step
};

// One optimizer step pushing update(stm_prev, encode(interaction)) toward
// (1 - w_t) * stm_prev + w_t * pooled encoding. The encoder runs without
// gradients; only the memory-attention parameters receive any. Slots where
// either side has zero norm are skipped (counted, and noted on warnings).
Stage3Result stage3_memattn_step(ReactiveModel& model, Adam& opt,
                                 const ShortTermMemory& stm_prev,
                                 const std::vector<int>& interaction_tokens,
                                 double w_t, std::ostream* warnings = nullptr);

// Mean slotwise cosine between updates and targets over held-out dialogues,
// streaming each dialogue from the initial state with the same schedule.
double stage3_eval_cosine(ReactiveModel& model,
                          const std::vector<data::Dialogue>& dialogues,
                          const MemAttnPretrainConfig& cfg);

// ---- stage 4: end-to-end memory-aware training ------------------------------

struct FreezeEntry {
  std::string component;  // parameter-name prefix
  int unfreeze_step = 0;
};

struct Stage4Config {
  int turns_start = 2;
  int turns_end = 8;
  double stm_noise_sigma = 0.02;
  // empty plan means: freeze encoder and memory.attn until unfreeze_fraction
  std::vector<FreezeEntry> unfreeze_plan;
  double unfreeze_fraction = 0.30;
  int steps = 200;
  Adam::Hyper optim;
  void validate() const;  // 2 <= turns_start <= turns_end, plan steps non-decreasing
  std::vector<FreezeEntry> effective_plan() const;
};

// Freezes each plan component iff step < its unfreeze step.
void apply_freeze_plan(Adam& opt, const std::vector<FreezeEntry>& plan, int step);

struct Stage4Losses {
  double l_total = 0.0;  // sum of per-turn cross-entropies, fully unrolled
  double l_ar_mean = 0.0;
  std::vector<double> per_turn;
};

// One optimizer step over a dialogue prefix: start from the noised initial
// state, decode each turn against the current state, then encode the full
// turn and run the memory update with nothing detached, so later turns push
// gradients through every earlier update. Accepts a single turn (the loss
// then degenerates to plain teacher forcing).
Stage4Losses stage4_memory_aware_step(ReactiveModel& model, Adam& opt,
                                      const std::vector<std::vector<int>>& turns,
                                      double stm_noise_sigma, Rng& rng);

// Plain next-token training for the stateless reference model on flattened
// dialogue histories.
double baseline_train_step(BaselineModel& model, Adam& opt,
                           const std::vector<std::vector<int>>& histories);

// ---- evaluation --------------------------------------------------------------

// Mean cross-entropy per answer token, teacher-forcing each turn against the
// streamed memory state (no gradients).
double eval_answer_ce(ReactiveModel& model, const std::vector<data::Dialogue>& dialogues);
// Same metric for the stateless model conditioned on the full flattened history.
double baseline_answer_ce(BaselineModel& model, const std::vector<data::Dialogue>& dialogues);

// ---- curriculum driver -------------------------------------------------------

struct CurriculumConfig {
  ModelConfig model;
  JointTrainConfig stage1;
  JointTrainConfig stage2;
  MemAttnPretrainConfig stage3;
  Stage4Config stage4;
  JointTrainConfig baseline;  // alpha/beta/mask knobs unused, steps and optim apply
  std::uint64_t seed = 1234;

  void validate() const;
  static CurriculumConfig from_json_text(const std::string& text);
  static CurriculumConfig load_file(const std::string& path);
};

// Runs the requested stage ("1".."4", "baseline", or "all") over data_dir
// (train.jsonl / val.jsonl), resuming from the previous stage's checkpoint in
// out_dir and appending to out_dir/metrics.csv with columns
// step,stage,L_AR,L_MLM,L_Mem,L_total,ppl. A missing prerequisite checkpoint
// is an error that names the stage to run first.
void run_curriculum(const CurriculumConfig& cfg, const std::string& data_dir,
                    const std::string& out_dir, const std::string& stage,
                    std::ostream& log);

}  // namespace eventlm
