#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cloze/checkpoint.hpp"
#include "cloze/config.hpp"
#include "cloze/cor_model.hpp"
#include "cloze/data.hpp"
#include "cloze/metrics.hpp"
#include "cloze/seq2seq.hpp"

namespace cloze {

/// D^-0.5 * min(step^-0.5, step * warmup^-1.5).
double lr_schedule(std::uint64_t step, std::size_t model_dim, std::size_t warmup);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
};

/// One bias-corrected Adam update of `params` in place. `step` counts from 1.
/// Non-finite gradients raise NumericError before anything is modified.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               std::span<Tensor* const> m, std::span<Tensor* const> v, std::uint64_t step,
               double rate, const AdamConfig& cfg = {});

class Adam {
 public:
  explicit Adam(std::vector<Parameter*> params, AdamConfig cfg = {});

  /// Applies the accumulated parameter gradients with learning rate `rate`.
  void step(double rate);
  std::uint64_t steps() const { return step_; }

  void save_moments(Checkpoint& ckpt) const;
  void load_moments(const Checkpoint& ckpt);

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
};

enum class StudentMode { baseline, label_smoothing, lst };
StudentMode parse_student_mode(const std::string& text);
const char* student_mode_name(StudentMode m);

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 4;
  std::size_t warmup_steps = 400;
  double lr_scale = 1.0;
  double lambda = 0.9;
  double temperature = 5.0;
  double smoothing = 0.1;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 1;  // epochs
  std::size_t average_last_k = 3;
  double augment_tokens = 0.15;
  double augment_sequences = 0.20;
  double max_grad_norm = 0.0;  // 0 disables clipping
  std::size_t log_every = 10;  // steps between train records
  std::size_t max_steps = 0;   // 0: run every epoch in full
  std::size_t val_cer_limit = 0;     // utterances decoded per validation, 0 = all
  std::size_t val_beam_width = 1;    // during training; the final pass uses the model's width
  Precision precision = Precision::double_;
  std::string out_dir;     // per-epoch checkpoints land here when set
  std::string vocabulary;  // serialized, stored in every checkpoint

  void validate() const;
  /// Reads known keys, leaving the rest unread.
  static TrainConfig from(const KeyValues& kv, const TrainConfig& base);
  std::string describe() const;
};

/// Loss became non-finite; `last_good` holds the newest finite parameters.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, Checkpoint last_good)
      : NumericError(what), last_good(std::move(last_good)) {}
  Checkpoint last_good;
};

struct TrainSummary {
  std::vector<Checkpoint> epoch_checkpoints;
  Checkpoint averaged;  // also loaded into the model
  MetricRecord final_metrics;
};

/// Trains on position-wise cross-entropy over x_2..x_T; validates cloze
/// accuracy per epoch; ends with the last-k average loaded.
TrainSummary train_cor(CorModel& model, const Corpus& train, const Corpus& val,
                       const TrainConfig& cfg, MetricsSink& sink);

/// Teacher rows per target position, index-audited against the student targets.
struct TeacherBatch {
  Tensor probs;
  std::vector<TokenId> targets;
};
TeacherBatch teacher_rows(const CorModel& teacher, std::span<const Sequence* const> transcripts,
                          double temperature, Precision precision);

/// Trains the seq2seq student. `teacher` is required exactly in lst mode and
/// must share `vocab`.
TrainSummary train_student(S2SModel& model, const Vocabulary& vocab,
                           std::span<const Utterance> train, std::span<const Utterance> val,
                           StudentMode mode, const CorModel* teacher,
                           const Vocabulary* teacher_vocab, const TrainConfig& cfg,
                           MetricsSink& sink);

/// Mean per-token CE of teacher-forced student predictions.
double student_cross_entropy(const S2SModel& model, std::span<const Utterance> set,
                             Precision precision = Precision::double_);
/// Corpus CER of beam decoding: total edits over total reference length.
double student_cer(const S2SModel& model, std::span<const Utterance> set, std::size_t beam_width,
                   Precision precision = Precision::double_);
/// Mean per-token CE of COR predictions.
double cor_cross_entropy(const CorModel& model, std::span<const Sequence> corpus,
                         Precision precision = Precision::double_);

}  // namespace cloze
