#include "cloze/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>

#include "cloze/losses.hpp"

namespace cloze {

double lr_schedule(std::uint64_t step, std::size_t model_dim, std::size_t warmup) {
  if (step == 0) throw ContractError("lr_schedule: step counts from 1");
  if (warmup == 0 || model_dim == 0) throw ContractError("lr_schedule: warmup and D must be >= 1");
  const double s = static_cast<double>(step), w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(model_dim), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               std::span<Tensor* const> m, std::span<Tensor* const> v, std::uint64_t step,
               double rate, const AdamConfig& cfg) {
  if (step == 0) throw ContractError("adam: step counts from 1");
  const std::size_t n = params.size();
  if (grads.size() != n || m.size() != n || v.size() != n)
    throw ContractError("adam: parameter, gradient and moment lists differ in length");
  for (std::size_t i = 0; i < n; ++i) {
    if (grads[i]->shape != params[i]->shape || m[i]->shape != params[i]->shape ||
        v[i]->shape != params[i]->shape)
      throw ContractError("adam: shape mismatch for parameter " + std::to_string(i));
    if (!grads[i]->all_finite())
      throw NumericError("adam: non-finite gradient in parameter " + std::to_string(i) +
                         "; step skipped");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = params[i]->values;
    const auto& g = grads[i]->values;
    auto& mm = m[i]->values;
    auto& vv = v[i]->values;
    for (std::size_t k = 0; k < p.size(); ++k) {
      mm[k] = cfg.beta1 * mm[k] + (1.0 - cfg.beta1) * g[k];
      vv[k] = cfg.beta2 * vv[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double mhat = mm[k] / c1, vhat = vv[k] / c2;
      p[k] -= rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape);
    v_.emplace_back(p->value.shape);
  }
}

void Adam::step(double rate) {
  std::vector<Tensor*> ps, ms, vs;
  std::vector<const Tensor*> gs;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ps.push_back(&params_[i]->value);
    gs.push_back(&params_[i]->grad);
    ms.push_back(&m_[i]);
    vs.push_back(&v_[i]);
  }
  adam_step(ps, gs, ms, vs, step_ + 1, rate, cfg_);
  ++step_;
}

void Adam::save_moments(Checkpoint& ckpt) const {
  ckpt.moments.clear();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ckpt.moments.push_back({"m." + params_[i]->name, ArrayTag::f64, m_[i], {}});
    ckpt.moments.push_back({"v." + params_[i]->name, ArrayTag::f64, v_[i], {}});
  }
  ckpt.step = step_;
}

void Adam::load_moments(const Checkpoint& ckpt) {
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& a : ckpt.moments)
      if (a.name == name) return a.value;
    throw ContractError("checkpoint lacks optimizer moment " + name);
  };
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i] = find("m." + params_[i]->name);
    v_[i] = find("v." + params_[i]->name);
    if (m_[i].shape != params_[i]->value.shape || v_[i].shape != params_[i]->value.shape)
      throw ContractError("optimizer moment shape mismatch for " + params_[i]->name);
  }
  step_ = ckpt.step;
}

StudentMode parse_student_mode(const std::string& text) {
  if (text == "baseline") return StudentMode::baseline;
  if (text == "label_smoothing" || text == "ls") return StudentMode::label_smoothing;
  if (text == "lst") return StudentMode::lst;
  throw ContractError("mode must be baseline, label_smoothing or lst, got '" + text + "'");
}

const char* student_mode_name(StudentMode m) {
  switch (m) {
    case StudentMode::baseline: return "baseline";
    case StudentMode::label_smoothing: return "label_smoothing";
    case StudentMode::lst: return "lst";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ContractError("train: batch_size must be >= 1");
  if (epochs < 1) throw ContractError("train: epochs must be >= 1");
  if (warmup_steps < 1) throw ContractError("train: warmup_steps must be >= 1");
  if (!(lr_scale > 0.0)) throw ContractError("train: lr_scale must be > 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("train: lambda must lie in [0,1]");
  if (!(temperature >= 1.0)) throw ContractError("train: temperature must be >= 1");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ContractError("train: smoothing in [0,1)");
  if (checkpoint_every < 1 || average_last_k < 1)
    throw ContractError("train: checkpoint_every and average_last_k must be >= 1");
  if (!(augment_tokens >= 0.0 && augment_tokens <= 1.0 && augment_sequences >= 0.0 &&
        augment_sequences <= 1.0))
    throw ContractError("train: augmentation fractions must lie in [0,1]");
  if (max_grad_norm < 0.0) throw ContractError("train: max_grad_norm must be >= 0");
  if (log_every < 1 || val_beam_width < 1)
    throw ContractError("train: log_every and val_beam_width must be >= 1");
}

TrainConfig TrainConfig::from(const KeyValues& kv, const TrainConfig& base) {
  TrainConfig c = base;
  c.batch_size = kv.get_size("batch_size", c.batch_size);
  c.epochs = kv.get_size("epochs", c.epochs);
  c.warmup_steps = kv.get_size("warmup_steps", c.warmup_steps);
  c.lr_scale = kv.get_double("lr_scale", c.lr_scale);
  c.lambda = kv.get_double("lambda", c.lambda);
  c.temperature = kv.get_double("temperature", c.temperature);
  c.smoothing = kv.get_double("smoothing", c.smoothing);
  c.checkpoint_every = kv.get_size("checkpoint_every", c.checkpoint_every);
  c.average_last_k = kv.get_size("average_last_k", c.average_last_k);
  c.augment_tokens = kv.get_double("augment_tokens", c.augment_tokens);
  c.augment_sequences = kv.get_double("augment_sequences", c.augment_sequences);
  c.max_grad_norm = kv.get_double("max_grad_norm", c.max_grad_norm);
  c.log_every = kv.get_size("log_every", c.log_every);
  c.max_steps = kv.get_size("max_steps", c.max_steps);
  c.val_cer_limit = kv.get_size("val_cer_limit", c.val_cer_limit);
  c.val_beam_width = kv.get_size("val_beam_width", c.val_beam_width);
  if (kv.has("precision")) c.precision = parse_precision(kv.get_string("precision", ""));
  c.validate();
  return c;
}

std::string TrainConfig::describe() const {
  std::ostringstream os;
  os.precision(17);
  os << "batch_size=" << batch_size << "\nepochs=" << epochs << "\nwarmup_steps=" << warmup_steps
     << "\nlr_scale=" << lr_scale << "\nlambda=" << lambda << "\ntemperature=" << temperature
     << "\nsmoothing=" << smoothing << "\nseed=" << seed << "\ncheckpoint_every=" << checkpoint_every
     << "\naverage_last_k=" << average_last_k << "\naugment_tokens=" << augment_tokens
     << "\naugment_sequences=" << augment_sequences << "\nmax_grad_norm=" << max_grad_norm
     << "\nlog_every=" << log_every << "\nmax_steps=" << max_steps
     << "\nval_cer_limit=" << val_cer_limit << "\nval_beam_width=" << val_beam_width
     << "\nprecision=" << precision_name(precision) << "\n";
  return os.str();
}

namespace {

Rng stream(std::uint64_t seed, std::uint32_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), salt};
  return Rng(seq);
}

enum Stream : std::uint32_t { kOrder = 11, kAugment = 12, kDropout = 13 };

void clip_gradients(ParameterStore& store, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const Parameter* p : std::as_const(store).all())
    for (double g : p->grad.values) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return;
  const double s = max_norm / norm;
  for (Parameter* p : store.all())
    for (double& g : p->grad.values) g *= s;
}

/// Mean of -log softmax(z)[target] over rows.
double hard_cross_entropy(const Tensor& logits, std::span<const TokenId> targets) {
  const std::size_t k = logits.cols();
  std::vector<double> p(k);
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const auto row = logits.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double z : row) s += std::exp(z - m);
    total += m + std::log(s) - row[targets[r]];
  }
  return total / static_cast<double>(targets.size());
}

/// Shared epoch/step/checkpoint loop. `step_fn` runs one forward/backward on
/// the given example indices and returns {training loss, plain CE}.
struct LoopHooks {
  std::function<std::pair<double, double>(std::span<const std::size_t>, Rng& augment,
                                          Rng& dropout)>
      step;
  std::function<MetricRecord()> validate;  // fills the metric fields only
  std::function<MetricRecord()> final_eval;
};

TrainSummary run_loop(ParameterStore& store, const std::string& fingerprint, std::size_t model_dim,
                      std::size_t n_train, const TrainConfig& cfg, MetricsSink& sink,
                      const LoopHooks& hooks) {
  cfg.validate();
  if (n_train == 0) throw ContractError("train: empty training set");
  Rng order = stream(cfg.seed, kOrder), augment = stream(cfg.seed, kAugment),
      drop = stream(cfg.seed, kDropout);
  Adam adam(store.all());
  TrainSummary summary;
  Checkpoint last_good = capture(store, fingerprint);
  last_good.vocabulary = cfg.vocabulary;

  std::vector<std::size_t> idx(n_train);
  std::iota(idx.begin(), idx.end(), 0);
  std::uint64_t step = 0;
  double lr = 0.0;
  bool stop = false;
  for (std::size_t epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), order);
    for (std::size_t b = 0; b < n_train && !stop; b += cfg.batch_size) {
      const std::size_t e = std::min(n_train, b + cfg.batch_size);
      store.zero_grad();
      std::pair<double, double> result;
      try {
        result = hooks.step(std::span(idx).subspan(b, e - b), augment, drop);
      } catch (const NumericError& err) {
        throw TrainingDiverged(err.what(), last_good);
      }
      const auto [loss, ce] = result;
      ++step;
      if (!std::isfinite(loss))
        throw TrainingDiverged("training loss became non-finite at step " + std::to_string(step),
                               last_good);
      clip_gradients(store, cfg.max_grad_norm);
      lr = cfg.lr_scale * lr_schedule(step, model_dim, cfg.warmup_steps);
      try {
        adam.step(lr);
      } catch (const NumericError& err) {
        throw TrainingDiverged(err.what(), last_good);
      }
      if (step % cfg.log_every == 0)
        sink.emit(MetricRecord{step, epoch, "train", lr, ce, loss, std::nullopt, std::nullopt});
      if (cfg.max_steps && step >= cfg.max_steps) stop = true;
    }

    const bool last = stop || epoch == cfg.epochs;
    if (epoch % cfg.checkpoint_every != 0 && !last) continue;
    MetricRecord v = hooks.validate();
    v.step = step;
    v.epoch = epoch;
    v.split = "val";
    v.lr = lr;
    sink.emit(v);
    if (!std::isfinite(v.loss_ce))
      throw TrainingDiverged("validation loss became non-finite", last_good);

    Checkpoint ck = capture(store, fingerprint);
    ck.vocabulary = cfg.vocabulary;
    adam.save_moments(ck);
    if (!cfg.out_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch-%03zu.corf", epoch);
      ck.save((std::filesystem::path(cfg.out_dir) / name).string());
    }
    last_good = ck;
    summary.epoch_checkpoints.push_back(std::move(ck));
  }

  const auto& cks = summary.epoch_checkpoints;
  const std::size_t k = std::min(cfg.average_last_k, cks.size());
  summary.averaged =
      average_checkpoints(std::vector<Checkpoint>(cks.end() - static_cast<std::ptrdiff_t>(k), cks.end()));
  summary.averaged.vocabulary = cfg.vocabulary;
  restore(store, summary.averaged, fingerprint);

  MetricRecord f = hooks.final_eval();
  f.step = step;
  f.epoch = cks.empty() ? 0 : cfg.epochs;
  f.split = "final";
  f.lr = lr;
  sink.emit(f);
  summary.final_metrics = f;
  return summary;
}

std::vector<const Sequence*> pick(const std::vector<Sequence>& all, std::span<const std::size_t> idx) {
  std::vector<const Sequence*> out;
  for (auto i : idx) out.push_back(&all[i]);
  return out;
}

/// Inputs x_1..x_{T-1} of each sequence, with replacement augmentation.
PackedBatch augmented_inputs(std::span<const Sequence* const> seqs, std::size_t vocab_size,
                             const TrainConfig& cfg, Rng& rng) {
  std::vector<Sequence> inputs;
  for (const Sequence* s : seqs) inputs.emplace_back(s->begin(), s->end() - 1);
  inputs = augment_replace(inputs, vocab_size, cfg.augment_tokens, cfg.augment_sequences, rng);
  PackedBatch b;
  for (const auto& s : inputs) b.append(s);
  return b;
}

}  // namespace

double cor_cross_entropy(const CorModel& model, std::span<const Sequence> corpus,
                         Precision precision) {
  if (corpus.empty()) throw ContractError("cor_cross_entropy: empty corpus");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < corpus.size(); b += 64) {
    const auto batch = make_cloze_batch(corpus.subspan(b, std::min<std::size_t>(64, corpus.size() - b)));
    Graph g(ComputeConfig{precision, false, 0});
    const Tensor& logits = g.value(model.forward(g, batch.inputs));
    total += hard_cross_entropy(logits, batch.targets) * static_cast<double>(batch.targets.size());
    count += batch.targets.size();
  }
  return total / static_cast<double>(count);
}

TrainSummary train_cor(CorModel& model, const Corpus& train, const Corpus& val,
                       const TrainConfig& cfg, MetricsSink& sink) {
  const std::size_t k = model.config().vocab_size;
  train.validate(k);
  val.validate(k);
  if (val.sequences.empty()) throw ContractError("train_cor: empty validation corpus");

  LoopHooks hooks;
  hooks.step = [&](std::span<const std::size_t> idx, Rng& augment, Rng& drop) {
    const auto seqs = pick(train.sequences, idx);
    const ClozeBatch clean = make_cloze_batch(seqs);
    const PackedBatch inputs = augmented_inputs(seqs, k, cfg, augment);
    Graph g(ComputeConfig{cfg.precision, false, cfg.seed});
    Var logits = model.forward(g, inputs, ForwardContext{model.config().dropout_rate, &drop});
    const SoftTarget targets = hard_targets(clean.targets, k);
    const std::vector<double> w(clean.targets.size(), 1.0 / static_cast<double>(clean.targets.size()));
    Var loss = soft_cross_entropy(g, logits, targets.rows, w);
    const double value = g.value(loss).values[0];
    if (std::isfinite(value)) g.backward(loss);
    return std::make_pair(value, value);
  };
  auto evaluate = [&]() {
    MetricRecord r;
    r.loss_ce = cor_cross_entropy(model, val.sequences, cfg.precision);
    r.loss_lst = r.loss_ce;
    r.cloze_acc = cloze_accuracy(model, val.sequences, parity_class, cfg.precision).accuracy;
    return r;
  };
  hooks.validate = evaluate;
  hooks.final_eval = evaluate;
  return run_loop(model.parameters(), model.config().fingerprint(), model.config().model_dim,
                  train.sequences.size(), cfg, sink, hooks);
}

TeacherBatch teacher_rows(const CorModel& teacher, std::span<const Sequence* const> transcripts,
                          double temperature, Precision precision) {
  const ClozeBatch batch = make_cloze_batch(transcripts);
  TeacherBatch out;
  out.probs = teacher_probabilities(teacher, batch.inputs, temperature, precision);
  out.targets = batch.targets;
  if (out.probs.rows() != out.targets.size())
    throw ContractError("teacher alignment: " + std::to_string(out.probs.rows()) + " rows for " +
                        std::to_string(out.targets.size()) + " targets");
  return out;
}

double student_cross_entropy(const S2SModel& model, std::span<const Utterance> set,
                             Precision precision) {
  if (set.empty()) throw ContractError("student_cross_entropy: empty set");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < set.size(); b += 32) {
    const std::size_t e = std::min(set.size(), b + 32);
    std::vector<const AcousticFeatures*> feats;
    PackedBatch prefixes;
    std::vector<TokenId> targets;
    for (std::size_t i = b; i < e; ++i) {
      const Sequence& t = set[i].transcript;
      feats.push_back(&set[i].features);
      prefixes.append(std::span<const TokenId>(t.data(), t.size() - 1));
      targets.insert(targets.end(), t.begin() + 1, t.end());
    }
    Graph g(ComputeConfig{precision, false, 0});
    const Tensor& logits = g.value(model.forward(g, feats, prefixes));
    total += hard_cross_entropy(logits, targets) * static_cast<double>(targets.size());
    count += targets.size();
  }
  return total / static_cast<double>(count);
}

double student_cer(const S2SModel& model, std::span<const Utterance> set, std::size_t beam_width,
                   Precision precision) {
  if (set.empty()) throw ContractError("student_cer: empty set");
  std::size_t edits = 0, length = 0;
  for (const auto& u : set) {
    const Hypothesis h = decode(model, u.features, beam_width, precision);
    const Sequence ref = strip_framing(u.transcript);
    if (ref.empty()) throw ContractError("student_cer: empty reference for " + u.id);
    edits += edit_distance(ref, strip_framing(h.tokens));
    length += ref.size();
  }
  return static_cast<double>(edits) / static_cast<double>(length);
}

TrainSummary train_student(S2SModel& model, const Vocabulary& vocab,
                           std::span<const Utterance> train, std::span<const Utterance> val,
                           StudentMode mode, const CorModel* teacher,
                           const Vocabulary* teacher_vocab, const TrainConfig& cfg,
                           MetricsSink& sink) {
  const std::size_t k = model.config().vocab_size;
  if (vocab.size() != k)
    throw ContractError("student: vocabulary has " + std::to_string(vocab.size()) +
                        " entries, model expects " + std::to_string(k));
  if ((mode == StudentMode::lst) != (teacher != nullptr))
    throw ContractError("student: a teacher is required in lst mode and only there");
  if (teacher) {
    if (!teacher_vocab || !(*teacher_vocab == vocab) || teacher->config().vocab_size != k)
      throw ContractError("student: teacher and student vocabularies differ");
  }
  if (val.empty()) throw ContractError("student: empty validation set");
  for (const auto* set : {&train, &val})
    for (const auto& u : *set) {
      if (u.transcript.size() < 3) throw ContractError("student: utterance " + u.id + " is empty");
      for (TokenId t : u.transcript)
        if (t >= k) throw ContractError("student: utterance " + u.id + " uses an unknown index");
    }

  LoopHooks hooks;
  hooks.step = [&](std::span<const std::size_t> idx, Rng& augment, Rng& drop) {
    std::vector<const AcousticFeatures*> feats;
    std::vector<const Sequence*> transcripts;
    std::vector<TokenId> targets;
    for (auto i : idx) {
      feats.push_back(&train[i].features);
      transcripts.push_back(&train[i].transcript);
      targets.insert(targets.end(), train[i].transcript.begin() + 1, train[i].transcript.end());
    }
    const PackedBatch prefixes = augmented_inputs(transcripts, k, cfg, augment);

    SoftTarget soft;
    switch (mode) {
      case StudentMode::baseline:
        soft = hard_targets(targets, k);
        break;
      case StudentMode::label_smoothing:
        soft = label_smoothing_targets(targets, k, cfg.smoothing);
        break;
      case StudentMode::lst: {
        const TeacherBatch tb = teacher_rows(*teacher, transcripts, cfg.temperature, cfg.precision);
        if (tb.targets != targets)
          throw ContractError("teacher alignment: teacher targets differ from decoder targets");
        soft = mix_targets(targets, tb.probs, cfg.lambda);
        break;
      }
    }

    Graph g(ComputeConfig{cfg.precision, false, cfg.seed});
    Var logits = model.forward(g, feats, prefixes, ForwardContext{model.config().dropout_rate, &drop});
    if (g.value(logits).rows() != targets.size())
      throw ContractError("teacher alignment: decoder rows differ from targets");
    const std::vector<double> w(targets.size(), 1.0 / static_cast<double>(targets.size()));
    Var loss = soft_cross_entropy(g, logits, soft.rows, w);
    const double value = g.value(loss).values[0];
    const double ce = hard_cross_entropy(g.value(logits), targets);
    if (std::isfinite(value)) g.backward(loss);
    return std::make_pair(value, ce);
  };
  const auto cer_set = cfg.val_cer_limit ? val.first(std::min(cfg.val_cer_limit, val.size())) : val;
  hooks.validate = [&]() {
    MetricRecord r;
    r.loss_ce = student_cross_entropy(model, val, cfg.precision);
    r.loss_lst = r.loss_ce;
    r.cer = student_cer(model, cer_set, cfg.val_beam_width, cfg.precision);
    return r;
  };
  hooks.final_eval = [&]() {
    MetricRecord r;
    r.loss_ce = student_cross_entropy(model, val, cfg.precision);
    r.loss_lst = r.loss_ce;
    r.cer = student_cer(model, val, model.config().beam_width, cfg.precision);
    return r;
  };
  return run_loop(model.parameters(), model.config().fingerprint(), model.config().model_dim,
                  train.size(), cfg, sink, hooks);
}

}  // namespace cloze
