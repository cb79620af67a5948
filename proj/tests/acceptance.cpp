// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cloze/gradcheck.hpp"
#include "cloze/leak_probe.hpp"
#include "cloze/losses.hpp"
#include "cloze/training.hpp"

using namespace cloze;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Pinned tolerances.

constexpr double kLeakBound = 1e-9;
constexpr double kSeenBound = 1e-6;
constexpr double kGradTolerance = 1e-4;
constexpr double kCorEvenFloor = 0.95;
constexpr double kUniCorEvenCeiling = 0.20;
constexpr double kLinearityTolerance = 1e-12;
constexpr double kKldTolerance = 1e-10;
constexpr double kLrReference = 6.988e-4;
constexpr double kLrTolerance = 1e-7;
constexpr double kAugmentRate = 0.03;
constexpr double kAugmentTolerance = 0.005;

// ---------------------------------------------------------------------------
// Desk configurations.

CorConfig desk_cor(std::size_t vocab_size, CorVariant variant) {
  CorConfig c;
  c.vocab_size = vocab_size;
  c.model_dim = 32;
  c.heads = 4;
  c.inner_dim = 64;
  c.stack_depth = 2;
  c.fusion_depth = 1;
  c.variant = variant;
  return c;
}

TrainConfig desk_cor_training() {
  TrainConfig t;
  t.batch_size = 32;
  t.epochs = 2;
  t.warmup_steps = 400;
  t.lr_scale = 0.5;
  t.log_every = 1000000;
  t.average_last_k = 1;
  return t;
}

struct SpeechTask {
  std::size_t span = 27;  // vocabulary of 30 with the reserved symbols
  std::size_t length = 9;
  std::size_t train = 19000;
  std::size_t train_sentences = 100;  // distinct transcripts behind the training audio
  std::size_t val = 1000;
  std::size_t text = 50000;  // teacher text sentences
  std::size_t frames_per_token = 1;
  std::size_t feat_dim = 20;
  double noise_sigma = 1.5;
  std::vector<std::pair<std::size_t, std::size_t>> homophones = {{1, 2}, {10, 11}, {20, 21}};
};

S2SConfig desk_student(const SpeechTask& task) {
  S2SConfig c;
  c.feat_dim = task.feat_dim;
  c.vocab_size = task.span + Vocabulary::reserved_count;
  c.model_dim = 32;
  c.heads = 4;
  c.inner_dim = 64;
  c.encoder_depth = 2;
  c.decoder_depth = 1;
  c.max_decode_len = task.length + 4;
  c.beam_width = 4;
  return c;
}

TrainConfig desk_student_training() {
  TrainConfig t;
  t.batch_size = 32;
  t.epochs = 10;
  t.warmup_steps = 400;
  t.log_every = 1000000;
  t.average_last_k = 1;
  t.lambda = 0.5;
  t.temperature = 2.0;
  t.smoothing = 0.1;
  t.val_cer_limit = 100;
  t.val_beam_width = 1;
  return t;
}

CorConfig tiny_cor(CorVariant v = CorVariant::cor) {
  CorConfig c;
  c.vocab_size = 9;
  c.model_dim = 8;
  c.heads = 2;
  c.inner_dim = 16;
  c.stack_depth = 2;
  c.variant = v;
  return c;
}

S2SConfig tiny_student() {
  S2SConfig c;
  c.feat_dim = 4;
  c.vocab_size = 13;
  c.model_dim = 8;
  c.heads = 2;
  c.inner_dim = 16;
  c.encoder_depth = 1;
  c.decoder_depth = 1;
  c.max_decode_len = 8;
  c.beam_width = 2;
  return c;
}

Sequence random_framed(std::mt19937_64& rng, std::size_t interior, std::size_t k) {
  Sequence s{Vocabulary::sos};
  for (std::size_t i = 0; i < interior; ++i) s.push_back(Vocabulary::reserved_count + rng() % (k - 3));
  s.push_back(Vocabulary::eos);
  return s;
}

std::vector<Utterance> tiny_speech(std::size_t count, std::uint64_t seed) {
  SyntheticSpec s;
  s.kind = GeneratorKind::homophone_speech;
  s.length = 5;
  s.count = count;
  s.seed = seed;
  s.voice_seed = 1;
  s.feat_dim = 4;
  s.frames_per_token = 2;
  s.noise_sigma = 0.3;
  s.homophones = {{1, 2}};
  return render_speech(gen_sentences(s), s, 13);
}

// ---------------------------------------------------------------------------

Outcome leak_invariant() {
  Outcome o;
  double worst_leak = 0.0;
  for (std::size_t n : {2u, 5u, 12u})
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const CorModel model(desk_cor(13, CorVariant::cor), seed);
      std::mt19937_64 rng(seed + 100);
      Sequence inputs{Vocabulary::sos};
      while (inputs.size() < n) inputs.push_back(Vocabulary::reserved_count + rng() % 10);
      const SensitivityTable t = sensitivity_table(cor_probe_subject(model, inputs));
      for (std::size_t i = 0; i < t.analytic.size(); ++i)
        if (std::abs(t.analytic.values[i] - t.numeric.values[i]) > kLeakAgreement)
          o.check(false, "analytic/numeric disagree at n=" + std::to_string(n));
      for (std::size_t pos = 1; pos <= n; ++pos) {
        if (pos < n) {
          const double a = t.analytic.at(pos - 1, pos), num = t.numeric.at(pos - 1, pos);
          worst_leak = std::max({worst_leak, a, num});
          o.check(a <= kLeakBound && num <= kLeakBound,
                  "leak n=" + std::to_string(n) + " t=" + std::to_string(pos) + " " + fmt(std::max(a, num)));
        }
        double left = 0.0, right = 0.0;
        for (std::size_t j = 1; j <= pos; ++j) left = std::max(left, t.analytic.at(pos - 1, j - 1));
        for (std::size_t j = pos + 2; j <= n; ++j) right = std::max(right, t.analytic.at(pos - 1, j - 1));
        o.check(left > kSeenBound, "no left context at n=" + std::to_string(n) + " t=" + std::to_string(pos));
        if (pos + 2 <= n)
          o.check(right > kSeenBound, "no right context at n=" + std::to_string(n) + " t=" + std::to_string(pos));
      }
    }
  o.note("max (t,t+1) sensitivity " + fmt(worst_leak));
  return o;
}

Outcome visibility_equivalence() {
  Outcome o;
  std::size_t compared = 0;
  const std::pair<const char*, std::function<StackDescription(std::size_t)>> layouts[] = {
      {"forward",
       [](std::size_t n) {
         StackDescription s(n);
         s.add_block(s.input(), {s.input()}, build_forward_mask(n));
         return s;
       }},
      {"backward",
       [](std::size_t n) {
         StackDescription s(n);
         s.add_block(s.input(), {s.input()}, build_backward_mask(n));
         return s;
       }},
      {"fusion",
       [](std::size_t n) {
         StackDescription s(n);
         s.add_block(s.input(), {s.input(), s.input()}, build_fusion_mask(n));
         return s;
       }},
      {"cor", [](std::size_t n) { return cor_stack(n, 2, 1, false); }},
  };
  for (const auto& [name, make] : layouts)
    for (std::size_t n = 1; n <= 16; ++n) {
      const StackDescription s = make(n);
      const auto vis = visibility_oracle(s);
      Tensor seen({n, n});
      for (std::uint64_t seed = 0; seed < 2; ++seed) {
        const SensitivityTable t = sensitivity_table(stack_probe_subject(s, 4, 2, seed));
        for (std::size_t i = 0; i < seen.size(); ++i) seen.values[i] = std::max(seen.values[i], t.numeric.values[i]);
      }
      for (std::size_t t = 1; t <= n; ++t) {
        std::set<std::size_t> derived;
        for (std::size_t j = 1; j <= n; ++j)
          if (seen.at(t - 1, j - 1) > kSeenBound) derived.insert(j);
        ++compared;
        o.check(derived == vis[t - 1], std::string(name) + " n=" + std::to_string(n) + " t=" + std::to_string(t));
      }
    }
  o.note(std::to_string(compared) + " rows compared");
  return o;
}

Outcome gradient_correctness() {
  Outcome o;
  double worst = 0.0;
  GradCheckOptions opt;
  opt.max_coords_per_param = 8;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    opt.seed = seed;
    for (auto v : {CorVariant::cor, CorVariant::unicor}) {
      CorModel m(tiny_cor(v), seed);
      std::mt19937_64 rng(seed);
      const std::vector<Sequence> seqs = {random_framed(rng, 4, 9), random_framed(rng, 1, 9)};
      const ClozeBatch b = make_cloze_batch(seqs);
      const Tensor target = label_smoothing_targets(b.targets, 9, 0.1).rows;
      const std::vector<double> w(b.targets.size(), 1.0 / static_cast<double>(b.targets.size()));
      auto f = [&](Graph& g) { return soft_cross_entropy(g, m.forward(g, b.inputs), target, w); };
      const auto r = gradient_check(f, m.parameters().all(), opt);
      worst = std::max(worst, r.max_rel_error);
      o.check(r.max_rel_error < kGradTolerance, "cor seed " + std::to_string(seed) + " " + r.worst_param);
    }
    S2SModel s(tiny_student(), seed);
    const auto utts = tiny_speech(2, seed);
    std::vector<const AcousticFeatures*> feats;
    PackedBatch prefixes;
    std::vector<TokenId> targets;
    for (const auto& u : utts) {
      feats.push_back(&u.features);
      prefixes.append(std::span<const TokenId>(u.transcript.data(), u.transcript.size() - 1));
      targets.insert(targets.end(), u.transcript.begin() + 1, u.transcript.end());
    }
    const Tensor target = label_smoothing_targets(targets, 13, 0.1).rows;
    const std::vector<double> w(targets.size(), 1.0 / static_cast<double>(targets.size()));
    auto f = [&](Graph& g) { return soft_cross_entropy(g, s.forward(g, feats, prefixes), target, w); };
    const auto r = gradient_check(f, s.parameters().all(), opt);
    worst = std::max(worst, r.max_rel_error);
    o.check(r.max_rel_error < kGradTolerance, "student seed " + std::to_string(seed) + " " + r.worst_param);
  }
  o.note("max relative error " + fmt(worst));
  return o;
}

Outcome cloze_gap() {
  Outcome o;
  SyntheticSpec spec;
  spec.length = 21;
  spec.count = 50000;
  spec.seed = 1;
  const Corpus train = gen_center_sum(spec);
  spec.count = 5000;
  spec.seed = 2;
  const Corpus eval = gen_center_sum(spec);
  const std::size_t k = symbol_vocabulary(10).size();
  Corpus val;
  val.sequences.assign(eval.sequences.begin(), eval.sequences.begin() + 500);

  std::map<CorVariant, double> even;
  for (auto v : {CorVariant::cor, CorVariant::unicor}) {
    CorModel model(desk_cor(k, v), 7);
    MetricsSink sink;
    train_cor(model, train, val, desk_cor_training(), sink);
    even[v] = cloze_accuracy(model, eval.sequences).per_class.at("even").accuracy();
  }
  o.check(even[CorVariant::cor] >= kCorEvenFloor, "COR even accuracy below " + fmt(kCorEvenFloor));
  o.check(even[CorVariant::unicor] <= kUniCorEvenCeiling, "UniCOR even accuracy above " + fmt(kUniCorEvenCeiling));
  o.note("even-position accuracy COR " + fmt(even[CorVariant::cor]) + ", UniCOR " +
         fmt(even[CorVariant::unicor]));
  return o;
}

Outcome distillation_identities() {
  Outcome o;
  // lambda = 1 reproduces the baseline trajectory.
  const auto train = tiny_speech(16, 1), val = tiny_speech(4, 2);
  const Vocabulary vocab = symbol_vocabulary(10);
  const CorModel teacher(desk_cor(13, CorVariant::cor), 3);
  auto run = [&](StudentMode mode) {
    S2SModel model(tiny_student(), 5);
    MetricsSink sink;
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.warmup_steps = 5;
    cfg.log_every = 1;
    cfg.lambda = 1.0;
    const TrainSummary s = train_student(model, vocab, train, val, mode,
                                         mode == StudentMode::lst ? &teacher : nullptr, &vocab, cfg, sink);
    std::string out;
    for (const auto& r : sink.records()) out += r.to_json() + "\n";
    for (const auto& p : s.averaged.parameters)
      for (double x : p.value.values) out.append(reinterpret_cast<const char*>(&x), sizeof x);
    return out;
  };
  o.check(run(StudentMode::baseline) == run(StudentMode::lst), "lambda=1 differs from baseline");

  // Linearity in lambda and the KL/CE gradient identity.
  double worst_lin = 0.0, worst_kld = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    std::normal_distribution<double> n01;
    const std::size_t n = 6, k = 7;
    auto dist = [&] {
      Tensor t({n, k});
      for (std::size_t r = 0; r < n; ++r) {
        double z = 0.0;
        for (auto& x : t.row(r)) z += (x = u(rng));
        for (auto& x : t.row(r)) x /= z;
      }
      return t;
    };
    const Tensor s = dist(), t = dist();
    std::vector<TokenId> labels(n);
    for (auto& l : labels) l = rng() % k;
    const LossBreakdown one = lst_loss(s, labels, t, 1.0), zero = lst_loss(s, labels, t, 0.0);
    for (double lambda : {0.0, 0.25, 0.5, 0.9, 1.0}) {
      const LossBreakdown l = lst_loss(s, labels, t, lambda);
      for (std::size_t i = 0; i < n; ++i)
        worst_lin = std::max(worst_lin, std::abs(l.per_position[i] - (lambda * one.per_position[i] +
                                                                      (1 - lambda) * zero.per_position[i])));
    }
    Parameter w{"w", Tensor({3, k}), Tensor({3, k})};
    for (auto& x : w.value.values) x = n01(rng);
    Tensor x({n, 3});
    for (auto& v : x.values) v = n01(rng);
    Parameter* ps[] = {&w};
    const KldEquivalence r = kld_equivalence_check(
        SoftTarget{dist(), TargetProvenance::teacher}, [&](Graph& g) { return matmul(g, g.input(x), g.param(w)); },
        ps);
    worst_kld = std::max(worst_kld, r.max_gradient_discrepancy);
  }
  o.check(worst_lin <= kLinearityTolerance, "lst_loss not linear in lambda: " + fmt(worst_lin));
  o.check(worst_kld <= kKldTolerance, "KL and CE gradients differ: " + fmt(worst_kld));
  o.note("linearity " + fmt(worst_lin) + ", KL/CE gradient gap " + fmt(worst_kld));
  return o;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

Outcome distillation_gains() {
  Outcome o;
  const SpeechTask task;
  SyntheticSpec spec;
  spec.kind = GeneratorKind::homophone_speech;
  spec.vocab_span = task.span;
  spec.length = task.length;
  spec.frames_per_token = task.frames_per_token;
  spec.feat_dim = task.feat_dim;
  spec.noise_sigma = task.noise_sigma;
  spec.homophones = task.homophones;
  spec.voice_seed = 1;
  spec.grammar_seed = 1;
  const Vocabulary vocab = symbol_vocabulary(task.span);
  const std::size_t k = vocab.size();

  spec.count = task.train;
  spec.seed = 11;
  spec.sentence_pool = task.train_sentences;
  const auto train = render_speech(gen_sentences(spec), spec, k);
  spec.sentence_pool = 0;
  spec.count = task.val;
  spec.seed = 12;
  const auto val = render_speech(gen_sentences(spec), spec, k);
  spec.count = task.text;
  spec.seed = 13;
  const Corpus text = gen_sentences(spec);
  spec.count = 500;
  spec.seed = 14;
  const Corpus text_val = gen_sentences(spec);

  CorModel teacher(desk_cor(k, CorVariant::cor), 21);
  {
    MetricsSink sink;
    train_cor(teacher, text, text_val, desk_cor_training(), sink);
    o.note("teacher cloze accuracy " + fmt(*sink.records().back().cloze_acc));
  }

  std::map<StudentMode, std::vector<double>> ce, cer;
  std::size_t lst_wins = 0;
  const std::size_t seeds = 5;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    std::map<StudentMode, double> seed_cer;
    for (auto mode : {StudentMode::baseline, StudentMode::label_smoothing, StudentMode::lst}) {
      S2SModel model(desk_student(task), seed);
      MetricsSink sink;
      TrainConfig t = desk_student_training();
      t.seed = seed;
      const TrainSummary s = train_student(model, vocab, train, val, mode,
                                           mode == StudentMode::lst ? &teacher : nullptr, &vocab, t, sink);
      ce[mode].push_back(s.final_metrics.loss_ce);
      cer[mode].push_back(*s.final_metrics.cer);
      seed_cer[mode] = *s.final_metrics.cer;
      std::printf("  seed %llu %-15s val CE %.4f CER %.4f\n", static_cast<unsigned long long>(seed),
                  student_mode_name(mode), s.final_metrics.loss_ce, *s.final_metrics.cer);
      std::fflush(stdout);
    }
    lst_wins += seed_cer[StudentMode::lst] < seed_cer[StudentMode::baseline];
  }
  const double ce_b = median(ce[StudentMode::baseline]), ce_ls = median(ce[StudentMode::label_smoothing]),
               ce_l = median(ce[StudentMode::lst]);
  const double cer_b = median(cer[StudentMode::baseline]), cer_l = median(cer[StudentMode::lst]);
  o.check(ce_l < ce_ls, "median CE(lst) >= CE(label smoothing)");
  o.check(ce_ls <= ce_b, "median CE(label smoothing) > CE(baseline)");
  o.check(cer_l < cer_b, "median CER(lst) >= CER(baseline)");
  o.check(lst_wins >= 4, "lst beats baseline CER on only " + std::to_string(lst_wins) + "/5 seeds");
  o.note("median CE baseline " + fmt(ce_b) + ", LS " + fmt(ce_ls) + ", LST " + fmt(ce_l) +
         "; median CER baseline " + fmt(cer_b) + ", LS " + fmt(median(cer[StudentMode::label_smoothing])) +
         ", LST " + fmt(cer_l) + "; LST wins " + std::to_string(lst_wins) + "/5");
  return o;
}

// Edit distance by memoized recursion on suffixes.
std::size_t oracle_distance(const Sequence& a, const Sequence& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    auto it = memo.find({i, j});
    if (it != memo.end()) return it->second;
    const std::size_t r = std::min({go(i + 1, j) + 1, go(i, j + 1) + 1, go(i + 1, j + 1) + (a[i] != b[j])});
    memo[{i, j}] = r;
    return r;
  };
  return go(0, 0);
}

Outcome unit_suites() {
  Outcome o;
  // Cloze accuracy on a hand-built fixture: always predicting token 4.
  LogitFunction always4 = [](const Sequence& s) {
    Tensor l({s.size() - 1, 6});
    for (std::size_t r = 0; r < l.rows(); ++r) l.at(r, 4) = 1.0;
    return l;
  };
  const std::vector<Sequence> fixture = {{1, 4, 5, 4, 2}, {1, 4, 2}, {1, 5, 4, 4, 2}};
  const ClozeAccuracy acc = cloze_accuracy(always4, fixture);
  o.check(acc.correct == 5 && acc.total == 10 && acc.accuracy == 0.5, "cloze fixture M/N");

  // CER against the recursive oracle for all sequences up to length 6 over 3 symbols.
  std::vector<Sequence> seqs{{}};
  for (std::size_t i = 0; i < seqs.size(); ++i)
    if (seqs[i].size() < 6)
      for (TokenId t = 3; t < 6; ++t) {
        Sequence s = seqs[i];
        s.push_back(t);
        seqs.push_back(std::move(s));
      }
  std::size_t pairs = 0, bad = 0;
  for (const auto& r : seqs)
    for (const auto& h : seqs) {
      const std::size_t d = oracle_distance(r, h);
      bad += edit_distance(r, h) != d;
      if (!r.empty()) bad += cer(r, h) != static_cast<double>(d) / static_cast<double>(r.size());
      ++pairs;
    }
  o.check(bad == 0, std::to_string(bad) + " CER mismatches");

  const double lr = lr_schedule(4000, 512, 4000);
  o.check(std::abs(lr - kLrReference) <= kLrTolerance, "lr_schedule(4000) = " + fmt(lr, 10));

  // Averaging: idempotent and order-independent.
  auto ckpt = [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    Checkpoint c;
    c.fingerprint = "fp";
    Tensor t({5, 5});
    for (auto& v : t.values) v = n01(rng);
    c.parameters.push_back({"w", ArrayTag::f64, t, {}});
    return c;
  };
  const Checkpoint one = ckpt(1);
  o.check(average_checkpoints(std::vector<Checkpoint>(7, one)).parameters[0].value.values ==
              one.parameters[0].value.values,
          "averaging copies changed values");
  std::vector<Checkpoint> cks;
  for (std::uint64_t s = 0; s < 7; ++s) cks.push_back(ckpt(s));
  const auto ref = average_checkpoints(cks).parameters[0].value.values;
  std::reverse(cks.begin(), cks.end());
  std::swap(cks[1], cks[4]);
  o.check(average_checkpoints(cks).parameters[0].value.values == ref, "averaging depends on order");
  o.note(std::to_string(pairs) + " CER pairs; lr " + fmt(lr, 6));
  return o;
}

Outcome numerical_robustness() {
  Outcome o;
  for (auto v : {CorVariant::cor, CorVariant::unicor})
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      CorModel m(desk_cor(13, v), seed);
      const std::vector<Sequence> seqs = {{1, 5, 2}};
      const ClozeBatch b = make_cloze_batch(seqs);
      const Tensor target = hard_targets(b.targets, 13).rows;
      const std::vector<double> w(b.targets.size(), 1.0);
      m.parameters().zero_grad();
      Graph g;
      Var loss = soft_cross_entropy(g, m.forward(g, b.inputs), target, w);
      o.check(std::isfinite(g.value(loss).values[0]), "non-finite T=2 loss");
      g.backward(loss);
      for (const Parameter* p : std::as_const(m.parameters()).all())
        if (!p->grad.all_finite()) o.check(false, "non-finite gradient in " + p->name);
    }

  SyntheticSpec spec;
  spec.count = 5000;
  const auto seqs = gen_center_sum(spec).sequences;
  Rng rng(5);
  // Interior tokens carry an id outside the redraw range, so every draw shows.
  std::vector<Sequence> marked = seqs;
  for (auto& s : marked)
    for (std::size_t i = 1; i + 1 < s.size(); ++i) s[i] = 13;
  const auto out = augment_replace(marked, 13, 0.15, 0.20, rng);
  std::size_t tokens = 0, replaced = 0, reserved_changed = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    reserved_changed += out[i].front() != Vocabulary::sos || out[i].back() != Vocabulary::eos;
    for (std::size_t t = 1; t + 1 < out[i].size(); ++t) {
      ++tokens;
      replaced += out[i][t] != 13;
    }
  }
  const double rate = static_cast<double>(replaced) / static_cast<double>(tokens);
  o.check(tokens >= 100000, "fewer than 1e5 tokens");
  o.check(std::abs(rate - kAugmentRate) <= kAugmentTolerance, "replacement rate " + fmt(rate));
  o.check(reserved_changed == 0, "reserved symbols replaced");
  o.note("replacement rate " + fmt(rate) + " over " + std::to_string(tokens) + " tokens");
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "leak invariant", 60, leak_invariant},
      {2, "visibility equivalence", 60, visibility_equivalence},
      {3, "gradient correctness", 300, gradient_correctness},
      {4, "bidirectional vs unidirectional cloze gap", 1200, cloze_gap},
      {5, "distillation loss identities", 60, distillation_identities},
      {6, "distillation lowers validation CE and CER", 2700, distillation_gains},
      {7, "cloze accuracy, CER, schedule and averaging suites", 60, unit_suites},
      {8, "numerical robustness", 60, numerical_robustness},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.check(secs <= c.budget_seconds, "over the " + fmt(c.budget_seconds) + " s budget");
    failures += !o.pass;
    std::printf("[%s] %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
