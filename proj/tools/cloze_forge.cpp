// cloze-forge: data generation, training, evaluation and reporting.

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "cloze/checkpoint.hpp"
#include "cloze/config.hpp"
#include "cloze/cor_model.hpp"
#include "cloze/data.hpp"
#include "cloze/leak_probe.hpp"
#include "cloze/metrics.hpp"
#include "cloze/seq2seq.hpp"
#include "cloze/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cloze;

namespace {

constexpr const char* kToolVersion = "cloze-forge 1.0.0";

std::string sha256_file(const std::string& path) {
  const std::string data = read_file(path);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

/// Options shared by every subcommand.
struct Common {
  std::uint64_t seed = 1;
  std::string config_path;
  std::string out = ".";
  KeyValues settings;
  std::map<std::string, std::string> resolved;
  std::vector<std::string> inputs;

  void load() {
    if (!config_path.empty()) {
      settings = load_key_values(config_path);
      inputs.push_back(config_path);
    }
  }
  std::string str(const std::string& k, const std::string& d) {
    return resolved[k] = settings.get_string(k, d);
  }
  double num(const std::string& k, double d) {
    const double v = settings.get_double(k, d);
    std::ostringstream os;
    os.precision(17);
    os << v;
    resolved[k] = os.str();
    return v;
  }
  std::size_t size(const std::string& k, std::size_t d) {
    const std::size_t v = settings.get_size(k, d);
    resolved[k] = std::to_string(v);
    return v;
  }
  /// Rejects configuration keys nobody asked for.
  void finish_settings() const {
    const auto extra = settings.unread();
    if (!extra.empty()) {
      std::string msg = "unknown configuration key(s):";
      for (const auto& k : extra) msg += " " + k;
      throw ContractError(msg);
    }
  }
  std::string path(const std::string& name) const { return (fs::path(out) / name).string(); }

  void write_manifest(const std::string& command, const std::string& extra_config = "") const {
    json m;
    m["tool"] = kToolVersion;
    m["command"] = command;
    m["seed"] = seed;
    json cfg = json::object();
    for (const auto& [k, v] : resolved) cfg[k] = v;
    KeyValues extra = parse_key_values(extra_config);
    for (const auto& [k, v] : extra.all()) cfg[k] = v;
    m["config"] = cfg;
    json in = json::object();
    for (const auto& p : inputs)
      if (fs::is_regular_file(p)) in[p] = sha256_file(p);
    m["inputs"] = in;
    std::string text;
    for (const auto& [k, v] : cfg.items()) text += k + "=" + v.get<std::string>() + "\n";
    write_file_atomic(path("manifest.json"), m.dump(2) + "\n");
    write_file_atomic(path("resolved.cfg"), text);
  }
};

Precision resolve_precision(Common& c) {
  const Precision p = precision_from_env(parse_precision(c.str("precision", "double")));
  c.resolved["precision"] = precision_name(p);
  return p;
}

TrainConfig train_config(Common& c) {
  TrainConfig t = TrainConfig::from(c.settings, TrainConfig{});
  t.seed = c.seed;
  t.precision = resolve_precision(c);
  KeyValues described = parse_key_values(t.describe());
  for (const auto& [k, v] : described.all()) c.resolved[k] = v;
  return t;
}

Corpus load_corpus(const std::string& path, const Vocabulary& vocab, TokenizeMode mode) {
  Corpus c = encode_corpus(read_file(path), vocab, mode, path);
  if (c.sequences.empty()) throw ContractError(path + ": no sentences");
  c.validate(vocab.size());
  return c;
}

/// Transcript file: `utt_id<TAB>tok tok ...`.
std::vector<std::pair<std::string, std::vector<std::string>>> read_transcripts(
    const std::string& path) {
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ContractError(path + ": line without <TAB>: " + line);
    out.emplace_back(line.substr(0, tab),
                     tokenize(std::string_view(line).substr(tab + 1), TokenizeMode::whitespace));
  }
  return out;
}

std::vector<Utterance> load_speech(const std::string& dir, const Vocabulary& vocab) {
  const auto arrays = read_arrays((fs::path(dir) / "features.corf").string());
  std::map<std::string, const NamedArray*> by_id;
  for (const auto& a : arrays) by_id[a.name] = &a;
  std::vector<Utterance> out;
  for (auto& [id, toks] : read_transcripts((fs::path(dir) / "transcripts.txt").string())) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ContractError(dir + ": no features for utterance " + id);
    Sequence s{Vocabulary::sos};
    for (const auto& t : toks) s.push_back(vocab.id(t));
    s.push_back(Vocabulary::eos);
    out.push_back(Utterance{id, AcousticFeatures{it->second->value}, std::move(s)});
  }
  if (out.empty()) throw ContractError(dir + ": no utterances");
  return out;
}

void write_speech(const std::string& dir, const std::vector<Utterance>& utts,
                  const Vocabulary& vocab) {
  std::vector<NamedArray> arrays;
  std::string transcripts;
  for (const auto& u : utts) {
    arrays.push_back({u.id, ArrayTag::f64, u.features.frames, {}});
    transcripts += format_hypothesis(u.id, u.transcript, vocab) + "\n";
  }
  write_arrays((fs::path(dir) / "features.corf").string(), arrays);
  write_file_atomic((fs::path(dir) / "transcripts.txt").string(), transcripts);
}

struct LoadedCor {
  std::unique_ptr<CorModel> model;
  Vocabulary vocab;
};

LoadedCor load_cor(const std::string& path) {
  const Checkpoint ck = Checkpoint::load(path);
  LoadedCor out;
  out.model = std::make_unique<CorModel>(CorConfig::from_fingerprint(ck.fingerprint), 0);
  restore(out.model->parameters(), ck, ck.fingerprint);
  if (ck.vocabulary.empty()) throw ContractError(path + ": checkpoint carries no vocabulary");
  out.vocab = Vocabulary::deserialize(ck.vocabulary);
  return out;
}

struct LoadedS2S {
  std::unique_ptr<S2SModel> model;
  Vocabulary vocab;
};

LoadedS2S load_s2s(const std::string& path, std::size_t beam_width, std::size_t max_decode_len) {
  const Checkpoint ck = Checkpoint::load(path);
  S2SConfig cfg = S2SConfig::from_fingerprint(ck.fingerprint);
  cfg.beam_width = beam_width;
  cfg.max_decode_len = max_decode_len;
  LoadedS2S out;
  out.model = std::make_unique<S2SModel>(cfg, 0);
  restore(out.model->parameters(), ck, ck.fingerprint);
  if (ck.vocabulary.empty()) throw ContractError(path + ": checkpoint carries no vocabulary");
  out.vocab = Vocabulary::deserialize(ck.vocabulary);
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> parse_pairs(const std::string& text) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ContractError("homophone pair must look like a:b");
    out.emplace_back(std::stoul(item.substr(0, colon)), std::stoul(item.substr(colon + 1)));
  }
  return out;
}

// ---------------------------------------------------------------------------

void cmd_gen_data(Common& c) {
  SyntheticSpec spec;
  const std::string kind = c.str("kind", "center_sum");
  if (kind == "center_sum") spec.kind = GeneratorKind::center_sum;
  else if (kind == "markov") spec.kind = GeneratorKind::markov;
  else if (kind == "homophone_speech") spec.kind = GeneratorKind::homophone_speech;
  else throw ContractError("kind must be center_sum, markov or homophone_speech");
  spec.vocab_span = c.size("span", spec.kind == GeneratorKind::homophone_speech ? 27 : 10);
  spec.length = c.size("length", 21);
  spec.count = c.size("count", 1000);
  spec.branching = c.size("branching", 3);
  spec.sentence_pool = c.size("sentence_pool", 0);
  spec.noise_sigma = c.num("noise_sigma", 0.5);
  spec.frames_per_token = c.size("frames_per_token", 3);
  spec.feat_dim = c.size("feat_dim", 20);
  spec.homophones = parse_pairs(c.str("homophones", ""));
  const std::uint64_t voice = c.settings.get_u64("voice_seed", 1);
  c.resolved["voice_seed"] = std::to_string(voice);
  const std::uint64_t grammar = c.settings.get_u64("grammar_seed", 1);
  c.resolved["grammar_seed"] = std::to_string(grammar);
  c.finish_settings();
  spec.seed = c.seed;
  spec.voice_seed = voice;
  spec.grammar_seed = grammar;

  const Vocabulary vocab = symbol_vocabulary(spec.vocab_span);
  const Corpus corpus = gen_sentences(spec);
  fs::create_directories(c.out);
  vocab.save(c.path("vocab.txt"));
  write_file_atomic(c.path("corpus.txt"), corpus_text(corpus, vocab, TokenizeMode::character));
  if (spec.kind == GeneratorKind::homophone_speech)
    write_speech(c.out, render_speech(corpus, spec, vocab.size()), vocab);
  std::cout << "wrote " << corpus.sequences.size() << " sentences to " << c.out << "\n";
  c.write_manifest("gen-data");
}

CorConfig cor_config(Common& c, std::size_t vocab_size) {
  CorConfig cfg;
  cfg.vocab_size = vocab_size;
  const std::string variant = c.str("variant", "cor");
  if (variant != "cor" && variant != "unicor") throw ContractError("variant must be cor or unicor");
  cfg.variant = variant == "cor" ? CorVariant::cor : CorVariant::unicor;
  cfg.model_dim = c.size("model_dim", cfg.model_dim);
  cfg.heads = c.size("heads", cfg.heads);
  cfg.inner_dim = c.size("inner_dim", cfg.inner_dim);
  cfg.stack_depth = c.size("stack_depth", cfg.stack_depth);
  cfg.fusion_depth = c.size("fusion_depth", cfg.fusion_depth);
  cfg.max_len = c.size("max_len", cfg.max_len);
  cfg.dropout_rate = c.num("dropout", cfg.dropout_rate);
  cfg.validate();
  return cfg;
}

Vocabulary vocabulary_for(Common& c, const std::string& vocab_path, const std::string& corpus_path,
                          TokenizeMode mode) {
  if (!vocab_path.empty()) {
    c.inputs.push_back(vocab_path);
    return Vocabulary::load(vocab_path);
  }
  const std::size_t min_count = c.size("min_count", 1);
  return build_vocab(read_file(corpus_path), min_count, mode);
}

void cmd_train_cor(Common& c, const std::string& corpus_path, const std::string& val_path,
                   const std::string& vocab_path) {
  c.inputs.insert(c.inputs.end(), {corpus_path, val_path});
  const TokenizeMode mode = parse_tokenize_mode(c.str("tokenize", "character"));
  const Vocabulary vocab = vocabulary_for(c, vocab_path, corpus_path, mode);
  const CorConfig cfg = cor_config(c, vocab.size());
  TrainConfig tc = train_config(c);
  c.finish_settings();
  tc.out_dir = c.out;
  tc.vocabulary = vocab.serialize();

  const Corpus train = load_corpus(corpus_path, vocab, mode);
  const Corpus val = load_corpus(val_path, vocab, mode);
  fs::create_directories(c.out);
  CorModel model(cfg, c.seed);
  std::ofstream metrics(c.path("metrics.jsonl.tmp"));
  MetricsSink sink(&metrics);
  c.write_manifest("train-cor", "group=" + std::string(cfg.variant == CorVariant::cor ? "cor" : "unicor") +
                                    "\ncorpus=" + fs::path(corpus_path).filename().string());
  try {
    TrainSummary s = train_cor(model, train, val, tc, sink);
    s.averaged.save(c.path("model.corf"));
  } catch (const TrainingDiverged& e) {
    e.last_good.save(c.path("last_good.corf"));
    throw;
  }
  metrics.close();
  fs::rename(c.path("metrics.jsonl.tmp"), c.path("metrics.jsonl"));
  std::cout << sink.records().back().to_json() << "\n";
}

int cmd_eval_cloze(Common& c, const std::string& model_path, const std::string& corpus_path) {
  c.inputs.insert(c.inputs.end(), {model_path, corpus_path});
  const TokenizeMode mode = parse_tokenize_mode(c.str("tokenize", "character"));
  const Precision prec = resolve_precision(c);
  c.finish_settings();
  const LoadedCor cor = load_cor(model_path);
  const Corpus corpus = load_corpus(corpus_path, cor.vocab, mode);
  const ClozeAccuracy acc = cloze_accuracy(*cor.model, corpus.sequences, parity_class, prec);
  json j = {{"acc", acc.accuracy}, {"M", acc.correct}, {"N", acc.total}};
  for (const auto& [cls, t] : acc.per_class)
    j["per_class"][cls] = {{"acc", t.accuracy()}, {"M", t.correct}, {"N", t.total}};
  std::cout << j.dump() << "\n";
  fs::create_directories(c.out);
  write_file_atomic(c.path("eval.json"), j.dump(2) + "\n");
  c.write_manifest("eval-cloze");
  return 0;
}

int cmd_probe_leak(Common& c, const std::string& model_path, std::size_t max_len) {
  c.inputs.push_back(model_path);
  c.finish_settings();
  const LoadedCor cor = load_cor(model_path);
  if (max_len < 1) throw ContractError("--max-len must be >= 1");
  Rng rng(c.seed);
  std::uniform_int_distribution<TokenId> tok(Vocabulary::reserved_count, cor.vocab.size() - 1);
  Sequence inputs{Vocabulary::sos};
  while (inputs.size() < max_len) inputs.push_back(tok(rng));
  const SensitivityTable table = sensitivity_table(cor_probe_subject(*cor.model, inputs));

  std::ostringstream csv;
  csv.precision(6);
  csv << std::scientific << "t,j,analytic,numeric\n";
  bool leak = false;
  for (std::size_t t = 1; t <= max_len; ++t)
    for (std::size_t j = 1; j <= max_len; ++j) {
      const double a = table.analytic.at(t - 1, j - 1), n = table.numeric.at(t - 1, j - 1);
      csv << t << ',' << j << ',' << a << ',' << n << '\n';
      if (j == t + 1 && (a > 1e-9 || n > 1e-9)) leak = true;
    }
  std::cout << csv.str();
  fs::create_directories(c.out);
  write_file_atomic(c.path("leak.csv"), csv.str());
  std::string masks;
  const StackDescription stack = cor.model->stack(max_len);
  for (std::size_t i = 0; i < stack.nodes.size(); ++i)
    if (stack.nodes[i].kind == StackNode::Kind::block)
      masks += "## node " + std::to_string(i) + "\n" + stack.nodes[i].mask.dump();
  write_file_atomic(c.path("masks.txt"), masks);
  c.write_manifest("probe-leak");
  if (leak) std::cerr << "leak: some output depends on its own target token\n";
  return leak ? 1 : 0;
}

void cmd_train_student(Common& c, const std::string& train_dir, const std::string& val_dir,
                       const std::string& teacher_path, const std::string& vocab_path) {
  const StudentMode mode = parse_student_mode(c.str("mode", "baseline"));
  c.inputs.insert(c.inputs.end(), {(fs::path(train_dir) / "transcripts.txt").string(),
                                   (fs::path(val_dir) / "transcripts.txt").string()});
  if (vocab_path.empty()) throw ContractError("train-student needs --vocab");
  c.inputs.push_back(vocab_path);
  const Vocabulary vocab = Vocabulary::load(vocab_path);

  S2SConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.feat_dim = c.size("feat_dim", cfg.feat_dim);
  cfg.model_dim = c.size("model_dim", cfg.model_dim);
  cfg.encoder_depth = c.size("encoder_depth", cfg.encoder_depth);
  cfg.decoder_depth = c.size("decoder_depth", cfg.decoder_depth);
  cfg.heads = c.size("heads", cfg.heads);
  cfg.inner_dim = c.size("inner_dim", cfg.inner_dim);
  cfg.max_len = c.size("max_len", cfg.max_len);
  cfg.max_decode_len = c.size("max_decode_len", cfg.max_decode_len);
  cfg.beam_width = c.size("beam_width", cfg.beam_width);
  cfg.dropout_rate = c.num("dropout", cfg.dropout_rate);
  TrainConfig tc = train_config(c);
  c.finish_settings();
  tc.out_dir = c.out;
  tc.vocabulary = vocab.serialize();

  std::unique_ptr<LoadedCor> teacher;
  if (!teacher_path.empty()) {
    c.inputs.push_back(teacher_path);
    teacher = std::make_unique<LoadedCor>(load_cor(teacher_path));
  }
  const auto train = load_speech(train_dir, vocab);
  const auto val = load_speech(val_dir, vocab);
  fs::create_directories(c.out);
  S2SModel model(cfg, c.seed);
  std::ofstream metrics(c.path("metrics.jsonl.tmp"));
  MetricsSink sink(&metrics);
  c.write_manifest("train-student", "group=" + std::string(student_mode_name(mode)) +
                                        "\ncorpus=" + fs::path(train_dir).filename().string());
  try {
    TrainSummary s = train_student(model, vocab, train, val, mode,
                                   teacher ? teacher->model.get() : nullptr,
                                   teacher ? &teacher->vocab : nullptr, tc, sink);
    s.averaged.save(c.path("model.corf"));
  } catch (const TrainingDiverged& e) {
    e.last_good.save(c.path("last_good.corf"));
    throw;
  }
  metrics.close();
  fs::rename(c.path("metrics.jsonl.tmp"), c.path("metrics.jsonl"));
  std::cout << sink.records().back().to_json() << "\n";
}

void cmd_decode(Common& c, const std::string& model_path, const std::string& data_dir) {
  c.inputs.insert(c.inputs.end(), {model_path, (fs::path(data_dir) / "transcripts.txt").string()});
  const std::size_t beam = c.size("beam_width", 4);
  const std::size_t max_len = c.size("max_decode_len", 64);
  const Precision prec = resolve_precision(c);
  c.finish_settings();
  const LoadedS2S s2s = load_s2s(model_path, beam, max_len);
  const auto utts = load_speech(data_dir, s2s.vocab);
  std::string out;
  std::size_t truncated = 0;
  for (const auto& u : utts) {
    const Hypothesis h = decode(*s2s.model, u.features, beam, prec);
    truncated += h.truncated;
    out += format_hypothesis(u.id, h.tokens, s2s.vocab) + "\n";
  }
  fs::create_directories(c.out);
  write_file_atomic(c.path("hyp.txt"), out);
  if (truncated) std::cerr << truncated << " hypotheses stopped at max_decode_len\n";
  c.write_manifest("decode");
}

void cmd_score(Common& c, const std::string& ref_path, const std::string& hyp_path) {
  c.inputs.insert(c.inputs.end(), {ref_path, hyp_path});
  c.finish_settings();
  std::map<std::string, TokenId> ids;
  auto encode = [&](const std::vector<std::string>& toks) {
    Sequence s;
    for (const auto& t : toks) s.push_back(ids.emplace(t, ids.size() + Vocabulary::reserved_count).first->second);
    return s;
  };
  std::map<std::string, Sequence> hyps;
  for (const auto& [id, toks] : read_transcripts(hyp_path)) hyps[id] = encode(toks);
  std::size_t edits = 0, length = 0, n = 0;
  for (const auto& [id, toks] : read_transcripts(ref_path)) {
    auto it = hyps.find(id);
    if (it == hyps.end()) throw ContractError("no hypothesis for utterance " + id);
    const Sequence ref = encode(toks);
    if (ref.empty()) throw ContractError("empty reference for utterance " + id);
    edits += edit_distance(ref, it->second);
    length += ref.size();
    ++n;
  }
  if (n == 0) throw ContractError(ref_path + ": no references");
  json j = {{"cer", static_cast<double>(edits) / static_cast<double>(length)},
            {"edits", edits},
            {"ref_tokens", length},
            {"utterances", n}};
  std::cout << j.dump() << "\n";
  fs::create_directories(c.out);
  write_file_atomic(c.path("score.json"), j.dump(2) + "\n");
  c.write_manifest("score");
}

void cmd_report(Common& c, const std::vector<std::string>& runs) {
  c.finish_settings();
  std::vector<RunStream> streams;
  for (const auto& dir : runs) {
    const std::string metrics = (fs::path(dir) / "metrics.jsonl").string();
    c.inputs.push_back(metrics);
    RunStream s;
    s.run = fs::path(dir).lexically_normal().filename().string();
    if (s.run.empty()) s.run = dir;
    s.records = parse_metrics(read_file(metrics), metrics);
    const fs::path manifest = fs::path(dir) / "manifest.json";
    if (fs::exists(manifest)) {
      const json m = json::parse(read_file(manifest.string()));
      s.group = m["config"].value("group", "");
      s.corpus = m["config"].value("corpus", "");
    }
    streams.push_back(std::move(s));
  }
  const ReportTables t = emit_report(streams);
  fs::create_directories(c.out);
  write_file_atomic(c.path("cloze_table.csv"), t.cloze_table);
  write_file_atomic(c.path("cer_table.csv"), t.cer_table);
  write_file_atomic(c.path("curves.csv"), t.curves);
  std::cout << t.cloze_table << t.cer_table;
  c.write_manifest("report");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cloze-completer teachers and distilled seq2seq students"};
  app.require_subcommand(1);
  Common c;
  auto common = [&c](CLI::App* sub) {
    sub->add_option("--seed", c.seed, "Random seed");
    sub->add_option("--config", c.config_path, "key=value settings file")->check(CLI::ExistingFile);
    sub->add_option("--out", c.out, "Output directory");
  };

  std::string model, corpus, val, vocab, teacher, data, ref, hyp;
  std::size_t max_len = 12;
  std::vector<std::string> runs;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus or speech set");
  common(gen);
  auto* tcor = app.add_subcommand("train-cor", "Train a cloze completer");
  common(tcor);
  tcor->add_option("--corpus", corpus, "Training corpus")->required()->check(CLI::ExistingFile);
  tcor->add_option("--val", val, "Validation corpus")->required()->check(CLI::ExistingFile);
  tcor->add_option("--vocab", vocab, "Vocabulary file")->check(CLI::ExistingFile);
  auto* ecl = app.add_subcommand("eval-cloze", "Cloze accuracy of a trained model");
  common(ecl);
  ecl->add_option("--model", model, "COR checkpoint")->required()->check(CLI::ExistingFile);
  ecl->add_option("--corpus", corpus, "Evaluation corpus")->required()->check(CLI::ExistingFile);
  auto* probe = app.add_subcommand("probe-leak", "Per-position input sensitivities");
  common(probe);
  probe->add_option("--model", model, "COR checkpoint")->required()->check(CLI::ExistingFile);
  probe->add_option("--max-len", max_len, "Input length");
  auto* tstu = app.add_subcommand("train-student", "Train a seq2seq recognizer");
  common(tstu);
  tstu->add_option("--train", data, "Training speech directory")->required()->check(CLI::ExistingDirectory);
  tstu->add_option("--val", val, "Validation speech directory")->required()->check(CLI::ExistingDirectory);
  tstu->add_option("--teacher", teacher, "COR checkpoint (lst mode)")->check(CLI::ExistingFile);
  tstu->add_option("--vocab", vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  auto* dec = app.add_subcommand("decode", "Beam-search transcription");
  common(dec);
  dec->add_option("--model", model, "Student checkpoint")->required()->check(CLI::ExistingFile);
  dec->add_option("--data", data, "Speech directory")->required()->check(CLI::ExistingDirectory);
  auto* score = app.add_subcommand("score", "Character error rate of hypotheses");
  common(score);
  score->add_option("--ref", ref, "Reference transcripts")->required()->check(CLI::ExistingFile);
  score->add_option("--hyp", hyp, "Hypotheses")->required()->check(CLI::ExistingFile);
  auto* rep = app.add_subcommand("report", "Tables and curves from metric streams");
  common(rep);
  rep->add_option("--runs", runs, "Run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    c.load();
    if (*gen) cmd_gen_data(c);
    else if (*tcor) cmd_train_cor(c, corpus, val, vocab);
    else if (*ecl) return cmd_eval_cloze(c, model, corpus);
    else if (*probe) return cmd_probe_leak(c, model, max_len);
    else if (*tstu) cmd_train_student(c, data, val, teacher, vocab);
    else if (*dec) cmd_decode(c, model, data);
    else if (*score) cmd_score(c, ref, hyp);
    else if (*rep) cmd_report(c, runs);
    return 0;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
