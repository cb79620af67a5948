#include "cloze/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace cloze {

TokenizeMode parse_tokenize_mode(const std::string& text) {
  if (text == "char" || text == "character") return TokenizeMode::character;
  if (text == "word" || text == "whitespace") return TokenizeMode::whitespace;
  throw ContractError("tokenize mode must be 'character' or 'whitespace', got '" + text + "'");
}

std::vector<std::string> tokenize(std::string_view line, TokenizeMode mode) {
  std::vector<std::string> out;
  if (mode == TokenizeMode::whitespace) {
    std::istringstream in{std::string(line)};
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
  }
  for (std::size_t i = 0; i < line.size();) {
    const auto lead = static_cast<unsigned char>(line[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    if (i + len > line.size()) throw ContractError("tokenize: truncated UTF-8 sequence");
    std::string ch(line.substr(i, len));
    i += len;
    if (ch == " " || ch == "\t" || ch == "\r") continue;
    out.push_back(std::move(ch));
  }
  return out;
}

Vocabulary::Vocabulary() {
  add("<unk>");
  add("<sos>");
  add("<eos>");
}

TokenId Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, tokens_.size());
  if (!inserted) throw ContractError("vocabulary: duplicate token '" + token + "'");
  tokens_.push_back(token);
  return it->second;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (const auto& t : tokens) v.add(t);
  return v;
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk : it->second;
}

Sequence Vocabulary::encode(std::string_view line, TokenizeMode mode) const {
  Sequence s{sos};
  for (const auto& t : tokenize(line, mode)) s.push_back(id(t));
  s.push_back(eos);
  return s;
}

std::string Vocabulary::decode(std::span<const TokenId> seq, TokenizeMode mode) const {
  std::string out;
  bool first = true;
  for (TokenId id : seq) {
    if (id == sos || id == eos) continue;
    if (mode == TokenizeMode::whitespace && !first) out += ' ';
    out += token(id);
    first = false;
  }
  return out;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& t : tokens_) out += t + "\n";
  return out;
}

Vocabulary Vocabulary::deserialize(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.size() < reserved_count || lines[0] != "<unk>" || lines[1] != "<sos>" ||
      lines[2] != "<eos>")
    throw ContractError("vocabulary file must start with <unk>, <sos>, <eos>");
  lines.erase(lines.begin(), lines.begin() + reserved_count);
  return from_tokens(lines);
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot write vocabulary " + path);
  out << serialize();
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot read vocabulary " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

Vocabulary build_vocab(std::string_view text, std::size_t min_count, TokenizeMode mode) {
  std::map<std::string, std::size_t> counts;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line))
    for (auto& t : tokenize(line, mode)) ++counts[t];
  if (counts.empty()) throw ContractError("build_vocab: empty input");

  std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
  // Byte order of UTF-8 strings is code point order.
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> kept;
  for (const auto& [tok, n] : items)
    if (n >= min_count) kept.push_back(tok);
  return Vocabulary::from_tokens(kept);
}

void Corpus::validate(std::size_t vocab_size) const {
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& s = sequences[i];
    if (s.size() < 3) throw ContractError("corpus: sequence " + std::to_string(i) + " is empty");
    for (TokenId t : s)
      if (t >= vocab_size)
        throw ContractError("corpus: index " + std::to_string(t) + " outside vocabulary");
  }
}

Corpus encode_corpus(std::string_view text, const Vocabulary& vocab, TokenizeMode mode,
                     std::string source) {
  Corpus c;
  c.source = std::move(source);
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (tokenize(line, mode).empty()) continue;
    c.sequences.push_back(vocab.encode(line, mode));
  }
  return c;
}

std::string corpus_text(const Corpus& corpus, const Vocabulary& vocab, TokenizeMode mode) {
  std::string out;
  for (const auto& s : corpus.sequences) out += vocab.decode(s, mode) + "\n";
  return out;
}

Vocabulary symbol_vocabulary(std::size_t span) {
  static const char* kSymbols = "0123456789abcdefghijklmnopqrstuvwxyz";
  if (span < 1 || span > 36) throw ContractError("symbol vocabulary span must be in 1..36");
  std::vector<std::string> toks;
  for (std::size_t i = 0; i < span; ++i) toks.emplace_back(1, kSymbols[i]);
  return Vocabulary::from_tokens(toks);
}

namespace {

TokenId symbol_id(std::size_t value) { return Vocabulary::reserved_count + value; }

Rng stream(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  return Rng(seq);
}

}  // namespace

Corpus gen_center_sum(const SyntheticSpec& spec) {
  if (spec.length % 2 == 0 || spec.length == 0)
    throw ContractError("center_sum: interior length must be odd");
  const std::size_t span = spec.vocab_span;
  Rng rng = stream(spec.seed, 1);
  std::uniform_int_distribution<std::size_t> digit(0, span - 1);
  Corpus c;
  c.source = "center_sum span=" + std::to_string(span) + " length=" + std::to_string(spec.length) +
             " seed=" + std::to_string(spec.seed);
  c.sequences.reserve(spec.count);
  std::vector<std::size_t> x(spec.length + 1);
  for (std::size_t n = 0; n < spec.count; ++n) {
    for (std::size_t t = 1; t <= spec.length; t += 2) x[t] = digit(rng);
    for (std::size_t t = 2; t < spec.length; t += 2) x[t] = (x[t - 1] + x[t + 1]) % span;
    Sequence s{Vocabulary::sos};
    for (std::size_t t = 1; t <= spec.length; ++t) s.push_back(symbol_id(x[t]));
    s.push_back(Vocabulary::eos);
    c.sequences.push_back(std::move(s));
  }
  return c;
}

namespace {

struct Chain {
  std::vector<std::vector<std::size_t>> next;
  std::vector<std::discrete_distribution<std::size_t>> pick;

  void add(std::vector<std::size_t> successors, Rng& rng) {
    std::vector<double> w(successors.size());
    for (auto& v : w) v = std::uniform_real_distribution<double>(0.2, 1.0)(rng);
    next.push_back(std::move(successors));
    pick.emplace_back(w.begin(), w.end());
  }

  Corpus sample(const SyntheticSpec& spec, const std::string& source) {
    Rng rng = stream(spec.seed, 5);
    std::uniform_int_distribution<std::size_t> first(0, next.size() - 1);
    Corpus c;
    c.source = source;
    c.sequences.reserve(spec.count);
    for (std::size_t n = 0; n < spec.count; ++n) {
      Sequence s{Vocabulary::sos};
      std::size_t cur = first(rng);
      for (std::size_t t = 0; t < spec.length; ++t) {
        s.push_back(symbol_id(cur));
        cur = next[cur][pick[cur](rng)];
      }
      s.push_back(Vocabulary::eos);
      c.sequences.push_back(std::move(s));
    }
    return c;
  }
};

Rng grammar_stream(const SyntheticSpec& spec) {
  return stream(spec.grammar_seed ? spec.grammar_seed : spec.seed, 2);
}

}  // namespace

Corpus gen_markov(const SyntheticSpec& spec) {
  const std::size_t span = spec.vocab_span;
  if (spec.branching < 1 || spec.branching > span)
    throw ContractError("markov: branching must be in 1..span");
  Rng rng = grammar_stream(spec);
  Chain chain;
  for (std::size_t a = 0; a < span; ++a) {
    std::vector<std::size_t> all(span);
    for (std::size_t i = 0; i < span; ++i) all[i] = i;
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(spec.branching);
    chain.add(std::move(all), rng);
  }
  return chain.sample(spec, "markov span=" + std::to_string(span) + " seed=" + std::to_string(spec.seed));
}

Corpus gen_homophone_language(const SyntheticSpec& spec) {
  const std::size_t span = spec.vocab_span;
  // Units: homophone pairs and the remaining single symbols.
  std::vector<std::vector<std::size_t>> units;
  std::vector<std::size_t> unit_of(span, span);
  for (const auto& [a, b] : spec.homophones) {
    if (a >= span || b >= span || a == b || unit_of[a] != span || unit_of[b] != span)
      throw ContractError("homophone language: invalid pair");
    unit_of[a] = unit_of[b] = units.size();
    units.push_back({a, b});
  }
  for (std::size_t a = 0; a < span; ++a)
    if (unit_of[a] == span) {
      unit_of[a] = units.size();
      units.push_back({a});
    }
  if (spec.branching < 1 || 2 * spec.branching > units.size())
    throw ContractError("homophone language: branching must be in 1..units/2");

  Rng rng = grammar_stream(spec);
  std::vector<std::vector<std::size_t>> successor_units(span);
  for (const auto& unit : units) {
    std::vector<std::size_t> order(units.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    // Partners draw disjoint successor units, so the next token tells them apart.
    for (std::size_t m = 0; m < unit.size(); ++m)
      successor_units[unit[m]].assign(order.begin() + m * spec.branching,
                                      order.begin() + (m + 1) * spec.branching);
  }
  Chain chain;
  for (std::size_t a = 0; a < span; ++a) {
    std::vector<std::size_t> successors;
    for (std::size_t u : successor_units[a]) successors.insert(successors.end(), units[u].begin(), units[u].end());
    chain.add(std::move(successors), rng);
  }
  return chain.sample(spec, "homophone_language span=" + std::to_string(span) +
                                " seed=" + std::to_string(spec.seed));
}

namespace {

Corpus gen_fresh(const SyntheticSpec& spec) {
  switch (spec.kind) {
    case GeneratorKind::markov:
      return gen_markov(spec);
    case GeneratorKind::center_sum:
      return gen_center_sum(spec);
    case GeneratorKind::homophone_speech:
      return gen_homophone_language(spec);
  }
  throw ContractError("unknown generator kind");
}

}  // namespace

Corpus gen_sentences(const SyntheticSpec& spec) {
  if (spec.sentence_pool == 0) return gen_fresh(spec);
  SyntheticSpec pool_spec = spec;
  pool_spec.count = spec.sentence_pool;
  const Corpus pool = gen_fresh(pool_spec);
  Rng rng = stream(spec.seed, 6);
  std::uniform_int_distribution<std::size_t> pick(0, pool.sequences.size() - 1);
  Corpus c;
  c.source = pool.source + " pool=" + std::to_string(spec.sentence_pool);
  c.sequences.reserve(spec.count);
  for (std::size_t n = 0; n < spec.count; ++n) c.sequences.push_back(pool.sequences[pick(rng)]);
  return c;
}

std::vector<Sequence> augment_replace(const std::vector<Sequence>& batch, std::size_t vocab_size,
                                      double token_fraction, double sequence_fraction, Rng& rng) {
  if (!(token_fraction >= 0.0 && token_fraction <= 1.0 && sequence_fraction >= 0.0 &&
        sequence_fraction <= 1.0))
    throw ContractError("augment_replace: fractions must lie in [0,1]");
  if (vocab_size <= Vocabulary::reserved_count)
    throw ContractError("augment_replace: no replaceable tokens");
  std::vector<Sequence> out = batch;
  if (token_fraction == 0.0 || sequence_fraction == 0.0) return out;
  std::bernoulli_distribution select(sequence_fraction), replace(token_fraction);
  std::uniform_int_distribution<TokenId> draw(Vocabulary::reserved_count, vocab_size - 1);
  for (auto& s : out) {
    if (!select(rng)) continue;
    for (auto& t : s)
      if (t >= Vocabulary::reserved_count && replace(rng)) t = draw(rng);
  }
  return out;
}

std::vector<Tensor> speech_prototypes(const SyntheticSpec& spec, std::size_t vocab_size) {
  Rng rng = stream(spec.voice_seed ? spec.voice_seed : spec.seed, 3);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<Tensor> protos(vocab_size);
  for (TokenId id = Vocabulary::reserved_count; id < vocab_size; ++id) {
    protos[id] = Tensor({spec.frames_per_token, spec.feat_dim});
    for (auto& v : protos[id].values) v = n01(rng);
  }
  for (const auto& [a, b] : spec.homophones) {
    const TokenId ia = symbol_id(a), ib = symbol_id(b);
    if (ia >= vocab_size || ib >= vocab_size || ia == ib)
      throw ContractError("homophone pair outside the vocabulary");
    protos[ib] = protos[ia];
  }
  return protos;
}

std::vector<Utterance> render_speech(const Corpus& corpus, const SyntheticSpec& spec,
                                     std::size_t vocab_size) {
  if (spec.frames_per_token < 1 || spec.feat_dim < 1)
    throw ContractError("render_speech: frames_per_token and feat_dim must be >= 1");
  const auto protos = speech_prototypes(spec, vocab_size);
  Rng rng = stream(spec.seed, 4);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0 ? spec.noise_sigma : 1.0);
  const std::size_t r = spec.frames_per_token, f = spec.feat_dim;
  std::vector<Utterance> out;
  out.reserve(corpus.sequences.size());
  for (std::size_t u = 0; u < corpus.sequences.size(); ++u) {
    const auto& s = corpus.sequences[u];
    std::vector<TokenId> spoken;
    for (TokenId t : s)
      if (t >= Vocabulary::reserved_count) spoken.push_back(t);
    if (spoken.empty()) throw ContractError("render_speech: utterance without tokens");
    Tensor frames({spoken.size() * r, f});
    for (std::size_t i = 0; i < spoken.size(); ++i) {
      const Tensor& p = protos.at(spoken[i]);
      for (std::size_t k = 0; k < r * f; ++k) {
        double v = p.values[k];
        if (spec.noise_sigma > 0) v += noise(rng);
        frames.values[i * r * f + k] = v;
      }
    }
    char id[32];
    std::snprintf(id, sizeof id, "utt%06zu", u);
    out.push_back(Utterance{id, AcousticFeatures{std::move(frames)}, s});
  }
  return out;
}

Sequence nearest_prototype_decode(const AcousticFeatures& features,
                                  const std::vector<Tensor>& prototypes) {
  std::size_t r = 0;
  for (const auto& p : prototypes)
    if (!p.empty()) r = p.rows();
  if (r == 0) throw ContractError("nearest_prototype_decode: no prototypes");
  const Tensor& fr = features.frames;
  const std::size_t f = fr.cols();
  Sequence out{Vocabulary::sos};
  for (std::size_t start = 0; start + r <= fr.rows(); start += r) {
    TokenId best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (TokenId id = 0; id < prototypes.size(); ++id) {
      if (prototypes[id].empty()) continue;
      double d = 0.0;
      for (std::size_t k = 0; k < r * f; ++k) {
        const double e = fr.values[start * f + k] - prototypes[id].values[k];
        d += e * e;
      }
      if (d < best_d) {
        best_d = d;
        best = id;
      }
    }
    out.push_back(best);
  }
  out.push_back(Vocabulary::eos);
  return out;
}

}  // namespace cloze
