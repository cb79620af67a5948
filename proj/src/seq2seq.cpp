#include "cloze/seq2seq.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "cloze/config.hpp"
#include "cloze/cor_model.hpp"

namespace cloze {

void S2SConfig::validate() const {
  if (feat_dim == 0) throw ContractError("S2S: feat_dim must be >= 1");
  if (vocab_size < 4) throw ContractError("S2S: vocab_size must be >= 4");
  if (model_dim == 0 || heads == 0 || model_dim % heads != 0)
    throw ContractError("S2S: model_dim must be divisible by heads");
  if (encoder_depth < 1 || decoder_depth < 1) throw ContractError("S2S: depths must be >= 1");
  if (inner_dim == 0 || max_len < 1 || max_decode_len < 1)
    throw ContractError("S2S: inner_dim, max_len and max_decode_len must be >= 1");
  if (beam_width < 1) throw ContractError("S2S: beam_width must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ContractError("S2S: dropout in [0,1)");
}

std::string S2SConfig::fingerprint() const {
  std::ostringstream os;
  os << "kind=s2s feat_dim=" << feat_dim << " vocab_size=" << vocab_size
     << " model_dim=" << model_dim << " encoder_depth=" << encoder_depth
     << " decoder_depth=" << decoder_depth << " heads=" << heads << " inner_dim=" << inner_dim
     << " max_len=" << max_len;
  return os.str();
}

S2SConfig S2SConfig::from_fingerprint(const std::string& fp) {
  KeyValues kv = parse_key_values_inline(fp);
  if (kv.get_string("kind", "") != "s2s") throw ContractError("not a seq2seq fingerprint: " + fp);
  S2SConfig c;
  c.feat_dim = kv.get_size("feat_dim", c.feat_dim);
  c.vocab_size = kv.get_size("vocab_size", c.vocab_size);
  c.model_dim = kv.get_size("model_dim", c.model_dim);
  c.encoder_depth = kv.get_size("encoder_depth", c.encoder_depth);
  c.decoder_depth = kv.get_size("decoder_depth", c.decoder_depth);
  c.heads = kv.get_size("heads", c.heads);
  c.inner_dim = kv.get_size("inner_dim", c.inner_dim);
  c.max_len = kv.get_size("max_len", c.max_len);
  c.validate();
  return c;
}

S2SModel::S2SModel(S2SConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.model_dim;
  input_ = Linear::create(store_, "encoder.input", config_.feat_dim, d, true, rng);
  for (std::size_t i = 0; i < config_.encoder_depth; ++i)
    encoder_.push_back(TransformerBlock::create(store_, "encoder." + std::to_string(i), d,
                                                config_.heads, config_.inner_dim, 1, rng));
  embedding_ = &store_.add("decoder.embedding", {config_.vocab_size, d});
  for (auto& v : embedding_->value.values) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  for (std::size_t i = 0; i < config_.decoder_depth; ++i)
    decoder_.push_back(DecoderBlock::create(store_, "decoder." + std::to_string(i), d,
                                            config_.heads, config_.inner_dim, rng));
  output_ = Linear::create(store_, "output", d, config_.vocab_size, true, rng);
}

namespace {

Tensor packed_positions(std::span<const RowSpan> spans, std::size_t rows, std::size_t dim) {
  std::size_t longest = 0;
  for (const auto& s : spans) longest = std::max(longest, s.length);
  const Tensor pe = sinusoidal_positions(longest, dim);
  Tensor pos({rows, dim});
  for (const auto& s : spans)
    std::copy_n(pe.values.data(), s.length * dim, pos.values.data() + s.offset * dim);
  return pos;
}

}  // namespace

Var S2SModel::encode(Graph& g, std::span<const AcousticFeatures* const> features,
                     std::vector<RowSpan>& spans, const ForwardContext& ctx) const {
  if (features.empty()) throw ContractError("S2S: no utterances");
  const std::size_t f = config_.feat_dim;
  std::size_t rows = 0;
  spans.clear();
  for (const auto* a : features) {
    const Tensor& fr = a->frames;
    if (fr.empty() || fr.rank() != 2 || fr.rows() == 0)
      throw ContractError("S2S: utterance without frames");
    if (fr.cols() != f)
      throw ContractError("S2S: frames have " + std::to_string(fr.cols()) + " features, expected " +
                          std::to_string(f));
    if (fr.rows() > config_.max_len) throw ContractError("S2S: utterance exceeds max_len frames");
    if (!fr.all_finite()) throw NumericError("S2S: non-finite acoustic features");
    spans.push_back({rows, fr.rows()});
    rows += fr.rows();
  }
  Tensor packed({rows, f});
  for (std::size_t i = 0; i < features.size(); ++i)
    std::copy(features[i]->frames.values.begin(), features[i]->frames.values.end(),
              packed.values.begin() + spans[i].offset * f);

  ForwardContext block_ctx = ctx;
  block_ctx.dropout_rate = config_.dropout_rate;
  Var x = add(g, input_(g, g.input(std::move(packed))),
              g.input(packed_positions(spans, rows, config_.model_dim)));
  const auto segs = self_segments(spans, 1, [](std::size_t n) { return build_full_mask(n, n); });
  for (const auto& block : encoder_) {
    Var banks[] = {x};
    x = block(g, x, banks, segs, block_ctx);
  }
  return x;
}

Var S2SModel::decode_logits(Graph& g, Var memory, std::span<const RowSpan> memory_spans,
                            const PackedBatch& prefixes, const ForwardContext& ctx) const {
  if (prefixes.spans.size() != memory_spans.size())
    throw ContractError("S2S: one memory span per prefix required");
  for (const auto& s : prefixes.spans) {
    if (prefixes.tokens[s.offset] != Vocabulary::sos)
      throw ContractError("S2S: decoder prefix must start with <sos>");
    if (s.length > config_.max_len) throw ContractError("S2S: prefix exceeds max_len");
  }
  for (TokenId t : prefixes.tokens)
    if (t >= config_.vocab_size) throw ContractError("S2S: token outside vocabulary");

  ForwardContext block_ctx = ctx;
  block_ctx.dropout_rate = config_.dropout_rate;
  Var y = add(g, embedding(g, g.param(*embedding_), prefixes.tokens),
              g.input(packed_positions(prefixes.spans, prefixes.rows(), config_.model_dim)));
  const auto self_segs = self_segments(prefixes.spans, 1, build_forward_mask);

  std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const AttentionMask>> cache;
  std::vector<AttentionSegment> cross;
  cross.reserve(prefixes.spans.size());
  for (std::size_t i = 0; i < prefixes.spans.size(); ++i) {
    const auto key = std::make_pair(prefixes.spans[i].length, memory_spans[i].length);
    auto& mask = cache[key];
    if (!mask) mask = std::make_shared<const AttentionMask>(build_full_mask(key.first, key.second));
    cross.push_back(AttentionSegment{prefixes.spans[i], {memory_spans[i]}, mask});
  }
  for (const auto& block : decoder_) y = block(g, y, memory, self_segs, cross, block_ctx);
  return output_(g, y);
}

Var S2SModel::forward(Graph& g, std::span<const AcousticFeatures* const> features,
                      const PackedBatch& prefixes, const ForwardContext& ctx) const {
  std::vector<RowSpan> spans;
  Var memory = encode(g, features, spans, ctx);
  return decode_logits(g, memory, spans, prefixes, ctx);
}

Tensor S2SModel::logits(const AcousticFeatures& features, const Sequence& prefix,
                        Precision precision) const {
  Graph g(ComputeConfig{precision, false, 0});
  PackedBatch batch;
  batch.append(prefix);
  const AcousticFeatures* f[] = {&features};
  return g.value(forward(g, f, batch));
}

namespace {

void log_softmax_row(std::span<const double> z, std::vector<double>& out) {
  out.resize(z.size());
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  const double lse = m + std::log(s);
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
}

/// Encoder output for one utterance, computed once per decode.
struct Memory {
  Tensor value;
  RowSpan span;
};

Memory encode_once(const S2SModel& model, const AcousticFeatures& features, Precision precision) {
  Graph g(ComputeConfig{precision, false, 0});
  std::vector<RowSpan> spans;
  const AcousticFeatures* f[] = {&features};
  Memory m;
  m.value = g.value(model.encode(g, f, spans));
  m.span = spans[0];
  return m;
}

/// Log-probabilities of the next token after each prefix.
std::vector<std::vector<double>> next_log_probs(const S2SModel& model, const Memory& memory,
                                                const std::vector<Sequence>& prefixes,
                                                Precision precision) {
  Graph g(ComputeConfig{precision, false, 0});
  PackedBatch batch;
  for (const auto& p : prefixes) batch.append(p);
  std::vector<RowSpan> mem_spans(prefixes.size(), memory.span);
  const Tensor& logits = g.value(model.decode_logits(g, g.input(memory.value), mem_spans, batch));
  if (!logits.all_finite()) throw NumericError("decode: non-finite logits");
  std::vector<std::vector<double>> out(prefixes.size());
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    const auto& s = batch.spans[i];
    log_softmax_row(logits.row(s.offset + s.length - 1), out[i]);
  }
  return out;
}

void finalize(Hypothesis& h) {
  const std::size_t generated = h.tokens.size() - 1;
  h.normalized = generated ? h.score / static_cast<double>(generated) : h.score;
}

}  // namespace

Hypothesis greedy_decode(const S2SModel& model, const AcousticFeatures& features,
                         Precision precision) {
  const Memory memory = encode_once(model, features, precision);
  Hypothesis h;
  h.tokens = {Vocabulary::sos};
  h.truncated = true;
  for (std::size_t step = 0; step < model.config().max_decode_len; ++step) {
    const auto lp = next_log_probs(model, memory, {h.tokens}, precision);
    const std::size_t best = argmax(lp[0]);
    h.score += lp[0][best];
    h.tokens.push_back(best);
    if (best == Vocabulary::eos) {
      h.truncated = false;
      break;
    }
  }
  finalize(h);
  return h;
}

Hypothesis decode(const S2SModel& model, const AcousticFeatures& features, std::size_t beam_width,
                  Precision precision) {
  if (beam_width < 1) throw ContractError("decode: beam_width must be >= 1");
  const Memory memory = encode_once(model, features, precision);

  struct Candidate {
    double score;
    std::size_t beam;
    TokenId token;
  };
  std::vector<Hypothesis> alive(1);
  alive[0].tokens = {Vocabulary::sos};
  std::vector<Hypothesis> finished;

  for (std::size_t step = 0; step < model.config().max_decode_len && !alive.empty(); ++step) {
    std::vector<Sequence> prefixes;
    for (const auto& h : alive) prefixes.push_back(h.tokens);
    const auto lp = next_log_probs(model, memory, prefixes, precision);

    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < alive.size(); ++b)
      for (TokenId k = 0; k < lp[b].size(); ++k) cands.push_back({alive[b].score + lp[b][k], b, k});
    const std::size_t keep = std::min(beam_width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.beam != b.beam) return a.beam < b.beam;
                        return a.token < b.token;
                      });

    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      Hypothesis h;
      h.tokens = alive[cands[i].beam].tokens;
      h.tokens.push_back(cands[i].token);
      h.score = cands[i].score;
      finalize(h);
      if (cands[i].token == Vocabulary::eos) finished.push_back(std::move(h));
      else next.push_back(std::move(h));
    }
    alive = std::move(next);
    if (finished.size() >= beam_width) break;
  }

  auto best_of = [](const std::vector<Hypothesis>& hs) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < hs.size(); ++i)
      if (hs[i].normalized > hs[best].normalized) best = i;
    return hs[best];
  };
  if (!finished.empty()) return best_of(finished);
  Hypothesis h = best_of(alive);
  h.truncated = true;
  return h;
}

std::size_t edit_distance(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1])});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Sequence strip_framing(std::span<const TokenId> seq) {
  Sequence out;
  for (TokenId t : seq)
    if (t != Vocabulary::sos && t != Vocabulary::eos) out.push_back(t);
  return out;
}

double cer(std::span<const TokenId> reference, std::span<const TokenId> hypothesis) {
  const Sequence ref = strip_framing(reference), hyp = strip_framing(hypothesis);
  if (ref.empty()) throw ContractError("cer: empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

std::string format_hypothesis(const std::string& utt_id, const Sequence& tokens,
                              const Vocabulary& vocab) {
  std::string line = utt_id + "\t";
  bool first = true;
  for (TokenId t : strip_framing(tokens)) {
    if (!first) line += ' ';
    line += vocab.token(t);
    first = false;
  }
  return line;
}

}  // namespace cloze
