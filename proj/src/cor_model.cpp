#include "cloze/cor_model.hpp"

#include <sstream>

#include "cloze/config.hpp"

namespace cloze {

void CorConfig::validate() const {
  if (vocab_size < 4) throw ContractError("COR: vocab_size must be >= 4");
  if (model_dim == 0 || heads == 0 || model_dim % heads != 0)
    throw ContractError("COR: model_dim must be divisible by heads");
  if (stack_depth < 1 || fusion_depth < 1) throw ContractError("COR: depths must be >= 1");
  if (inner_dim == 0 || max_len < 1) throw ContractError("COR: inner_dim and max_len must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ContractError("COR: dropout in [0,1)");
}

std::string CorConfig::fingerprint() const {
  std::ostringstream os;
  os << "kind=cor variant=" << (variant == CorVariant::cor ? "cor" : "unicor")
     << " vocab_size=" << vocab_size << " model_dim=" << model_dim << " heads=" << heads
     << " inner_dim=" << inner_dim << " stack_depth=" << stack_depth
     << " fusion_depth=" << fusion_depth << " max_len=" << max_len;
  return os.str();
}

CorConfig CorConfig::from_fingerprint(const std::string& fp) {
  KeyValues kv = parse_key_values_inline(fp);
  if (kv.get_string("kind", "") != "cor") throw ContractError("not a COR fingerprint: " + fp);
  CorConfig c;
  c.variant = kv.get_string("variant", "cor") == "unicor" ? CorVariant::unicor : CorVariant::cor;
  c.vocab_size = kv.get_size("vocab_size", c.vocab_size);
  c.model_dim = kv.get_size("model_dim", c.model_dim);
  c.heads = kv.get_size("heads", c.heads);
  c.inner_dim = kv.get_size("inner_dim", c.inner_dim);
  c.stack_depth = kv.get_size("stack_depth", c.stack_depth);
  c.fusion_depth = kv.get_size("fusion_depth", c.fusion_depth);
  c.max_len = kv.get_size("max_len", c.max_len);
  c.validate();
  return c;
}

CorModel::CorModel(CorConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.model_dim;
  embedding_ = &store_.add("embedding", {config_.vocab_size, d});
  for (auto& v : embedding_->value.values) v = std::uniform_real_distribution<double>(-1, 1)(rng);

  for (std::size_t i = 0; i < config_.stack_depth; ++i)
    forward_stack_.push_back(TransformerBlock::create(store_, "forward." + std::to_string(i), d,
                                                      config_.heads, config_.inner_dim, 1, rng));
  if (config_.variant == CorVariant::cor) {
    for (std::size_t i = 0; i < config_.stack_depth; ++i) {
      backward_stack_.push_back(TransformerBlock::create(
          store_, "backward." + std::to_string(i), d, config_.heads, config_.inner_dim, 1, rng));
    }
    // Fusion output t reads backward position t+1, so that position must not
    // see x_{t+1}: the first block takes queries and residual from positions only.
    fusion_input_ = Linear::create(store_, "fusion.input", 2 * d, d, true, rng);
    for (std::size_t i = 0; i < config_.fusion_depth; ++i)
      fusion_blocks_.push_back(TransformerBlock::create(store_, "fusion." + std::to_string(i), d,
                                                        config_.heads, config_.inner_dim, 2, rng));
  }
  output_ = Linear::create(store_, "output", d, config_.vocab_size, true, rng);
}

namespace {

Tensor position_rows(std::span<const RowSpan> spans, std::size_t d) {
  std::size_t longest = 0, rows = 0;
  for (const auto& s : spans) {
    longest = std::max(longest, s.length);
    rows = std::max(rows, s.offset + s.length);
  }
  const Tensor pe = sinusoidal_positions(longest, d);
  Tensor pos({rows, d});
  for (const auto& s : spans)
    std::copy_n(pe.values.data(), s.length * d, pos.values.data() + s.offset * d);
  return pos;
}

}  // namespace

Var CorModel::embed(Graph& g, const PackedBatch& inputs) const {
  std::size_t longest = 0;
  for (const auto& s : inputs.spans) longest = std::max(longest, s.length);
  if (longest > config_.max_len)
    throw ContractError("COR: sequence of " + std::to_string(longest) + " inputs exceeds max_len " +
                        std::to_string(config_.max_len));
  Var tok = embedding(g, g.param(*embedding_), inputs.tokens);
  return add(g, tok, g.input(position_rows(inputs.spans, config_.model_dim)));
}

Var CorModel::forward_embedded(Graph& g, Var embedded, std::span<const RowSpan> spans,
                               const ForwardContext& ctx) const {
  ForwardContext block_ctx = ctx;
  block_ctx.dropout_rate = config_.dropout_rate;

  const auto fwd_segs = self_segments(spans, 1, build_forward_mask);
  Var fwd = embedded;
  for (const auto& block : forward_stack_) {
    Var banks[] = {fwd};
    fwd = block(g, fwd, banks, fwd_segs, block_ctx);
  }
  if (config_.variant == CorVariant::unicor) return output_(g, fwd);

  const auto bwd_segs = self_segments(spans, 1, build_backward_mask);
  Var bwd = embedded;
  for (std::size_t i = 0; i < backward_stack_.size(); ++i) {
    Var banks[] = {bwd};
    const Var query = i == 0 ? g.input(position_rows(spans, config_.model_dim)) : bwd;
    bwd = backward_stack_[i](g, query, banks, bwd_segs, block_ctx);
  }

  const auto fusion_segs = self_segments(spans, 2, build_fusion_mask);
  Var fused = fusion_input_(g, concat_cols(g, fwd, bwd));
  for (const auto& block : fusion_blocks_) {
    Var banks[] = {fwd, bwd};
    fused = block(g, fused, banks, fusion_segs, block_ctx);
  }
  return output_(g, fused);
}

Var CorModel::forward(Graph& g, const PackedBatch& inputs, const ForwardContext& ctx) const {
  return forward_embedded(g, embed(g, inputs), inputs.spans, ctx);
}

Tensor CorModel::logits(const Sequence& framed, Precision precision) const {
  if (framed.size() < 2) throw ContractError("COR: sequence needs T >= 2");
  PackedBatch batch;
  batch.append(std::span<const TokenId>(framed.data(), framed.size() - 1));
  Graph g(ComputeConfig{precision, false, 0});
  return g.value(forward(g, batch));
}

StackDescription CorModel::stack(std::size_t n) const {
  return cor_stack(n, config_.stack_depth, config_.fusion_depth,
                   config_.variant == CorVariant::unicor);
}

ClozeBatch make_cloze_batch(std::span<const Sequence* const> framed) {
  ClozeBatch b;
  for (const Sequence* s : framed) {
    if (s->size() < 2) throw ContractError("cloze batch: sequence needs T >= 2");
    b.inputs.append(std::span<const TokenId>(s->data(), s->size() - 1));
    b.targets.insert(b.targets.end(), s->begin() + 1, s->end());
  }
  return b;
}

ClozeBatch make_cloze_batch(std::span<const Sequence> framed) {
  std::vector<const Sequence*> ptrs;
  for (const auto& s : framed) ptrs.push_back(&s);
  return make_cloze_batch(ptrs);
}

Tensor softmax_rows(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) throw ContractError("temperature must be > 0");
  Tensor out(logits.shape);
  const std::size_t r = logits.rows(), c = logits.cols();
  for (std::size_t i = 0; i < r; ++i)
    kernels::softmax_row(logits.values.data() + i * c, c, out.values.data() + i * c, temperature);
  return out;
}

TeacherOutput teacher_distributions(const CorModel& model, const Sequence& framed,
                                    double temperature) {
  if (!(temperature > 0.0)) throw ContractError("teacher temperature must be > 0");
  return TeacherOutput{softmax_rows(model.logits(framed), temperature)};
}

Tensor teacher_probabilities(const CorModel& model, const PackedBatch& inputs, double temperature,
                             Precision precision) {
  if (!(temperature > 0.0)) throw ContractError("teacher temperature must be > 0");
  Graph g(ComputeConfig{precision, false, 0});
  return softmax_rows(g.value(model.forward(g, inputs)), temperature);
}

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

std::string parity_class(const Sequence& framed, std::size_t index) {
  if (index + 1 == framed.size()) return "end";
  return index % 2 == 0 ? "even" : "odd";
}

namespace {

void tally(ClozeAccuracy& acc, const Sequence& framed, const Tensor& logits,
           std::size_t row_offset, const PositionClassifier& classify) {
  for (std::size_t t = 1; t < framed.size(); ++t) {
    const std::size_t pred = argmax(logits.row(row_offset + t - 1));
    const bool ok = pred == framed[t];
    auto& cls = acc.per_class[classify(framed, t)];
    ++cls.total;
    ++acc.total;
    if (ok) {
      ++cls.correct;
      ++acc.correct;
    }
  }
}

void finish(ClozeAccuracy& acc) {
  acc.accuracy = static_cast<double>(acc.correct) / static_cast<double>(acc.total);
}

}  // namespace

ClozeAccuracy cloze_accuracy(const LogitFunction& model, std::span<const Sequence> corpus,
                             const PositionClassifier& classify) {
  if (corpus.empty()) throw ContractError("cloze_accuracy: empty corpus");
  ClozeAccuracy acc;
  for (const auto& s : corpus) {
    Tensor logits = model(s);
    if (logits.rows() != s.size() - 1)
      throw ContractError("cloze_accuracy: model returned wrong number of rows");
    tally(acc, s, logits, 0, classify);
  }
  finish(acc);
  return acc;
}

ClozeAccuracy cloze_accuracy(const CorModel& model, std::span<const Sequence> corpus,
                             const PositionClassifier& classify, Precision precision) {
  if (corpus.empty()) throw ContractError("cloze_accuracy: empty corpus");
  ClozeAccuracy acc;
  constexpr std::size_t kBatch = 64;
  for (std::size_t begin = 0; begin < corpus.size(); begin += kBatch) {
    const std::size_t end = std::min(corpus.size(), begin + kBatch);
    ClozeBatch batch = make_cloze_batch(corpus.subspan(begin, end - begin));
    Graph g(ComputeConfig{precision, false, 0});
    const Tensor& logits = g.value(model.forward(g, batch.inputs));
    for (std::size_t i = begin; i < end; ++i)
      tally(acc, corpus[i], logits, batch.inputs.spans[i - begin].offset, classify);
  }
  finish(acc);
  return acc;
}

}  // namespace cloze
