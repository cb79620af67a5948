#include "cloze/layers.hpp"

#include <cmath>
#include <map>

namespace cloze {

void PackedBatch::append(std::span<const TokenId> seq) {
  if (seq.empty()) throw ContractError("PackedBatch: empty sequence");
  spans.push_back({tokens.size(), seq.size()});
  tokens.insert(tokens.end(), seq.begin(), seq.end());
}

Var dropout(Graph& g, Var x, const ForwardContext& ctx) {
  if (ctx.rng == nullptr || ctx.dropout_rate <= 0.0) return x;
  if (ctx.dropout_rate >= 1.0) throw ContractError("dropout rate must be < 1");
  const Tensor& xv = g.value(x);
  Tensor mask(xv.shape);
  std::bernoulli_distribution keep(1.0 - ctx.dropout_rate);
  const double s = 1.0 / (1.0 - ctx.dropout_rate);
  for (auto& m : mask.values) m = keep(*ctx.rng) ? s : 0.0;
  return mul(g, x, g.input(std::move(mask)));
}

void init_fan_in(Parameter& p, std::size_t fan_in, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-a, a);
  for (auto& v : p.value.values) v = u(rng);
}

Tensor sinusoidal_positions(std::size_t n, std::size_t dim) {
  Tensor pe({n, dim});
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < dim; ++c) {
      const double i2 = static_cast<double>(c - c % 2);
      const double arg = static_cast<double>(p) / std::pow(10000.0, i2 / static_cast<double>(dim));
      pe.values[p * dim + c] = (c % 2 == 0) ? std::sin(arg) : std::cos(arg);
    }
  return pe;
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, bool with_bias, Rng& rng) {
  Linear l;
  l.weight = &store.add(name + ".w", {in, out});
  init_fan_in(*l.weight, in, rng);
  if (with_bias) l.bias = &store.add(name + ".b", {out});
  return l;
}

Var Linear::operator()(Graph& g, Var x) const {
  Var y = matmul(g, x, g.param(*weight));
  return bias ? add_row(g, y, g.param(*bias)) : y;
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::size_t dim) {
  LayerNorm n;
  n.gain = &store.add(name + ".gain", {dim});
  n.gain->value.fill(1.0);
  n.bias = &store.add(name + ".bias", {dim});
  return n;
}

Var LayerNorm::operator()(Graph& g, Var x) const {
  return layer_norm(g, x, g.param(*gain), g.param(*bias));
}

AttentionLayer AttentionLayer::create(ParameterStore& store, const std::string& name,
                                      std::size_t dim, std::size_t heads, std::size_t banks,
                                      Rng& rng) {
  if (heads == 0 || dim % heads != 0)
    throw ContractError("attention: model dim must be divisible by head count");
  AttentionLayer a;
  a.heads = heads;
  a.query = Linear::create(store, name + ".q", dim, dim, false, rng);
  for (std::size_t b = 0; b < banks; ++b) {
    const std::string suffix = banks == 1 ? "" : std::to_string(b);
    a.key.push_back(Linear::create(store, name + ".k" + suffix, dim, dim, false, rng));
    a.value.push_back(Linear::create(store, name + ".v" + suffix, dim, dim, false, rng));
  }
  a.output = Linear::create(store, name + ".o", dim, dim, false, rng);
  return a;
}

Var AttentionLayer::operator()(Graph& g, Var x, std::span<const Var> banks,
                               std::span<const AttentionSegment> segments) const {
  if (banks.size() != key.size()) throw ContractError("attention: bank count mismatch");
  Var q = query(g, x);
  std::vector<Var> ks, vs;
  for (std::size_t b = 0; b < banks.size(); ++b) {
    ks.push_back(key[b](g, banks[b]));
    vs.push_back(value[b](g, banks[b]));
  }
  Var h = attention(g, q, ks, vs, segments, heads);
  return output(g, h);
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& name, std::size_t dim,
                                std::size_t inner_dim, Rng& rng) {
  return FeedForward{Linear::create(store, name + ".w1", dim, inner_dim, false, rng),
                     Linear::create(store, name + ".w2", inner_dim, dim, false, rng)};
}

Var FeedForward::operator()(Graph& g, Var x) const { return outer(g, relu(g, inner(g, x))); }

TransformerBlock TransformerBlock::create(ParameterStore& store, const std::string& name,
                                          std::size_t dim, std::size_t heads,
                                          std::size_t inner_dim, std::size_t banks, Rng& rng) {
  TransformerBlock b;
  b.attn = AttentionLayer::create(store, name + ".attn", dim, heads, banks, rng);
  b.attn_norm = LayerNorm::create(store, name + ".ln1", dim);
  b.ffn = FeedForward::create(store, name + ".ffn", dim, inner_dim, rng);
  b.ffn_norm = LayerNorm::create(store, name + ".ln2", dim);
  return b;
}

Var TransformerBlock::operator()(Graph& g, Var x, std::span<const Var> banks,
                                 std::span<const AttentionSegment> segments,
                                 const ForwardContext& ctx) const {
  Var a = dropout(g, attn(g, x, banks, segments), ctx);
  Var y = attn_norm(g, attention_residual ? add(g, x, a) : a);
  Var f = dropout(g, ffn(g, y), ctx);
  return ffn_norm(g, add(g, y, f));
}

DecoderBlock DecoderBlock::create(ParameterStore& store, const std::string& name, std::size_t dim,
                                  std::size_t heads, std::size_t inner_dim, Rng& rng) {
  DecoderBlock b;
  b.self_attn = AttentionLayer::create(store, name + ".self", dim, heads, 1, rng);
  b.self_norm = LayerNorm::create(store, name + ".ln1", dim);
  b.cross_attn = AttentionLayer::create(store, name + ".cross", dim, heads, 1, rng);
  b.cross_norm = LayerNorm::create(store, name + ".ln2", dim);
  b.ffn = FeedForward::create(store, name + ".ffn", dim, inner_dim, rng);
  b.ffn_norm = LayerNorm::create(store, name + ".ln3", dim);
  return b;
}

Var DecoderBlock::operator()(Graph& g, Var x, Var memory,
                             std::span<const AttentionSegment> self_segs,
                             std::span<const AttentionSegment> cross_segs,
                             const ForwardContext& ctx) const {
  Var self_bank[] = {x};
  Var y = self_norm(g, add(g, x, dropout(g, self_attn(g, x, self_bank, self_segs), ctx)));
  Var mem_bank[] = {memory};
  Var z = cross_norm(g, add(g, y, dropout(g, cross_attn(g, y, mem_bank, cross_segs), ctx)));
  return ffn_norm(g, add(g, z, dropout(g, ffn(g, z), ctx)));
}

std::vector<AttentionSegment> self_segments(std::span<const RowSpan> spans, std::size_t n_banks,
                                            const MaskBuilder& build) {
  std::map<std::size_t, std::shared_ptr<const AttentionMask>> cache;
  std::vector<AttentionSegment> segs;
  segs.reserve(spans.size());
  for (const auto& span : spans) {
    auto& mask = cache[span.length];
    if (!mask) mask = std::make_shared<const AttentionMask>(build(span.length));
    segs.push_back(AttentionSegment{span, std::vector<RowSpan>(n_banks, span), mask});
  }
  return segs;
}

}  // namespace cloze
