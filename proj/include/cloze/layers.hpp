#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cloze/autodiff.hpp"

namespace cloze {

using TokenId = std::size_t;
using Sequence = std::vector<TokenId>;
using Rng = std::mt19937_64;

/// Sequences packed row-wise without padding; span i covers sequence i.
struct PackedBatch {
  std::vector<TokenId> tokens;
  std::vector<RowSpan> spans;

  void append(std::span<const TokenId> seq);
  std::size_t rows() const { return tokens.size(); }
};

/// Training-time stochasticity. A null rng disables dropout.
struct ForwardContext {
  double dropout_rate = 0.0;
  Rng* rng = nullptr;
};

/// Inverted dropout; identity when rate is 0 or no rng is given.
Var dropout(Graph& g, Var x, const ForwardContext& ctx);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void init_fan_in(Parameter& p, std::size_t fan_in, Rng& rng);

/// Sinusoidal position codes: channel 2i = sin(p / 10000^(2i/D)),
/// channel 2i+1 = cos of the same argument; positions start at 0.
Tensor sinusoidal_positions(std::size_t n, std::size_t dim);

struct Linear {
  Parameter* weight = nullptr;  // [in x out]
  Parameter* bias = nullptr;    // [out], optional

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out, bool with_bias, Rng& rng);
  Var operator()(Graph& g, Var x) const;
};

struct LayerNorm {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;

  static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t dim);
  Var operator()(Graph& g, Var x) const;
};

/// Multi-head attention with one key/value projection pair per bank.
struct AttentionLayer {
  Linear query;
  std::vector<Linear> key;
  std::vector<Linear> value;
  Linear output;
  std::size_t heads = 1;

  static AttentionLayer create(ParameterStore& store, const std::string& name, std::size_t dim,
                               std::size_t heads, std::size_t banks, Rng& rng);
  Var operator()(Graph& g, Var x, std::span<const Var> banks,
                 std::span<const AttentionSegment> segments) const;
};

/// max(x W1, 0) W2.
struct FeedForward {
  Linear inner;
  Linear outer;

  static FeedForward create(ParameterStore& store, const std::string& name, std::size_t dim,
                            std::size_t inner_dim, Rng& rng);
  Var operator()(Graph& g, Var x) const;
};

/// Post-norm transformer block: attention, residual + layer norm, FFN,
/// residual + layer norm. Without `attention_residual` the first sum drops
/// the query input.
struct TransformerBlock {
  AttentionLayer attn;
  LayerNorm attn_norm;
  FeedForward ffn;
  LayerNorm ffn_norm;
  bool attention_residual = true;

  static TransformerBlock create(ParameterStore& store, const std::string& name, std::size_t dim,
                                 std::size_t heads, std::size_t inner_dim, std::size_t banks,
                                 Rng& rng);
  Var operator()(Graph& g, Var x, std::span<const Var> banks,
                 std::span<const AttentionSegment> segments, const ForwardContext& ctx = {}) const;
};

/// Decoder block: causal self-attention, cross-attention, FFN; each followed
/// by residual + layer norm.
struct DecoderBlock {
  AttentionLayer self_attn;
  LayerNorm self_norm;
  AttentionLayer cross_attn;
  LayerNorm cross_norm;
  FeedForward ffn;
  LayerNorm ffn_norm;

  static DecoderBlock create(ParameterStore& store, const std::string& name, std::size_t dim,
                             std::size_t heads, std::size_t inner_dim, Rng& rng);
  Var operator()(Graph& g, Var x, Var memory, std::span<const AttentionSegment> self_segments,
                 std::span<const AttentionSegment> cross_segments,
                 const ForwardContext& ctx = {}) const;
};

using MaskBuilder = std::function<AttentionMask(std::size_t n)>;

/// One self-attention segment per span; masks are shared between spans of
/// equal length.
std::vector<AttentionSegment> self_segments(std::span<const RowSpan> spans, std::size_t n_banks,
                                            const MaskBuilder& build);

}  // namespace cloze
