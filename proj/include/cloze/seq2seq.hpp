#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cloze/data.hpp"
#include "cloze/layers.hpp"

namespace cloze {

struct S2SConfig {
  std::size_t feat_dim = 20;
  std::size_t vocab_size = 30;
  std::size_t model_dim = 64;
  std::size_t encoder_depth = 2;
  std::size_t decoder_depth = 2;
  std::size_t heads = 4;
  std::size_t inner_dim = 128;
  std::size_t max_len = 256;  // longest frame or token sequence
  std::size_t max_decode_len = 64;
  std::size_t beam_width = 4;
  double dropout_rate = 0.0;

  void validate() const;
  std::string fingerprint() const;
  static S2SConfig from_fingerprint(const std::string& fp);
};

/// Transformer encoder over acoustic frames and a causal decoder with
/// cross-attention into the encoder output.
class S2SModel {
 public:
  S2SModel(S2SConfig config, std::uint64_t seed);

  const S2SConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  /// Encoder output over packed frames; `spans` receives one row span per utterance.
  Var encode(Graph& g, std::span<const AcousticFeatures* const> features,
             std::vector<RowSpan>& spans, const ForwardContext& ctx = {}) const;
  /// Decoder logits, one row per prefix token; prefix i attends to memory span i.
  Var decode_logits(Graph& g, Var memory, std::span<const RowSpan> memory_spans,
                    const PackedBatch& prefixes, const ForwardContext& ctx = {}) const;
  Var forward(Graph& g, std::span<const AcousticFeatures* const> features,
              const PackedBatch& prefixes, const ForwardContext& ctx = {}) const;

  /// Logits [prefix length x K] for one utterance.
  Tensor logits(const AcousticFeatures& features, const Sequence& prefix,
                Precision precision = Precision::double_) const;

 private:
  S2SConfig config_;
  ParameterStore store_;
  Linear input_;
  std::vector<TransformerBlock> encoder_;
  Parameter* embedding_ = nullptr;
  std::vector<DecoderBlock> decoder_;
  Linear output_;
};

struct Hypothesis {
  Sequence tokens;             // <sos> ... [<eos>]
  double score = 0.0;          // summed log-probabilities
  double normalized = 0.0;     // score / generated tokens
  bool truncated = false;      // stopped at max_decode_len without <eos>
};

/// Step-by-step argmax decoding.
Hypothesis greedy_decode(const S2SModel& model, const AcousticFeatures& features,
                         Precision precision = Precision::double_);
/// Beam search ranked by length-normalized score; width 1 is greedy.
Hypothesis decode(const S2SModel& model, const AcousticFeatures& features,
                  std::size_t beam_width, Precision precision = Precision::double_);

/// Levenshtein distance with unit costs.
std::size_t edit_distance(std::span<const TokenId> a, std::span<const TokenId> b);
/// Drops <sos> and <eos>.
Sequence strip_framing(std::span<const TokenId> seq);
/// edit_distance / |reference| on unframed sequences.
double cer(std::span<const TokenId> reference, std::span<const TokenId> hypothesis);

/// `utt_id<TAB>tok tok ...`
std::string format_hypothesis(const std::string& utt_id, const Sequence& tokens,
                              const Vocabulary& vocab);

}  // namespace cloze
