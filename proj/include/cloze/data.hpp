#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cloze/layers.hpp"

namespace cloze {

enum class TokenizeMode { character, whitespace };

TokenizeMode parse_tokenize_mode(const std::string& text);

/// Splits a line into UTF-8 characters or whitespace-separated words.
std::vector<std::string> tokenize(std::string_view line, TokenizeMode mode);

/// Token <-> index map. Indices 0..2 are <unk>, <sos>, <eos>.
class Vocabulary {
 public:
  static constexpr TokenId unk = 0;
  static constexpr TokenId sos = 1;
  static constexpr TokenId eos = 2;
  static constexpr std::size_t reserved_count = 3;

  Vocabulary();
  /// Reserved symbols followed by `tokens` in order.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  bool is_reserved(TokenId id) const { return id < reserved_count; }
  TokenId id(const std::string& token) const;  // <unk> when absent
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Framed: <sos> tokens <eos>.
  Sequence encode(std::string_view line, TokenizeMode mode) const;
  /// Drops reserved framing; characters are concatenated, words space-joined.
  std::string decode(std::span<const TokenId> seq, TokenizeMode mode) const;

  std::string serialize() const;  // one token per line
  static Vocabulary deserialize(const std::string& text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  TokenId add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Frequency-sorted vocabulary of tokens seen at least `min_count` times;
/// ties broken by code point order.
Vocabulary build_vocab(std::string_view text, std::size_t min_count, TokenizeMode mode);

struct Corpus {
  std::vector<Sequence> sequences;  // framed
  std::string source;

  /// Every index < K and every sequence has at least <sos> x <eos>.
  void validate(std::size_t vocab_size) const;
};

Corpus encode_corpus(std::string_view text, const Vocabulary& vocab, TokenizeMode mode,
                     std::string source = "");
std::string corpus_text(const Corpus& corpus, const Vocabulary& vocab, TokenizeMode mode);

/// Vocabulary of `span` symbols 0-9a-z (span <= 36).
Vocabulary symbol_vocabulary(std::size_t span);

enum class GeneratorKind { center_sum, markov, homophone_speech };

struct SyntheticSpec {
  GeneratorKind kind = GeneratorKind::center_sum;
  std::size_t vocab_span = 10;  // non-reserved symbols
  std::size_t length = 21;      // interior tokens per sentence
  std::size_t count = 1000;     // sentences
  std::uint64_t seed = 1;
  // markov and homophone language
  std::size_t branching = 3;
  /// Seeds the grammar when nonzero so that sets drawn with different seeds
  /// share one language.
  std::uint64_t grammar_seed = 0;
  /// When nonzero, gen_sentences draws `count` sentences with replacement
  /// from this many distinct ones.
  std::size_t sentence_pool = 0;
  // speech rendering
  double noise_sigma = 0.5;
  std::size_t frames_per_token = 3;
  std::size_t feat_dim = 20;
  /// Seeds the prototypes when nonzero so that sets drawn with different
  /// seeds share one voice.
  std::uint64_t voice_seed = 0;
  /// Symbol-value pairs (0-based within the span) sharing acoustic prototypes.
  std::vector<std::pair<std::size_t, std::size_t>> homophones;
};

/// Odd positions i.i.d. uniform; every even position t holds
/// (x_{t-1} + x_{t+1}) mod span. Framed over symbol_vocabulary(span).
Corpus gen_center_sum(const SyntheticSpec& spec);
/// First-order chain with `branching` successors per symbol.
Corpus gen_markov(const SyntheticSpec& spec);
/// Chain over units (homophone pairs and single symbols): each symbol is
/// followed by `branching` units, a pair always entering as both members,
/// and the two members of a pair have disjoint successor units. Left context
/// never separates homophones; the next token always does.
Corpus gen_homophone_language(const SyntheticSpec& spec);
/// Dispatches on `kind`; homophone_speech uses gen_homophone_language.
/// Honors `sentence_pool`.
Corpus gen_sentences(const SyntheticSpec& spec);

/// Replaces non-reserved tokens of model inputs: each sequence is selected
/// with probability `sequence_fraction`, then each of its non-reserved tokens
/// is replaced with probability `token_fraction` by a uniform non-reserved
/// token (the original may be redrawn).
std::vector<Sequence> augment_replace(const std::vector<Sequence>& batch,
                                      std::size_t vocab_size, double token_fraction,
                                      double sequence_fraction, Rng& rng);

struct AcousticFeatures {
  Tensor frames;  // [n_frames x feat_dim]
};

struct Utterance {
  std::string id;
  AcousticFeatures features;
  Sequence transcript;  // framed
};

/// Prototype frames per vocabulary index, [frames_per_token x feat_dim] each;
/// homophone pairs share one prototype, reserved symbols have none.
std::vector<Tensor> speech_prototypes(const SyntheticSpec& spec, std::size_t vocab_size);

/// Each interior token becomes its prototype frames plus N(0, sigma^2) noise.
std::vector<Utterance> render_speech(const Corpus& corpus, const SyntheticSpec& spec,
                                     std::size_t vocab_size);

/// Frame-wise nearest-prototype transcription (ties to the lowest index).
Sequence nearest_prototype_decode(const AcousticFeatures& features,
                                  const std::vector<Tensor>& prototypes);

}  // namespace cloze
