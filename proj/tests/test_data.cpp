#include <gtest/gtest.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cloze/checkpoint.hpp"
#include "cloze/data.hpp"
#include "cloze/seq2seq.hpp"

using namespace cloze;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("cloze_data_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::size_t value_of(TokenId id) { return id - Vocabulary::reserved_count; }

}  // namespace

TEST(Vocabulary, TwoCharacterExample) {
  const Vocabulary v = build_vocab("ab\nba", 1, TokenizeMode::character);
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.token(0), "<unk>");
  EXPECT_EQ(v.token(1), "<sos>");
  EXPECT_EQ(v.token(2), "<eos>");
  EXPECT_EQ(v.token(3), "a");
  EXPECT_EQ(v.token(4), "b");
}

TEST(Vocabulary, FrequencyThenCodePoint) {
  const Vocabulary v = build_vocab("cab\ncc\nb", 1, TokenizeMode::character);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"<unk>", "<sos>", "<eos>", "c", "b", "a"}));
}

TEST(Vocabulary, RareTokenIsUnknown) {
  const Vocabulary v = build_vocab("aab\na", 2, TokenizeMode::character);
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.encode("ab", TokenizeMode::character), (Sequence{1, 3, 0, 2}));
}

TEST(Vocabulary, EmptyInputThrows) {
  EXPECT_THROW(build_vocab("", 1, TokenizeMode::character), ContractError);
  EXPECT_THROW(build_vocab("\n \n", 1, TokenizeMode::character), ContractError);
}

TEST(Vocabulary, MultiByteCharacters) {
  const Vocabulary v = build_vocab("中文\n文", 1, TokenizeMode::character);
  EXPECT_EQ(v.token(3), "文");
  EXPECT_EQ(v.token(4), "中");
  EXPECT_EQ(v.decode(v.encode("中文", TokenizeMode::character), TokenizeMode::character), "中文");
}

TEST(Vocabulary, FilesAreByteIdentical) {
  const auto dir = temp_dir("vocab");
  const std::string text = "the cat\nthe dog\na cat";
  build_vocab(text, 1, TokenizeMode::whitespace).save((dir / "a.txt").string());
  build_vocab(text, 1, TokenizeMode::whitespace).save((dir / "b.txt").string());
  EXPECT_EQ(read_file((dir / "a.txt").string()), read_file((dir / "b.txt").string()));
  EXPECT_EQ(Vocabulary::load((dir / "a.txt").string()), build_vocab(text, 1, TokenizeMode::whitespace));
}

TEST(Vocabulary, DeserializeRequiresReservedHeader) {
  EXPECT_THROW(Vocabulary::deserialize("a\nb\nc\n"), ContractError);
  EXPECT_THROW(Vocabulary::deserialize("<unk>\n<sos>\n<eos>\na\na\n"), ContractError);
}

TEST(Corpus, RoundTrip) {
  const std::string text = "3 1 4 1 5\n9 2 6\n";
  const Vocabulary v = build_vocab(text, 1, TokenizeMode::whitespace);
  const Corpus c = encode_corpus(text, v, TokenizeMode::whitespace);
  EXPECT_EQ(corpus_text(c, v, TokenizeMode::whitespace), text);
  const std::string chars = "hello\nworld\n";
  const Vocabulary cv = build_vocab(chars, 1, TokenizeMode::character);
  EXPECT_EQ(corpus_text(encode_corpus(chars, cv, TokenizeMode::character), cv, TokenizeMode::character),
            chars);
}

TEST(Corpus, ValidateRejectsBadIndicesAndEmptySequences) {
  Corpus c;
  c.sequences = {{1, 9, 2}};
  EXPECT_THROW(c.validate(5), ContractError);
  c.sequences = {{1, 2}};
  EXPECT_THROW(c.validate(5), ContractError);
  c.sequences = {{1, 3, 2}};
  EXPECT_NO_THROW(c.validate(5));
}

TEST(CenterSum, HandExamples) {
  SyntheticSpec s;
  s.length = 3;
  s.count = 2000;
  const Corpus c = gen_center_sum(s);
  bool seen34 = false, seen85 = false;
  for (const auto& q : c.sequences) {
    const std::size_t a = value_of(q[1]), mid = value_of(q[2]), b = value_of(q[3]);
    if (a == 3 && b == 4) {
      EXPECT_EQ(mid, 7u);
      seen34 = true;
    }
    if (a == 8 && b == 5) {
      EXPECT_EQ(mid, 3u);
      seen85 = true;
    }
  }
  EXPECT_TRUE(seen34);
  EXPECT_TRUE(seen85);
}

TEST(CenterSum, IdentityHoldsEverywhere) {
  SyntheticSpec s;
  s.count = 5000;
  const Corpus c = gen_center_sum(s);
  c.validate(13);
  for (const auto& q : c.sequences) {
    ASSERT_EQ(q.size(), 23u);
    EXPECT_EQ(q.front(), Vocabulary::sos);
    EXPECT_EQ(q.back(), Vocabulary::eos);
    for (std::size_t t = 2; t < 21; t += 2)
      ASSERT_EQ(value_of(q[t]), (value_of(q[t - 1]) + value_of(q[t + 1])) % 10);
  }
}

TEST(CenterSum, EvenLengthRejected) {
  SyntheticSpec s;
  s.length = 4;
  EXPECT_THROW(gen_center_sum(s), ContractError);
}

// Given only its left neighbour an even token is uniform: chi-square over the
// 10x10 table of (left, centre) counts with 90 degrees of freedom.
TEST(CenterSum, LeftContextAloneIsUninformative) {
  SyntheticSpec s;
  s.count = 10000;
  s.seed = 3;
  const Corpus c = gen_center_sum(s);
  std::array<std::array<double, 10>, 10> n{};
  std::array<double, 10> row{};
  for (const auto& q : c.sequences)
    for (std::size_t t = 2; t < 21; t += 2) {
      ++n[value_of(q[t - 1])][value_of(q[t])];
      ++row[value_of(q[t - 1])];
    }
  double chi2 = 0.0, total = 0.0;
  for (std::size_t a = 0; a < 10; ++a) {
    total += row[a];
    for (std::size_t b = 0; b < 10; ++b) {
      const double e = row[a] / 10.0;
      chi2 += (n[a][b] - e) * (n[a][b] - e) / e;
    }
  }
  EXPECT_EQ(total, 100000.0);
  EXPECT_LT(chi2, 124.116);  // 0.99 quantile of chi-square(90)
}

TEST(Generators, Deterministic) {
  SyntheticSpec s;
  s.count = 200;
  EXPECT_EQ(gen_center_sum(s).sequences, gen_center_sum(s).sequences);
  s.kind = GeneratorKind::markov;
  EXPECT_EQ(gen_markov(s).sequences, gen_markov(s).sequences);
  SyntheticSpec t = s;
  t.seed = 2;
  EXPECT_NE(gen_markov(s).sequences, gen_markov(t).sequences);
}

TEST(Markov, SuccessorsAreLimited) {
  SyntheticSpec s;
  s.kind = GeneratorKind::markov;
  s.branching = 2;
  s.count = 500;
  const Corpus c = gen_markov(s);
  std::map<TokenId, std::set<TokenId>> next;
  for (const auto& q : c.sequences)
    for (std::size_t t = 1; t + 2 < q.size(); ++t) next[q[t]].insert(q[t + 1]);
  for (const auto& [a, succ] : next) EXPECT_LE(succ.size(), 2u);
  s.branching = 11;
  EXPECT_THROW(gen_markov(s), ContractError);
}

TEST(Markov, GrammarSeedSharesLanguage) {
  SyntheticSpec a;
  a.kind = GeneratorKind::markov;
  a.count = 400;
  a.grammar_seed = 5;
  SyntheticSpec b = a;
  b.seed = 2;
  auto bigrams = [](const Corpus& c) {
    std::set<std::pair<TokenId, TokenId>> out;
    for (const auto& q : c.sequences)
      for (std::size_t t = 1; t + 2 < q.size(); ++t) out.insert({q[t], q[t + 1]});
    return out;
  };
  EXPECT_NE(gen_markov(a).sequences, gen_markov(b).sequences);
  EXPECT_EQ(bigrams(gen_markov(a)), bigrams(gen_markov(b)));
}

class HomophoneLanguage : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(HomophoneLanguage, LeftContextTiesRightContextSeparates) {
  SyntheticSpec s;
  s.kind = GeneratorKind::homophone_speech;
  s.vocab_span = 27;
  s.length = 9;
  s.count = 20000;
  s.grammar_seed = GetParam();
  s.homophones = {{1, 2}, {10, 11}, {20, 21}};
  const Corpus c = gen_sentences(s);
  c.validate(30);
  std::map<TokenId, std::set<TokenId>> next;
  for (const auto& q : c.sequences)
    for (std::size_t t = 1; t + 2 < q.size(); ++t) next[q[t]].insert(q[t + 1]);
  for (const auto& [a, b] : s.homophones) {
    const TokenId p = 3 + a, q = 3 + b;
    for (const auto& [prev, succ] : next) EXPECT_EQ(succ.count(p), succ.count(q));
    for (TokenId x : next[p]) EXPECT_EQ(next[q].count(x), 0u);
  }
  for (const auto& [prev, succ] : next) {
    EXPECT_GE(succ.size(), 3u);
    EXPECT_LE(succ.size(), 6u);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, HomophoneLanguage, ::testing::Values(1u, 2u, 3u));

TEST(HomophoneLanguage, RejectsBadPairsAndBranching) {
  SyntheticSpec s;
  s.kind = GeneratorKind::homophone_speech;
  s.vocab_span = 10;
  s.homophones = {{1, 1}};
  EXPECT_THROW(gen_sentences(s), ContractError);
  s.homophones = {{1, 2}, {2, 3}};
  EXPECT_THROW(gen_sentences(s), ContractError);
  s.homophones = {{1, 2}};
  s.branching = 5;
  EXPECT_THROW(gen_sentences(s), ContractError);
  s.branching = 4;
  EXPECT_NO_THROW(gen_sentences(s));
}

TEST(Generators, SentencePoolLimitsDistinctSentences) {
  SyntheticSpec s;
  s.kind = GeneratorKind::homophone_speech;
  s.vocab_span = 27;
  s.length = 9;
  s.count = 3000;
  s.sentence_pool = 50;
  s.homophones = {{1, 2}};
  const Corpus c = gen_sentences(s);
  ASSERT_EQ(c.sequences.size(), 3000u);
  const std::set<Sequence> distinct(c.sequences.begin(), c.sequences.end());
  EXPECT_EQ(distinct.size(), 50u);
  SyntheticSpec fresh = s;
  fresh.sentence_pool = 0;
  fresh.count = 50;
  const Corpus pool = gen_sentences(fresh);
  EXPECT_EQ(distinct, std::set<Sequence>(pool.sequences.begin(), pool.sequences.end()));
  EXPECT_EQ(gen_sentences(s).sequences, c.sequences);
}

TEST(Augment, DegenerateRatesLeaveBatchUnchanged) {
  SyntheticSpec s;
  s.count = 50;
  const auto seqs = gen_center_sum(s).sequences;
  Rng rng(1);
  EXPECT_EQ(augment_replace(seqs, 13, 0.0, 0.5, rng), seqs);
  EXPECT_EQ(augment_replace(seqs, 13, 0.5, 0.0, rng), seqs);
  EXPECT_THROW(augment_replace(seqs, 13, 1.5, 0.5, rng), ContractError);
  EXPECT_THROW(augment_replace(seqs, 3, 0.5, 0.5, rng), ContractError);
}

TEST(Augment, ReplacementRateAndReservedSymbols) {
  SyntheticSpec s;
  s.count = 5000;  // 105k non-reserved tokens
  const auto seqs = gen_center_sum(s).sequences;
  Rng rng(7);
  const auto out = augment_replace(seqs, 13, 0.15, 0.20, rng);
  std::size_t tokens = 0, touched = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    ASSERT_EQ(out[i].size(), seqs[i].size());
    EXPECT_EQ(out[i].front(), Vocabulary::sos);
    EXPECT_EQ(out[i].back(), Vocabulary::eos);
    for (std::size_t t = 1; t + 1 < seqs[i].size(); ++t) {
      ++tokens;
      EXPECT_GE(out[i][t], Vocabulary::reserved_count);
      touched += out[i][t] != seqs[i][t];
    }
  }
  ASSERT_GE(tokens, 100000u);
  // A replaced token keeps its value with probability 1/10.
  const double replaced = static_cast<double>(touched) / static_cast<double>(tokens) / 0.9;
  EXPECT_NEAR(replaced, 0.03, 0.005);
}

TEST(Augment, InputIsNotMutated) {
  SyntheticSpec s;
  s.count = 100;
  const auto seqs = gen_center_sum(s).sequences;
  const auto copy = seqs;
  Rng rng(2);
  augment_replace(seqs, 13, 0.9, 0.9, rng);
  EXPECT_EQ(seqs, copy);
}

TEST(Speech, NoiselessFramesDecodePerfectly) {
  SyntheticSpec s;
  s.kind = GeneratorKind::homophone_speech;
  s.noise_sigma = 0.0;
  s.count = 200;
  s.length = 7;
  const Corpus c = gen_sentences(s);
  const auto utts = render_speech(c, s, 13);
  const auto protos = speech_prototypes(s, 13);
  for (const auto& u : utts) {
    EXPECT_EQ(u.features.frames.rows(), 7 * s.frames_per_token);
    EXPECT_EQ(u.features.frames.cols(), s.feat_dim);
    const Sequence hyp = nearest_prototype_decode(u.features, protos);
    EXPECT_EQ(cer(strip_framing(u.transcript), strip_framing(hyp)), 0.0);
  }
}

TEST(Speech, HomophonesShareFramesExactly) {
  SyntheticSpec s;
  s.kind = GeneratorKind::homophone_speech;
  s.noise_sigma = 0.0;
  s.homophones = {{3, 8}};
  const auto protos = speech_prototypes(s, 13);
  EXPECT_EQ(protos[3 + 3].values, protos[3 + 8].values);
  EXPECT_NE(protos[3 + 3].values, protos[3 + 4].values);
  EXPECT_TRUE(protos[0].empty());
  s.homophones = {{3, 10}};
  EXPECT_THROW(speech_prototypes(s, 13), ContractError);
}

// Acoustics cannot separate a homophone pair, so an acoustic-only decoder
// errs on at least half of the pair's occurrences.
TEST(Speech, HomophoneLowerBound) {
  SyntheticSpec s;
  s.kind = GeneratorKind::homophone_speech;
  s.noise_sigma = 0.0;
  s.count = 2000;
  s.homophones = {{3, 8}};
  // Center-sum text keeps both members equally frequent.
  const Corpus c = gen_center_sum(s);
  const auto utts = render_speech(c, s, 13);
  const auto protos = speech_prototypes(s, 13);
  std::size_t edits = 0, length = 0, pair = 0, high = 0;
  for (const auto& u : utts) {
    const Sequence ref = strip_framing(u.transcript);
    edits += edit_distance(ref, strip_framing(nearest_prototype_decode(u.features, protos)));
    length += ref.size();
    for (TokenId t : ref) {
      pair += t == 6 || t == 11;
      high += t == 11;
    }
  }
  const double corpus_cer = static_cast<double>(edits) / static_cast<double>(length);
  const double rate = static_cast<double>(pair) / static_cast<double>(length);
  // Ties go to the lower index, so every occurrence of the higher member is wrong.
  EXPECT_EQ(edits, high);
  EXPECT_NEAR(corpus_cer, rate / 2.0, 0.01);
  EXPECT_GE(corpus_cer, 0.0);
}

TEST(Speech, RenderingIsDeterministic) {
  SyntheticSpec s;
  s.kind = GeneratorKind::homophone_speech;
  s.count = 20;
  s.homophones = {{1, 2}};
  const Corpus c = gen_sentences(s);
  const auto a = render_speech(c, s, 13), b = render_speech(c, s, 13);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].features.frames.values, b[i].features.frames.values);
  }
}

TEST(Speech, VoiceSeedSharesPrototypesAcrossSets) {
  SyntheticSpec a, b;
  a.seed = 1;
  b.seed = 2;
  a.voice_seed = b.voice_seed = 9;
  EXPECT_EQ(speech_prototypes(a, 13)[5].values, speech_prototypes(b, 13)[5].values);
  b.voice_seed = 0;
  EXPECT_NE(speech_prototypes(a, 13)[5].values, speech_prototypes(b, 13)[5].values);
}
