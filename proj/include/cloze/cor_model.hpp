#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cloze/layers.hpp"
#include "cloze/mask.hpp"

namespace cloze {

enum class CorVariant { cor, unicor };

struct CorConfig {
  std::size_t vocab_size = 13;
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t inner_dim = 128;
  std::size_t stack_depth = 2;   // blocks per directional stack
  std::size_t fusion_depth = 1;
  std::size_t max_len = 128;
  double dropout_rate = 0.0;
  CorVariant variant = CorVariant::cor;

  void validate() const;
  /// Stable key=value description; equal fingerprints mean interchangeable
  /// parameter layouts.
  std::string fingerprint() const;
  static CorConfig from_fingerprint(const std::string& fp);
};

/// Per-position distributions of the teacher; row t is aligned to target x_{t+1}.
struct TeacherOutput {
  Tensor probs;  // [(T-1) x K]
};

/// Cloze completer: forward and backward stacks over the same embedded input,
/// fused by two-bank attention, then a per-position vocabulary projection.
/// The unidirectional variant keeps only the forward stack.
class CorModel {
 public:
  CorModel(CorConfig config, std::uint64_t seed);

  const CorConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  /// Token embeddings plus sinusoidal positions, positions restarting per span.
  Var embed(Graph& g, const PackedBatch& inputs) const;
  /// Logits [rows x K] from an already embedded input.
  Var forward_embedded(Graph& g, Var embedded, std::span<const RowSpan> spans,
                       const ForwardContext& ctx = {}) const;
  Var forward(Graph& g, const PackedBatch& inputs, const ForwardContext& ctx = {}) const;

  /// Logits for one framed sequence <sos> .. <eos>; input is x_1..x_{T-1}.
  Tensor logits(const Sequence& framed, Precision precision = Precision::double_) const;

  /// Symbolic description of this network for the visibility oracle.
  StackDescription stack(std::size_t n) const;

 private:
  CorConfig config_;
  ParameterStore store_;
  Parameter* embedding_ = nullptr;
  std::vector<TransformerBlock> forward_stack_;
  std::vector<TransformerBlock> backward_stack_;
  Linear fusion_input_;
  std::vector<TransformerBlock> fusion_blocks_;
  Linear output_;
};

/// Inputs x_1..x_{T-1} and targets x_2..x_T of framed sequences.
struct ClozeBatch {
  PackedBatch inputs;
  std::vector<TokenId> targets;
};

ClozeBatch make_cloze_batch(std::span<const Sequence> framed);
ClozeBatch make_cloze_batch(std::span<const Sequence* const> framed);

/// Row-wise softmax(logits / temperature).
Tensor softmax_rows(const Tensor& logits, double temperature = 1.0);

TeacherOutput teacher_distributions(const CorModel& model, const Sequence& framed,
                                    double temperature);
/// Batched variant over packed inputs; rows follow the packing.
Tensor teacher_probabilities(const CorModel& model, const PackedBatch& inputs, double temperature,
                             Precision precision = Precision::double_);

/// Index of the largest entry, lowest index on ties.
std::size_t argmax(std::span<const double> row);

struct ClassTally {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

struct ClozeAccuracy {
  double accuracy = 0.0;
  std::size_t correct = 0;  // M
  std::size_t total = 0;    // N
  std::map<std::string, ClassTally> per_class;
};

/// Logit rows [(T-1) x K] for one framed sequence.
using LogitFunction = std::function<Tensor(const Sequence& framed)>;
/// Class label of target framed[index], index in 1..T-1.
using PositionClassifier = std::function<std::string(const Sequence& framed, std::size_t index)>;

/// "even"/"odd" by interior position, "end" for the final target.
std::string parity_class(const Sequence& framed, std::size_t index);

ClozeAccuracy cloze_accuracy(const LogitFunction& model, std::span<const Sequence> corpus,
                             const PositionClassifier& classify = parity_class);
ClozeAccuracy cloze_accuracy(const CorModel& model, std::span<const Sequence> corpus,
                             const PositionClassifier& classify = parity_class,
                             Precision precision = Precision::double_);

}  // namespace cloze
