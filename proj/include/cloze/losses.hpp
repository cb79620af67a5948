#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cloze/autodiff.hpp"
#include "cloze/layers.hpp"

namespace cloze {

enum class TargetProvenance { hard, uniform_smoothed, teacher, mixed };

/// Per-position target distributions [T' x K].
struct SoftTarget {
  Tensor rows;
  TargetProvenance provenance = TargetProvenance::hard;
};

struct LossBreakdown {
  double total = 0.0;
  std::vector<double> per_position;
  std::size_t token_count = 0;
  /// Positions where a zero student probability met a nonzero target weight
  /// and was floored before the log.
  std::size_t floored = 0;

  double per_token() const { return token_count ? total / static_cast<double>(token_count) : 0.0; }
};

constexpr double kProbabilityFloor = 1e-12;

SoftTarget hard_targets(std::span<const TokenId> labels, std::size_t vocab_size);

/// (1 - epsilon) one-hot + epsilon / K uniform.
SoftTarget label_smoothing_targets(std::span<const TokenId> labels, std::size_t vocab_size,
                                   double epsilon);

/// lambda one-hot + (1 - lambda) teacher.
SoftTarget mix_targets(std::span<const TokenId> labels, const Tensor& teacher, double lambda);

/// Per position: -sum_k (lambda delta(k, label) + (1 - lambda) teacher_k) log student_k.
/// Positions flagged in `padding` are skipped.
LossBreakdown lst_loss(const Tensor& student_probs, std::span<const TokenId> labels,
                       const Tensor& teacher_probs, double lambda,
                       std::span<const std::uint8_t> padding = {});

struct KldEquivalence {
  double max_gradient_discrepancy = 0.0;
  double kld = 0.0;              // D_KL(teacher || student)
  double cross_entropy = 0.0;    // H(teacher, student)
  double teacher_entropy = 0.0;  // H(teacher)
};

/// Compares the parameter gradients of D_KL(teacher || student) and
/// H(teacher, student). `student_logits` builds [rows x K] logits from the
/// parameters; the teacher is a constant.
KldEquivalence kld_equivalence_check(const SoftTarget& teacher,
                                     const std::function<Var(Graph&)>& student_logits,
                                     std::span<Parameter* const> params);

}  // namespace cloze
