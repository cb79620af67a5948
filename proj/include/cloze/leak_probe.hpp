#pragma once

#include <cstdint>
#include <functional>

#include "cloze/autodiff.hpp"
#include "cloze/cor_model.hpp"

namespace cloze {

/// A model seen as a differentiable map from one embedded input sequence
/// [n x D] to logits [n x K].
struct ProbeSubject {
  std::function<Var(Graph&, Var embedded)> map;
  Tensor embedded;
};

/// Entry (t-1, j-1) is max over logit k and channel d of
/// |d logits(t, k) / d embedded(j, d)|, estimated two ways.
struct SensitivityTable {
  Tensor analytic;  // reverse-mode, one backward pass per (t, k)
  Tensor numeric;   // central differences per (j, d)
};

constexpr double kLeakAgreement = 1e-6;

SensitivityTable sensitivity_table(const ProbeSubject& subject, double step = 1e-5);

struct Sensitivity {
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Sensitivity of output position t to input position j (both 1-based).
Sensitivity sensitivity(const ProbeSubject& subject, std::size_t t, std::size_t j,
                        double step = 1e-5);

/// Largest sensitivity of output t to input j over `seeds` subjects
/// (seed = 0..seeds-1). Throws NumericError when an estimate is non-finite or
/// the analytic and numeric estimates disagree by more than kLeakAgreement.
double leak_probe(const std::function<ProbeSubject(std::uint64_t seed)>& make, std::size_t t,
                  std::size_t j, std::size_t seeds);

/// COR (or UniCOR) as a probe subject over the input tokens x_1..x_n.
ProbeSubject cor_probe_subject(const CorModel& model, const Sequence& inputs);

/// Random-parameter network built from a stack description: blocks become
/// transformer blocks with the node's mask and residual, concat nodes a
/// concatenation projected back to `dim`, positions nodes a fixed random
/// matrix. The result outputs the final node.
ProbeSubject stack_probe_subject(const StackDescription& stack, std::size_t dim,
                                 std::size_t heads, std::uint64_t seed);

}  // namespace cloze
