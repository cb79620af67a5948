#include "cloze/losses.hpp"

#include <cmath>

namespace cloze {

namespace {

void check_labels(std::span<const TokenId> labels, std::size_t k) {
  if (labels.empty()) throw ContractError("targets: no labels");
  for (auto l : labels)
    if (l >= k) throw ContractError("targets: label " + std::to_string(l) + " >= vocab size");
}

}  // namespace

SoftTarget hard_targets(std::span<const TokenId> labels, std::size_t vocab_size) {
  check_labels(labels, vocab_size);
  Tensor t({labels.size(), vocab_size});
  for (std::size_t i = 0; i < labels.size(); ++i) t.at(i, labels[i]) = 1.0;
  return {std::move(t), TargetProvenance::hard};
}

SoftTarget label_smoothing_targets(std::span<const TokenId> labels, std::size_t vocab_size,
                                   double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ContractError("label smoothing: epsilon in [0,1)");
  check_labels(labels, vocab_size);
  const double base = epsilon / static_cast<double>(vocab_size);
  Tensor t({labels.size(), vocab_size}, base);
  for (std::size_t i = 0; i < labels.size(); ++i) t.at(i, labels[i]) += 1.0 - epsilon;
  return {std::move(t), TargetProvenance::uniform_smoothed};
}

SoftTarget mix_targets(std::span<const TokenId> labels, const Tensor& teacher, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("lambda must lie in [0,1]");
  const std::size_t k = teacher.cols();
  check_labels(labels, k);
  if (teacher.rows() != labels.size())
    throw ContractError("mix_targets: teacher rows " + std::to_string(teacher.rows()) +
                        " != labels " + std::to_string(labels.size()));
  Tensor t(teacher.shape);
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t c = 0; c < k; ++c)
      t.at(i, c) = lambda * (c == labels[i] ? 1.0 : 0.0) + (1.0 - lambda) * teacher.at(i, c);
  return {std::move(t), lambda == 1.0   ? TargetProvenance::hard
                        : lambda == 0.0 ? TargetProvenance::teacher
                                        : TargetProvenance::mixed};
}

LossBreakdown lst_loss(const Tensor& student_probs, std::span<const TokenId> labels,
                       const Tensor& teacher_probs, double lambda,
                       std::span<const std::uint8_t> padding) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("lst_loss: lambda must lie in [0,1]");
  const std::size_t n = student_probs.rows(), k = student_probs.cols();
  if (labels.size() != n || teacher_probs.rows() != n || teacher_probs.cols() != k)
    throw ContractError("lst_loss: student, labels and teacher must align row for row");
  if (!padding.empty() && padding.size() != n)
    throw ContractError("lst_loss: padding flags must match rows");

  LossBreakdown out;
  out.per_position.assign(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    if (!padding.empty() && padding[t]) continue;
    if (labels[t] >= k) throw ContractError("lst_loss: label out of range");
    double loss = 0.0;
    bool floored = false;
    for (std::size_t c = 0; c < k; ++c) {
      const double w =
          lambda * (c == labels[t] ? 1.0 : 0.0) + (1.0 - lambda) * teacher_probs.at(t, c);
      if (w == 0.0) continue;
      double p = student_probs.at(t, c);
      if (p < kProbabilityFloor) {
        floored = true;
        p = kProbabilityFloor;
      }
      loss -= w * std::log(p);
    }
    out.per_position[t] = loss;
    out.total += loss;
    ++out.token_count;
    if (floored) ++out.floored;
  }
  return out;
}

KldEquivalence kld_equivalence_check(const SoftTarget& teacher,
                                     const std::function<Var(Graph&)>& student_logits,
                                     std::span<Parameter* const> params) {
  const Tensor& q = teacher.rows;
  Tensor log_q(q.shape);
  KldEquivalence out;
  for (std::size_t i = 0; i < q.size(); ++i)
    if (q.values[i] > 0.0) {
      log_q.values[i] = std::log(q.values[i]);
      out.teacher_entropy -= q.values[i] * log_q.values[i];
    }

  auto gradients = [&](bool kld_route, double& value) {
    for (Parameter* p : params) p->zero_grad();
    Graph g(ComputeConfig{Precision::double_, false, 0});
    Var z = student_logits(g);
    Var loss;
    if (kld_route) {
      // sum q (log q - log p), assembled from elementwise ops.
      Var diff = sub(g, g.input(log_q), log_softmax(g, z));
      loss = sum(g, mul(g, g.input(q), diff));
    } else {
      std::vector<double> ones(q.rows(), 1.0);
      loss = soft_cross_entropy(g, z, q, ones);
    }
    value = g.value(loss).values[0];
    g.backward(loss);
    std::vector<double> grads;
    for (Parameter* p : params) grads.insert(grads.end(), p->grad.values.begin(), p->grad.values.end());
    return grads;
  };

  const auto g_kld = gradients(true, out.kld);
  const auto g_ce = gradients(false, out.cross_entropy);
  for (std::size_t i = 0; i < g_kld.size(); ++i)
    out.max_gradient_discrepancy = std::max(out.max_gradient_discrepancy, std::abs(g_kld[i] - g_ce[i]));
  for (Parameter* p : params) p->zero_grad();
  return out;
}

}  // namespace cloze
