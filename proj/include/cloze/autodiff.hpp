#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cloze/mask.hpp"
#include "cloze/tensor.hpp"

namespace cloze {

/// A trainable array. `grad` accumulates across backward passes until zeroed.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

/// Owns parameters at stable addresses, in registration order.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(std::string name, Shape shape);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, Parameter*> by_name_;
};

struct Var {
  static constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  std::size_t id = none;
  bool valid() const { return id != none; }
};

/// Reverse-mode tape. One graph per forward/backward evaluation; nodes are
/// immutable once emitted.
class Graph {
 public:
  /// Receives the gradient and value of the node's output and pushes
  /// gradient into the inputs.
  using Backward = std::function<void(Graph&, const Tensor& out_grad, const Tensor& out)>;

  explicit Graph(ComputeConfig config = {});

  const ComputeConfig& config() const { return config_; }

  /// Leaf holding a copy of `value`. With `requires_grad`, its gradient is
  /// readable through grad() after backward().
  Var input(Tensor value, bool requires_grad = false);
  /// Leaf bound to a parameter; backward() adds into `p.grad`.
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of a node after backward(); zeros when nothing reached it.
  const Tensor& grad(Var v);
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient accumulator for an op input, or nullptr when the input does
  /// not participate in differentiation.
  Tensor* grad_target(Var v);

  /// Seeds d(root)/d(root) = 1 for a single-element root.
  void backward(Var root);
  void backward(Var root, const Tensor& seed);

  /// Op plumbing: records a node computed from `inputs`.
  Var emit(const char* op, Tensor value, std::span<const Var> inputs, Backward backward);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    const char* op = "";
  };

  ComputeConfig config_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. All take 2-D operands unless noted; rank-1
// tensors act as a single row.

Var matmul(Graph& g, Var a, Var b);        // [m x k] . [k x n]
Var add(Graph& g, Var a, Var b);           // same shape
Var sub(Graph& g, Var a, Var b);           // same shape
Var mul(Graph& g, Var a, Var b);           // elementwise
Var scale(Graph& g, Var a, double s);
Var add_row(Graph& g, Var a, Var row);     // a[i, :] + row
Var relu(Graph& g, Var a);
Var sum(Graph& g, Var a);                  // -> shape {1}
Var concat_cols(Graph& g, Var a, Var b);
Var slice_rows(Graph& g, Var a, std::size_t begin, std::size_t count);
Var embedding(Graph& g, Var table, std::span<const std::size_t> indices);
Var log_softmax(Graph& g, Var logits);     // row-wise

constexpr double kLayerNormEpsilon = 1e-6;
Var layer_norm(Graph& g, Var x, Var gain, Var bias, double epsilon = kLayerNormEpsilon);

/// Row-wise softmax restricted to allowed entries. Denied entries are 0, and
/// a fully denied row is all-zero with zero gradient.
Var masked_softmax(Graph& g, Var scores, const AttentionMask& mask);

/// Sum over rows r of weight[r] * sum_k -target[r,k] * log softmax(logits)[r,k].
Var soft_cross_entropy(Graph& g, Var logits, const Tensor& targets,
                       std::span<const double> row_weights);

struct RowSpan {
  std::size_t offset = 0;
  std::size_t length = 0;
};

/// One independent attention problem inside a packed batch.
struct AttentionSegment {
  RowSpan query;
  std::vector<RowSpan> banks;                  // rows of each key/value bank
  std::shared_ptr<const AttentionMask> mask;   // [query.length x sum bank lengths]
};

/// Multi-head scaled dot-product attention over packed sequences. Queries,
/// keys and values are already projected ([rows x D]); heads split the D
/// columns evenly. Scores are scaled by 1/sqrt(D / heads), masked per segment,
/// and normalized jointly across all banks.
Var attention(Graph& g, Var queries, std::span<const Var> key_banks,
              std::span<const Var> value_banks, std::span<const AttentionSegment> segments,
              std::size_t heads);

// Raw kernels shared with the non-differentiable paths.
namespace kernels {
/// out[c] over allowed entries; returns false (and zeros out) for a denied row.
bool masked_softmax_row(const double* scores, const std::uint8_t* allow, std::size_t n,
                        double* out);
void softmax_row(const double* logits, std::size_t n, double* out, double temperature = 1.0);
/// C += A . B, A [m x k], B [k x n], all row-major.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n, Precision precision);
}  // namespace kernels

}  // namespace cloze
