#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace cloze {

/// Per-(query, key) allow/deny pattern, split into key banks. Keys of all banks
/// are normalized jointly by attention; bank b's key j sits at flattened column
/// offset(b) + j.
class AttentionMask {
 public:
  struct Bank {
    std::string name;
    std::size_t n_key = 0;
    std::vector<std::uint8_t> allow;  // [n_query x n_key], row-major
  };

  AttentionMask() = default;
  explicit AttentionMask(std::size_t n_query) : n_query_(n_query) {}

  void add_bank(Bank bank);

  std::size_t n_query() const { return n_query_; }
  std::size_t n_key() const { return n_key_total_; }
  const std::vector<Bank>& banks() const { return banks_; }
  std::size_t bank_offset(std::size_t b) const { return offsets_.at(b); }

  bool allowed(std::size_t query, std::size_t key) const {
    return flat_[query * n_key_total_ + key] != 0;
  }
  bool bank_allowed(std::size_t bank, std::size_t query, std::size_t key) const {
    const auto& bk = banks_[bank];
    return bk.allow[query * bk.n_key + key] != 0;
  }
  /// Row-major [n_query x n_key()] over all banks.
  const std::uint8_t* flat() const { return flat_.data(); }
  bool row_denied(std::size_t query) const;

  /// Text grid per bank: `1` allowed, `.` denied, queries top to bottom.
  std::string dump() const;

  friend bool operator==(const AttentionMask&, const AttentionMask&);

 private:
  std::size_t n_query_ = 0;
  std::size_t n_key_total_ = 0;
  std::vector<Bank> banks_;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint8_t> flat_;
};

/// Output t (1-based) predicts token x_{t+1}; bank position j carries x_j.
/// allow(t, j) <=> j <= t.
AttentionMask build_forward_mask(std::size_t n);
/// allow(t, j) <=> j >= t + 2. The last two rows are fully denied.
AttentionMask build_backward_mask(std::size_t n);
/// Bank "forward": allow(t, j) <=> j <= t. Bank "backward": allow(t, j) <=> j >= t.
AttentionMask build_fusion_mask(std::size_t n);
/// Every query sees every key (encoder self-attention, cross-attention).
AttentionMask build_full_mask(std::size_t n_query, std::size_t n_key);

// ---------------------------------------------------------------------------
// Symbolic visibility.
//
// A network is described as a DAG of representations over n positions. Node 0
// is the token input, where position t carries exactly x_t. Every later node
// reads earlier nodes only. A positions node carries no token at all.

using VisibilitySet = std::vector<std::set<std::size_t>>;  // per position, 1-based tokens

struct StackNode {
  enum class Kind { input, positions, block, concat };
  Kind kind = Kind::input;
  // block: queries (and the residual) come from `query_source`; bank b of
  // `mask` reads keys/values from `bank_sources[b]`. Attention weights depend
  // on the query wherever a row allows two or more keys.
  std::size_t query_source = 0;
  std::vector<std::size_t> bank_sources;
  AttentionMask mask;
  bool residual = true;
  // concat: per-position feature concatenation of the listed nodes.
  std::vector<std::size_t> parts;
};

struct StackDescription {
  std::size_t n = 0;
  std::vector<StackNode> nodes;  // nodes[0] must be the input node

  explicit StackDescription(std::size_t positions);
  std::size_t input() const { return 0; }
  std::size_t add_block(std::size_t query_source, std::vector<std::size_t> bank_sources,
                        AttentionMask mask, bool residual = true);
  std::size_t add_concat(std::vector<std::size_t> parts);
  std::size_t add_positions();
  std::size_t output() const { return nodes.size() - 1; }
};

/// Exact token sets reaching each position of the final node.
VisibilitySet visibility_oracle(const StackDescription& stack);
/// Sets for every node of the description.
std::vector<VisibilitySet> visibility_all(const StackDescription& stack);

/// Stack description of the COR network for n input positions.
StackDescription cor_stack(std::size_t n, std::size_t stack_depth, std::size_t fusion_depth,
                           bool unidirectional);

}  // namespace cloze
