#include "cloze/mask.hpp"

#include <sstream>

#include "cloze/tensor.hpp"

namespace cloze {

void AttentionMask::add_bank(Bank bank) {
  if (bank.allow.size() != n_query_ * bank.n_key)
    throw ContractError("mask bank '" + bank.name + "' has wrong allow-matrix size");
  offsets_.push_back(n_key_total_);
  const std::size_t old_total = n_key_total_;
  n_key_total_ += bank.n_key;
  std::vector<std::uint8_t> flat(n_query_ * n_key_total_, 0);
  for (std::size_t q = 0; q < n_query_; ++q) {
    for (std::size_t k = 0; k < old_total; ++k) flat[q * n_key_total_ + k] = flat_[q * old_total + k];
    for (std::size_t k = 0; k < bank.n_key; ++k)
      flat[q * n_key_total_ + old_total + k] = bank.allow[q * bank.n_key + k];
  }
  flat_ = std::move(flat);
  banks_.push_back(std::move(bank));
}

bool AttentionMask::row_denied(std::size_t query) const {
  for (std::size_t k = 0; k < n_key_total_; ++k)
    if (flat_[query * n_key_total_ + k]) return false;
  return true;
}

std::string AttentionMask::dump() const {
  std::ostringstream os;
  for (const auto& bank : banks_) {
    os << "# bank " << bank.name << " (" << n_query_ << "x" << bank.n_key << ")\n";
    for (std::size_t q = 0; q < n_query_; ++q) {
      for (std::size_t k = 0; k < bank.n_key; ++k) os << (bank.allow[q * bank.n_key + k] ? '1' : '.');
      os << '\n';
    }
  }
  return os.str();
}

bool operator==(const AttentionMask& a, const AttentionMask& b) {
  if (a.n_query_ != b.n_query_ || a.banks_.size() != b.banks_.size()) return false;
  for (std::size_t i = 0; i < a.banks_.size(); ++i)
    if (a.banks_[i].n_key != b.banks_[i].n_key || a.banks_[i].allow != b.banks_[i].allow)
      return false;
  return true;
}

namespace {

template <typename Rule>
AttentionMask::Bank make_bank(std::string name, std::size_t n_query, std::size_t n_key,
                              Rule rule) {
  AttentionMask::Bank bank{std::move(name), n_key, std::vector<std::uint8_t>(n_query * n_key, 0)};
  // 1-based positions in the rule.
  for (std::size_t t = 1; t <= n_query; ++t)
    for (std::size_t j = 1; j <= n_key; ++j)
      bank.allow[(t - 1) * n_key + (j - 1)] = rule(t, j) ? 1 : 0;
  return bank;
}

void require_positions(std::size_t n, const char* what) {
  if (n == 0) throw ContractError(std::string(what) + ": n must be >= 1");
}

}  // namespace

AttentionMask build_forward_mask(std::size_t n) {
  require_positions(n, "build_forward_mask");
  AttentionMask m(n);
  m.add_bank(make_bank("self", n, n, [](std::size_t t, std::size_t j) { return j <= t; }));
  return m;
}

AttentionMask build_backward_mask(std::size_t n) {
  require_positions(n, "build_backward_mask");
  AttentionMask m(n);
  m.add_bank(make_bank("self", n, n, [](std::size_t t, std::size_t j) { return j >= t + 2; }));
  return m;
}

AttentionMask build_fusion_mask(std::size_t n) {
  require_positions(n, "build_fusion_mask");
  AttentionMask m(n);
  m.add_bank(make_bank("forward", n, n, [](std::size_t t, std::size_t j) { return j <= t; }));
  m.add_bank(make_bank("backward", n, n, [](std::size_t t, std::size_t j) { return j >= t; }));
  return m;
}

AttentionMask build_full_mask(std::size_t n_query, std::size_t n_key) {
  require_positions(n_query, "build_full_mask");
  require_positions(n_key, "build_full_mask");
  AttentionMask m(n_query);
  m.add_bank(make_bank("all", n_query, n_key, [](std::size_t, std::size_t) { return true; }));
  return m;
}

StackDescription::StackDescription(std::size_t positions) : n(positions) {
  require_positions(positions, "StackDescription");
  nodes.push_back(StackNode{});
}

std::size_t StackDescription::add_block(std::size_t query_source,
                                        std::vector<std::size_t> bank_sources,
                                        AttentionMask mask, bool residual) {
  StackNode node;
  node.kind = StackNode::Kind::block;
  node.query_source = query_source;
  node.bank_sources = std::move(bank_sources);
  node.mask = std::move(mask);
  node.residual = residual;
  nodes.push_back(std::move(node));
  return nodes.size() - 1;
}

std::size_t StackDescription::add_concat(std::vector<std::size_t> parts) {
  StackNode node;
  node.kind = StackNode::Kind::concat;
  node.parts = std::move(parts);
  nodes.push_back(std::move(node));
  return nodes.size() - 1;
}

std::size_t StackDescription::add_positions() {
  StackNode node;
  node.kind = StackNode::Kind::positions;
  nodes.push_back(std::move(node));
  return nodes.size() - 1;
}

std::vector<VisibilitySet> visibility_all(const StackDescription& stack) {
  const std::size_t n = stack.n;
  if (stack.nodes.empty() || stack.nodes[0].kind != StackNode::Kind::input)
    throw ContractError("stack description must start with the input node");

  std::vector<VisibilitySet> vis;
  vis.reserve(stack.nodes.size());
  for (std::size_t idx = 0; idx < stack.nodes.size(); ++idx) {
    const auto& node = stack.nodes[idx];
    VisibilitySet out(n);
    auto check_source = [&](std::size_t src) {
      if (src >= idx) throw ContractError("stack node reads a later node");
    };
    switch (node.kind) {
      case StackNode::Kind::input:
        if (idx != 0) throw ContractError("only node 0 may be the input");
        for (std::size_t t = 0; t < n; ++t) out[t] = {t + 1};
        break;
      case StackNode::Kind::positions:
        break;
      case StackNode::Kind::concat:
        for (auto p : node.parts) {
          check_source(p);
          for (std::size_t t = 0; t < n; ++t) out[t].insert(vis[p][t].begin(), vis[p][t].end());
        }
        break;
      case StackNode::Kind::block: {
        check_source(node.query_source);
        const auto& mask = node.mask;
        if (mask.n_query() != n || mask.banks().size() != node.bank_sources.size())
          throw ContractError("stack block mask does not match its bank sources");
        for (std::size_t b = 0; b < node.bank_sources.size(); ++b) {
          check_source(node.bank_sources[b]);
          if (mask.banks()[b].n_key != n) throw ContractError("bank shape mismatch in stack");
        }
        for (std::size_t t = 0; t < n; ++t) {
          std::size_t allowed = 0;
          for (std::size_t b = 0; b < node.bank_sources.size(); ++b) {
            const auto& src = vis[node.bank_sources[b]];
            for (std::size_t j = 0; j < n; ++j)
              if (mask.bank_allowed(b, t, j)) {
                ++allowed;
                out[t].insert(src[j].begin(), src[j].end());
              }
          }
          if (node.residual || allowed >= 2) {
            const auto& q = vis[node.query_source][t];
            out[t].insert(q.begin(), q.end());
          }
        }
        break;
      }
    }
    vis.push_back(std::move(out));
  }
  return vis;
}

VisibilitySet visibility_oracle(const StackDescription& stack) {
  return visibility_all(stack).back();
}

StackDescription cor_stack(std::size_t n, std::size_t stack_depth, std::size_t fusion_depth,
                           bool unidirectional) {
  StackDescription s(n);
  std::size_t fwd = s.input();
  for (std::size_t i = 0; i < stack_depth; ++i) fwd = s.add_block(fwd, {fwd}, build_forward_mask(n));
  if (unidirectional) return s;
  std::size_t bwd = s.input();
  // Bank position t+1 of the backward stack must not carry x_{t+1}: the first
  // block takes its queries and residual from positions alone.
  const std::size_t positions = s.add_positions();
  for (std::size_t i = 0; i < stack_depth; ++i)
    bwd = i == 0 ? s.add_block(positions, {bwd}, build_backward_mask(n))
                 : s.add_block(bwd, {bwd}, build_backward_mask(n));
  std::size_t fused = s.add_concat({fwd, bwd});
  for (std::size_t i = 0; i < fusion_depth; ++i)
    fused = s.add_block(fused, {fwd, bwd}, build_fusion_mask(n));
  return s;
}

}  // namespace cloze
