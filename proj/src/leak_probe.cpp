#include "cloze/leak_probe.hpp"

#include <cmath>
#include <memory>
#include <random>

namespace cloze {

namespace {

Graph probe_graph() { return Graph(ComputeConfig{Precision::double_, false, 0}); }

Tensor evaluate(const ProbeSubject& s, const Tensor& embedded) {
  Graph g = probe_graph();
  Tensor out = g.value(s.map(g, g.input(embedded)));
  if (!out.all_finite()) throw NumericError("leak probe: non-finite logits");
  return out;
}

}  // namespace

SensitivityTable sensitivity_table(const ProbeSubject& subject, double step) {
  const std::size_t n = subject.embedded.rows(), d = subject.embedded.cols();
  SensitivityTable table{Tensor({n, n}), Tensor({n, n})};

  // Reverse mode: row t of the logits, one class at a time.
  {
    Graph g = probe_graph();
    Var in = g.input(subject.embedded, true);
    Var out = subject.map(g, in);
    const Tensor& logits = g.value(out);
    if (!logits.all_finite()) throw NumericError("leak probe: non-finite logits");
    if (logits.rows() != n) throw ContractError("leak probe: model must return one row per input");
    const std::size_t k = logits.cols();
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t c = 0; c < k; ++c) {
        Graph gg = probe_graph();
        Var in2 = gg.input(subject.embedded, true);
        Var out2 = subject.map(gg, in2);
        Tensor seed(gg.value(out2).shape);
        seed.at(t, c) = 1.0;
        gg.backward(out2, seed);
        const Tensor& grad = gg.grad(in2);
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t e = 0; e < d; ++e)
            table.analytic.at(t, j) = std::max(table.analytic.at(t, j), std::abs(grad.at(j, e)));
      }
  }

  // Central differences: one perturbed coordinate moves every output row.
  Tensor x = subject.embedded;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t e = 0; e < d; ++e) {
      const double saved = x.at(j, e);
      x.at(j, e) = saved + step;
      const Tensor up = evaluate(subject, x);
      x.at(j, e) = saved - step;
      const Tensor down = evaluate(subject, x);
      x.at(j, e) = saved;
      const std::size_t k = up.cols();
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t c = 0; c < k; ++c) {
          const double diff = std::abs(up.at(t, c) - down.at(t, c)) / (2.0 * step);
          table.numeric.at(t, j) = std::max(table.numeric.at(t, j), diff);
        }
    }
  return table;
}

Sensitivity sensitivity(const ProbeSubject& subject, std::size_t t, std::size_t j, double step) {
  const std::size_t n = subject.embedded.rows();
  if (t < 1 || t > n || j < 1 || j > n) throw ContractError("leak probe: position out of range");
  const std::size_t d = subject.embedded.cols();

  Sensitivity s;
  Graph g = probe_graph();
  Var in = g.input(subject.embedded, true);
  Var out = subject.map(g, in);
  const std::size_t k = g.value(out).cols();
  for (std::size_t c = 0; c < k; ++c) {
    Graph gg = probe_graph();
    Var in2 = gg.input(subject.embedded, true);
    Var out2 = subject.map(gg, in2);
    Tensor seed(gg.value(out2).shape);
    seed.at(t - 1, c) = 1.0;
    gg.backward(out2, seed);
    for (std::size_t e = 0; e < d; ++e)
      s.analytic = std::max(s.analytic, std::abs(gg.grad(in2).at(j - 1, e)));
  }
  Tensor x = subject.embedded;
  for (std::size_t e = 0; e < d; ++e) {
    const double saved = x.at(j - 1, e);
    x.at(j - 1, e) = saved + step;
    const Tensor up = evaluate(subject, x);
    x.at(j - 1, e) = saved - step;
    const Tensor down = evaluate(subject, x);
    x.at(j - 1, e) = saved;
    for (std::size_t c = 0; c < k; ++c)
      s.numeric = std::max(s.numeric, std::abs(up.at(t - 1, c) - down.at(t - 1, c)) / (2.0 * step));
  }
  if (!std::isfinite(s.analytic) || !std::isfinite(s.numeric))
    throw NumericError("leak probe: non-finite sensitivity");
  return s;
}

double leak_probe(const std::function<ProbeSubject(std::uint64_t seed)>& make, std::size_t t,
                  std::size_t j, std::size_t seeds) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    const Sensitivity s = sensitivity(make(seed), t, j);
    if (std::abs(s.analytic - s.numeric) > kLeakAgreement)
      throw NumericError("leak probe: analytic " + std::to_string(s.analytic) + " and numeric " +
                         std::to_string(s.numeric) + " sensitivities disagree");
    worst = std::max({worst, s.analytic, s.numeric});
  }
  return worst;
}

ProbeSubject cor_probe_subject(const CorModel& model, const Sequence& inputs) {
  PackedBatch batch;
  batch.append(inputs);
  Graph g = probe_graph();
  Tensor embedded = g.value(model.embed(g, batch));
  std::vector<RowSpan> spans = batch.spans;
  return ProbeSubject{[&model, spans](Graph& gg, Var e) { return model.forward_embedded(gg, e, spans); },
                      std::move(embedded)};
}

namespace {

struct StackNetwork {
  explicit StackNetwork(const StackDescription& s) : stack(s) {}
  StackDescription stack;
  ParameterStore store;
  std::vector<TransformerBlock> blocks;  // indexed by node
  std::vector<Linear> projections;       // indexed by node
  std::vector<Tensor> positions;         // indexed by node
  std::vector<std::vector<AttentionSegment>> segments;
};

}  // namespace

ProbeSubject stack_probe_subject(const StackDescription& stack, std::size_t dim,
                                 std::size_t heads, std::uint64_t seed) {
  auto net = std::make_shared<StackNetwork>(stack);
  const std::size_t n = stack.n, count = stack.nodes.size();
  net->blocks.resize(count);
  net->projections.resize(count);
  net->positions.resize(count);
  net->segments.resize(count);
  Rng rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t i = 1; i < count; ++i) {
    const StackNode& node = stack.nodes[i];
    const std::string name = "node." + std::to_string(i);
    switch (node.kind) {
      case StackNode::Kind::input:
        throw ContractError("only node 0 may be the input");
      case StackNode::Kind::positions:
        net->positions[i] = Tensor({n, dim});
        for (auto& v : net->positions[i].values) v = n01(rng);
        break;
      case StackNode::Kind::concat:
        net->projections[i] = Linear::create(net->store, name, node.parts.size() * dim, dim, true, rng);
        break;
      case StackNode::Kind::block: {
        const std::size_t banks = node.bank_sources.size();
        net->blocks[i] = TransformerBlock::create(net->store, name, dim, heads, 2 * dim, banks, rng);
        net->blocks[i].attention_residual = node.residual;
        // Random layer-norm affines keep the probe away from symmetric points.
        for (Parameter* p : net->store.all())
          if (p->name.rfind(name + ".", 0) == 0 && p->name.find("norm") != std::string::npos)
            for (auto& v : p->value.values) v += 0.5 * n01(rng);
        net->segments[i].push_back(AttentionSegment{
            RowSpan{0, n}, std::vector<RowSpan>(banks, RowSpan{0, n}),
            std::make_shared<const AttentionMask>(node.mask)});
        break;
      }
    }
  }

  Tensor embedded({n, dim});
  for (auto& v : embedded.values) v = n01(rng);
  auto map = [net](Graph& g, Var input) {
    std::vector<Var> value(net->stack.nodes.size());
    value[0] = input;
    for (std::size_t i = 1; i < value.size(); ++i) {
      const StackNode& node = net->stack.nodes[i];
      switch (node.kind) {
        case StackNode::Kind::input:
          break;
        case StackNode::Kind::positions:
          value[i] = g.input(net->positions[i]);
          break;
        case StackNode::Kind::concat: {
          Var joined = value[node.parts.front()];
          for (std::size_t p = 1; p < node.parts.size(); ++p)
            joined = concat_cols(g, joined, value[node.parts[p]]);
          value[i] = net->projections[i](g, joined);
          break;
        }
        case StackNode::Kind::block: {
          std::vector<Var> banks;
          for (auto b : node.bank_sources) banks.push_back(value[b]);
          value[i] = net->blocks[i](g, value[node.query_source], banks, net->segments[i]);
          break;
        }
      }
    }
    return value.back();
  };
  return ProbeSubject{map, std::move(embedded)};
}

}  // namespace cloze
