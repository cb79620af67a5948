#include "cloze/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cloze {

namespace {

double evaluate(const ScalarFunction& f) {
  Graph g(ComputeConfig{Precision::double_, false, 0});
  Var out = f(g);
  const Tensor& v = g.value(out);
  if (v.size() != 1) throw ContractError("gradient_check: function must return a scalar");
  if (!std::isfinite(v.values[0])) throw NumericError("gradient_check: non-finite function value");
  return v.values[0];
}

}  // namespace

GradCheckReport gradient_check(const ScalarFunction& f, std::span<Parameter* const> params,
                               const GradCheckOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g(ComputeConfig{Precision::double_, false, 0});
    Var out = f(g);
    if (!std::isfinite(g.value(out).values.at(0)))
      throw NumericError("gradient_check: non-finite function value");
    g.backward(out);
  }

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  const double h = options.step;
  for (Parameter* p : params) {
    std::vector<std::size_t> coords(p->value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_param != 0 && coords.size() > options.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_param);
    }
    for (std::size_t idx : coords) {
      const double saved = p->value.values[idx];
      p->value.values[idx] = saved + h;
      const double up = evaluate(f);
      p->value.values[idx] = saved - h;
      const double down = evaluate(f);
      p->value.values[idx] = saved;

      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad.values[idx];
      const double err = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
      ++report.coords_checked;
      if (err >= report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = p->name;
        report.worst_index = idx;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace cloze
