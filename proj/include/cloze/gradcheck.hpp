#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "cloze/autodiff.hpp"

namespace cloze {

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates sampled per parameter; 0 checks every coordinate.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Builds a scalar from the parameters on a fresh graph.
using ScalarFunction = std::function<Var(Graph&)>;

/// Compares backward() against central differences. The relative error of a
/// coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|). Always
/// evaluates in double precision. Parameter values are restored on return.
GradCheckReport gradient_check(const ScalarFunction& f, std::span<Parameter* const> params,
                               const GradCheckOptions& options = {});

}  // namespace cloze
