#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cloze {

/// Raised when a caller breaks an operation's preconditions (shapes, ranges,
/// empty inputs). The CLI maps it to exit status 1.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a computation produces NaN/Inf. The CLI maps it to exit status 2.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major double array.
struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> v);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }
  std::size_t rank() const { return shape.size(); }

  // 2-D views. A rank-1 tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {values.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols(), cols()};
  }

  bool all_finite() const;
  void fill(double v);
};

enum class Precision { single, double_ };

struct ComputeConfig {
  Precision precision = Precision::double_;
  bool debug_nan_scan = false;
  std::uint64_t seed = 0;
};

/// Reads CLOZE_FORGE_PRECISION={single,double}; returns `fallback` when unset.
Precision precision_from_env(Precision fallback);
Precision parse_precision(const std::string& text);
const char* precision_name(Precision p);

}  // namespace cloze
