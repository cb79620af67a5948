#include "cloze/tensor.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

namespace cloze {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return shape.empty() ? 0 : n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), values(shape_size(shape), fill) {
  for (auto e : shape)
    if (e == 0) throw ContractError("tensor extents must be positive: " + shape_string(shape));
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (shape_size(shape) != values.size())
    throw ContractError("tensor shape " + shape_string(shape) + " does not match " +
                        std::to_string(values.size()) + " values");
}

std::size_t Tensor::rows() const {
  if (shape.empty()) return 0;
  if (shape.size() == 1) return 1;
  return values.size() / shape.back();
}

std::size_t Tensor::cols() const { return shape.empty() ? 0 : shape.back(); }

bool Tensor::all_finite() const {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::fill(double v) {
  for (auto& x : values) x = v;
}

Precision parse_precision(const std::string& text) {
  if (text == "single") return Precision::single;
  if (text == "double") return Precision::double_;
  throw ContractError("precision must be 'single' or 'double', got '" + text + "'");
}

const char* precision_name(Precision p) { return p == Precision::single ? "single" : "double"; }

Precision precision_from_env(Precision fallback) {
  const char* env = std::getenv("CLOZE_FORGE_PRECISION");
  if (env == nullptr || *env == '\0') return fallback;
  return parse_precision(env);
}

}  // namespace cloze
