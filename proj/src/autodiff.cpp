#include "cloze/autodiff.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cmath>

namespace cloze {

// ---------------------------------------------------------------------------
// ParameterStore

Parameter& ParameterStore::add(std::string name, Shape shape) {
  if (by_name_.count(name)) throw ContractError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->value = Tensor(shape);
  p->grad = Tensor(std::move(shape));
  Parameter& ref = *p;
  by_name_[ref.name] = &ref;
  params_.push_back(std::move(p));
  return ref;
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Graph

Graph::Graph(ComputeConfig config) : config_(config) { nodes_.reserve(256); }

Var Graph::input(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.op = "input";
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Graph::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{it->second};
  Node node;
  node.value = p.value;
  node.param = &p;
  node.requires_grad = true;
  node.op = "param";
  nodes_.push_back(std::move(node));
  param_nodes_[&p] = nodes_.size() - 1;
  return Var{nodes_.size() - 1};
}

const Tensor& Graph::grad(Var v) {
  auto& node = nodes_.at(v.id);
  if (node.grad.empty()) node.grad = Tensor(node.value.shape);
  return node.grad;
}

Tensor* Graph::grad_target(Var v) {
  auto& node = nodes_.at(v.id);
  if (!node.requires_grad) return nullptr;
  if (node.grad.empty()) node.grad = Tensor(node.value.shape);
  return &node.grad;
}

Var Graph::emit(const char* op, Tensor value, std::span<const Var> inputs, Backward backward) {
  if (config_.debug_nan_scan && !value.all_finite())
    throw NumericError(std::string("non-finite output from ") + op);
  Node node;
  node.value = std::move(value);
  node.op = op;
  for (auto in : inputs)
    if (nodes_.at(in.id).requires_grad) node.requires_grad = true;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

void Graph::backward(Var root) {
  const auto& v = value(root);
  if (v.size() != 1) throw ContractError("backward(root) needs a single-element root");
  backward(root, Tensor(v.shape, 1.0));
}

void Graph::backward(Var root, const Tensor& seed) {
  auto& r = nodes_.at(root.id);
  if (seed.shape != r.value.shape) throw ContractError("backward seed shape mismatch");
  if (!r.requires_grad) return;
  if (r.grad.empty()) r.grad = Tensor(r.value.shape);
  for (std::size_t i = 0; i < seed.size(); ++i) r.grad.values[i] += seed.values[i];

  for (std::size_t id = root.id + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
    node.backward(*this, node.grad, node.value);
    if (config_.debug_nan_scan) {
      // Inputs of this node now hold partial gradients; scanning the node's
      // own gradient catches the first non-finite value in reverse order.
      if (!node.grad.all_finite())
        throw NumericError(std::string("non-finite gradient at ") + node.op);
    }
  }
  for (auto& node : nodes_) {
    if (node.param == nullptr || node.grad.empty()) continue;
    auto& pg = node.param->grad.values;
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += node.grad.values[i];
  }
}

// ---------------------------------------------------------------------------
// Kernels

namespace kernels {

bool masked_softmax_row(const double* scores, const std::uint8_t* allow, std::size_t n,
                        double* out) {
  double mx = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t c = 0; c < n; ++c)
    if (allow[c]) {
      mx = any ? std::max(mx, scores[c]) : scores[c];
      any = true;
    }
  if (!any) {
    std::fill(out, out + n, 0.0);
    return false;
  }
  double z = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    out[c] = allow[c] ? std::exp(scores[c] - mx) : 0.0;
    z += out[c];
  }
  for (std::size_t c = 0; c < n; ++c) out[c] /= z;
  return true;
}

void softmax_row(const double* logits, std::size_t n, double* out, double temperature) {
  double mx = logits[0] / temperature;
  for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, logits[c] / temperature);
  double z = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    out[c] = std::exp(logits[c] / temperature - mx);
    z += out[c];
  }
  for (std::size_t c = 0; c < n; ++c) out[c] /= z;
}

namespace {

// Each output element is one fma chain over k in order, independent of how
// many rows are processed together. Batched results therefore match
// single-row results bitwise.
template <typename T, std::size_t R>
void scalar_columns(const T* a, const T* b, T* c, std::size_t k, std::size_t n, std::size_t j0) {
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = j0; j < n; ++j) {
      T acc = c[r * n + j];
      for (std::size_t kk = 0; kk < k; ++kk) acc = std::fma(a[r * k + kk], b[kk * n + j], acc);
      c[r * n + j] = acc;
    }
}

#if defined(__AVX512F__)
struct SimdD {
  using T = double;
  using V = __m512d;
  static constexpr std::size_t W = 8;
  static V load(const T* p) { return _mm512_loadu_pd(p); }
  static void store(T* p, V v) { _mm512_storeu_pd(p, v); }
  static V set1(T x) { return _mm512_set1_pd(x); }
  static V fma(V a, V b, V c) { return _mm512_fmadd_pd(a, b, c); }
};
struct SimdF {
  using T = float;
  using V = __m512;
  static constexpr std::size_t W = 16;
  static V load(const T* p) { return _mm512_loadu_ps(p); }
  static void store(T* p, V v) { _mm512_storeu_ps(p, v); }
  static V set1(T x) { return _mm512_set1_ps(x); }
  static V fma(V a, V b, V c) { return _mm512_fmadd_ps(a, b, c); }
};
#define CLOZE_SIMD 1
#elif defined(__AVX2__) && defined(__FMA__)
struct SimdD {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t W = 4;
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V set1(T x) { return _mm256_set1_pd(x); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
};
struct SimdF {
  using T = float;
  using V = __m256;
  static constexpr std::size_t W = 8;
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V set1(T x) { return _mm256_set1_ps(x); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
};
#define CLOZE_SIMD 1
#endif

#ifdef CLOZE_SIMD
template <typename S, std::size_t R, std::size_t NV>
inline void simd_block(const typename S::T* a, const typename S::T* b, typename S::T* c,
                       std::size_t k, std::size_t n) {
  typename S::V acc[R][NV];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < NV; ++v) acc[r][v] = S::load(c + r * n + v * S::W);
  for (std::size_t kk = 0; kk < k; ++kk) {
    typename S::V bv[NV];
    for (std::size_t v = 0; v < NV; ++v) bv[v] = S::load(b + kk * n + v * S::W);
    for (std::size_t r = 0; r < R; ++r) {
      const typename S::V x = S::set1(a[r * k + kk]);
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] = S::fma(x, bv[v], acc[r][v]);
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < NV; ++v) S::store(c + r * n + v * S::W, acc[r][v]);
}

template <typename S, std::size_t R>
void gemm_rows(const typename S::T* a, const typename S::T* b, typename S::T* c, std::size_t k,
               std::size_t n) {
  std::size_t j = 0;
  for (; j + 2 * S::W <= n; j += 2 * S::W) simd_block<S, R, 2>(a, b + j, c + j, k, n);
  for (; j + S::W <= n; j += S::W) simd_block<S, R, 1>(a, b + j, c + j, k, n);
  scalar_columns<typename S::T, R>(a, b, c, k, n, j);
}

template <typename T>
struct SimdFor;
template <>
struct SimdFor<double> {
  using type = SimdD;
};
template <>
struct SimdFor<float> {
  using type = SimdF;
};
#endif

template <typename T>
void gemm_acc_impl(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
#ifdef CLOZE_SIMD
  using S = typename SimdFor<T>::type;
  for (; i + 4 <= m; i += 4) gemm_rows<S, 4>(a + i * k, b, c + i * n, k, n);
  for (; i < m; ++i) gemm_rows<S, 1>(a + i * k, b, c + i * n, k, n);
#else
  for (; i < m; ++i) scalar_columns<T, 1>(a + i * k, b, c + i * n, k, n, 0);
#endif
}

}  // namespace

void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n, Precision precision) {
  if (precision == Precision::double_) {
    gemm_acc_impl(a, b, c, m, k, n);
    return;
  }
  thread_local std::vector<float> fa, fb, fc;
  fa.assign(a, a + m * k);
  fb.assign(b, b + k * n);
  fc.assign(c, c + m * n);
  gemm_acc_impl(fa.data(), fb.data(), fc.data(), m, k, n);
  std::copy(fc.begin(), fc.end(), c);
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Operations

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape == b.shape, std::string(op) + ": shape mismatch " + shape_string(a.shape) +
                                  " vs " + shape_string(b.shape));
}

Tensor transpose(const Tensor& t) {
  const std::size_t r = t.rows(), c = t.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.values[j * r + i] = t.values[i * c + j];
  return out;
}

}  // namespace

Var matmul(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  require(bv.rows() == k, "matmul: inner dimension mismatch " + shape_string(av.shape) + " . " +
                              shape_string(bv.shape));
  const Precision prec = g.config().precision;
  Tensor out({m, n});
  kernels::gemm_acc(av.values.data(), bv.values.data(), out.values.data(), m, k, n, prec);
  Var ins[] = {a, b};
  return g.emit("matmul", std::move(out), ins, [a, b, m, k, n, prec](Graph& g, const Tensor& dc, const Tensor&) {
    if (Tensor* da = g.grad_target(a)) {
      Tensor bt = transpose(g.value(b));
      kernels::gemm_acc(dc.values.data(), bt.values.data(), da->values.data(), m, n, k, prec);
    }
    if (Tensor* db = g.grad_target(b)) {
      Tensor at = transpose(g.value(a));
      kernels::gemm_acc(at.values.data(), dc.values.data(), db->values.data(), k, m, n, prec);
    }
  });
}

Var add(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  require_same_shape(av, bv, "add");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += bv.values[i];
  Var ins[] = {a, b};
  return g.emit("add", std::move(out), ins, [a, b](Graph& g, const Tensor& d, const Tensor&) {
    for (Var v : {a, b})
      if (Tensor* t = g.grad_target(v))
        for (std::size_t i = 0; i < d.size(); ++i) t->values[i] += d.values[i];
  });
}

Var sub(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  require_same_shape(av, bv, "sub");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] -= bv.values[i];
  Var ins[] = {a, b};
  return g.emit("sub", std::move(out), ins, [a, b](Graph& g, const Tensor& d, const Tensor&) {
    if (Tensor* t = g.grad_target(a))
      for (std::size_t i = 0; i < d.size(); ++i) t->values[i] += d.values[i];
    if (Tensor* t = g.grad_target(b))
      for (std::size_t i = 0; i < d.size(); ++i) t->values[i] -= d.values[i];
  });
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  require_same_shape(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= bv.values[i];
  Var ins[] = {a, b};
  return g.emit("mul", std::move(out), ins, [a, b](Graph& g, const Tensor& d, const Tensor&) {
    if (Tensor* t = g.grad_target(a)) {
      const auto& bv = g.value(b).values;
      for (std::size_t i = 0; i < d.size(); ++i) t->values[i] += d.values[i] * bv[i];
    }
    if (Tensor* t = g.grad_target(b)) {
      const auto& av = g.value(a).values;
      for (std::size_t i = 0; i < d.size(); ++i) t->values[i] += d.values[i] * av[i];
    }
  });
}

Var scale(Graph& g, Var a, double s) {
  Tensor out = g.value(a);
  for (auto& x : out.values) x *= s;
  Var ins[] = {a};
  return g.emit("scale", std::move(out), ins, [a, s](Graph& g, const Tensor& d, const Tensor&) {
    if (Tensor* t = g.grad_target(a))
      for (std::size_t i = 0; i < d.size(); ++i) t->values[i] += s * d.values[i];
  });
}

Var add_row(Graph& g, Var a, Var row) {
  const Tensor& av = g.value(a);
  const Tensor& rv = g.value(row);
  require(rv.size() == av.cols(), "add_row: bias length does not match columns");
  Tensor out = av;
  const std::size_t r = av.rows(), c = av.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.values[i * c + j] += rv.values[j];
  Var ins[] = {a, row};
  return g.emit("add_row", std::move(out), ins, [a, row, r, c](Graph& g, const Tensor& d, const Tensor&) {
    if (Tensor* t = g.grad_target(a))
      for (std::size_t i = 0; i < d.size(); ++i) t->values[i] += d.values[i];
    if (Tensor* t = g.grad_target(row))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) t->values[j] += d.values[i * c + j];
  });
}

Var relu(Graph& g, Var a) {
  Tensor out = g.value(a);
  for (auto& x : out.values) x = x > 0.0 ? x : 0.0;
  Var ins[] = {a};
  return g.emit("relu", std::move(out), ins, [a](Graph& g, const Tensor& d, const Tensor&) {
    if (Tensor* t = g.grad_target(a)) {
      const auto& x = g.value(a).values;
      for (std::size_t i = 0; i < d.size(); ++i)
        if (x[i] > 0.0) t->values[i] += d.values[i];
    }
  });
}

Var sum(Graph& g, Var a) {
  double s = 0.0;
  for (double x : g.value(a).values) s += x;
  Var ins[] = {a};
  return g.emit("sum", Tensor({1}, {s}), ins, [a](Graph& g, const Tensor& d, const Tensor&) {
    if (Tensor* t = g.grad_target(a))
      for (auto& x : t->values) x += d.values[0];
  });
}

Var concat_cols(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  require(av.rows() == bv.rows(), "concat_cols: row count mismatch");
  const std::size_t r = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor out({r, ca + cb});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(av.values.data() + i * ca, ca, out.values.data() + i * (ca + cb));
    std::copy_n(bv.values.data() + i * cb, cb, out.values.data() + i * (ca + cb) + ca);
  }
  Var ins[] = {a, b};
  return g.emit("concat_cols", std::move(out), ins, [a, b, r, ca, cb](Graph& g, const Tensor& d, const Tensor&) {
    if (Tensor* t = g.grad_target(a))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < ca; ++j) t->values[i * ca + j] += d.values[i * (ca + cb) + j];
    if (Tensor* t = g.grad_target(b))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cb; ++j)
          t->values[i * cb + j] += d.values[i * (ca + cb) + ca + j];
  });
}

Var slice_rows(Graph& g, Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = g.value(a);
  require(count > 0 && begin + count <= av.rows(), "slice_rows: range out of bounds");
  const std::size_t c = av.cols();
  Tensor out({count, c});
  std::copy_n(av.values.data() + begin * c, count * c, out.values.data());
  Var ins[] = {a};
  return g.emit("slice_rows", std::move(out), ins, [a, begin, c](Graph& g, const Tensor& d, const Tensor&) {
    if (Tensor* t = g.grad_target(a))
      for (std::size_t i = 0; i < d.size(); ++i) t->values[begin * c + i] += d.values[i];
  });
}

Var embedding(Graph& g, Var table, std::span<const std::size_t> indices) {
  const Tensor& tv = g.value(table);
  const std::size_t k = tv.rows(), d = tv.cols();
  require(!indices.empty(), "embedding: no indices");
  Tensor out({indices.size(), d});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= k)
      throw ContractError("embedding: index " + std::to_string(indices[i]) +
                          " out of vocabulary of size " + std::to_string(k));
    std::copy_n(tv.values.data() + indices[i] * d, d, out.values.data() + i * d);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Var ins[] = {table};
  return g.emit("embedding", std::move(out), ins,
                [table, idx = std::move(idx), d](Graph& g, const Tensor& dout, const Tensor&) {
                  if (Tensor* t = g.grad_target(table))
                    for (std::size_t i = 0; i < idx.size(); ++i)
                      for (std::size_t j = 0; j < d; ++j)
                        t->values[idx[i] * d + j] += dout.values[i * d + j];
                });
}

Var log_softmax(Graph& g, Var logits) {
  const Tensor& z = g.value(logits);
  const std::size_t r = z.rows(), c = z.cols();
  Tensor out(z.shape);
  for (std::size_t i = 0; i < r; ++i) {
    const double* zr = z.values.data() + i * c;
    double mx = *std::max_element(zr, zr + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(zr[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out.values[i * c + j] = zr[j] - lse;
  }
  Var ins[] = {logits};
  return g.emit("log_softmax", std::move(out), ins,
                [logits, r, c](Graph& g, const Tensor& d, const Tensor& out) {
                  Tensor* t = g.grad_target(logits);
                  if (t == nullptr) return;
                  for (std::size_t i = 0; i < r; ++i) {
                    double ds = 0.0;
                    for (std::size_t j = 0; j < c; ++j) ds += d.values[i * c + j];
                    for (std::size_t j = 0; j < c; ++j)
                      t->values[i * c + j] +=
                          d.values[i * c + j] - std::exp(out.values[i * c + j]) * ds;
                  }
                });
}

}  // namespace cloze
