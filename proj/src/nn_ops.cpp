// Normalization, softmax-family and attention operations.

#include <algorithm>
#include <cmath>

#include "cloze/autodiff.hpp"

namespace cloze {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

// Eight interleaved partial sums, combined in a fixed order.
inline double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t e = 0;
  for (; e + 8 <= n; e += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[e + l] * b[e + l];
  for (; e < n; ++e) acc[e % 8] += a[e] * b[e];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

inline void axpy(double alpha, const double* __restrict x, double* __restrict y, std::size_t n) {
  for (std::size_t e = 0; e < n; ++e) y[e] += alpha * x[e];
}

}  // namespace

Var layer_norm(Graph& g, Var x, Var gain, Var bias, double epsilon) {
  const Tensor& xv = g.value(x);
  const std::size_t r = xv.rows(), c = xv.cols();
  require(c >= 1, "layer_norm: need at least one feature");
  require(g.value(gain).size() == c && g.value(bias).size() == c,
          "layer_norm: gain/bias length does not match features");
  const auto& gv = g.value(gain).values;
  const auto& bv = g.value(bias).values;

  auto xhat = std::make_shared<std::vector<double>>(r * c);
  auto inv_std = std::make_shared<std::vector<double>>(r);
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = xv.values.data() + i * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xr[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + epsilon);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xr[j] - mean) * inv;
      (*xhat)[i * c + j] = h;
      out.values[i * c + j] = gv[j] * h + bv[j];
    }
  }

  Var ins[] = {x, gain, bias};
  return g.emit("layer_norm", std::move(out), ins,
                [x, gain, bias, r, c, xhat, inv_std](Graph& g, const Tensor& dy, const Tensor&) {
                  if (Tensor* dg = g.grad_target(gain))
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j)
                        dg->values[j] += dy.values[i * c + j] * (*xhat)[i * c + j];
                  if (Tensor* db = g.grad_target(bias))
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j) db->values[j] += dy.values[i * c + j];
                  Tensor* dx = g.grad_target(x);
                  if (dx == nullptr) return;
                  const auto& gv = g.value(gain).values;
                  std::vector<double> dh(c);
                  for (std::size_t i = 0; i < r; ++i) {
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                      dh[j] = dy.values[i * c + j] * gv[j];
                      mean_dh += dh[j];
                      mean_dh_h += dh[j] * (*xhat)[i * c + j];
                    }
                    mean_dh /= static_cast<double>(c);
                    mean_dh_h /= static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j)
                      dx->values[i * c + j] +=
                          (*inv_std)[i] * (dh[j] - mean_dh - (*xhat)[i * c + j] * mean_dh_h);
                  }
                });
}

Var masked_softmax(Graph& g, Var scores, const AttentionMask& mask) {
  const Tensor& s = g.value(scores);
  const std::size_t r = s.rows(), c = s.cols();
  require(mask.n_query() == r && mask.n_key() == c,
          "masked_softmax: mask " + std::to_string(mask.n_query()) + "x" +
              std::to_string(mask.n_key()) + " does not match scores " + shape_string(s.shape));
  Tensor out(s.shape);
  for (std::size_t i = 0; i < r; ++i)
    kernels::masked_softmax_row(s.values.data() + i * c, mask.flat() + i * c, c,
                                out.values.data() + i * c);
  Var ins[] = {scores};
  return g.emit("masked_softmax", std::move(out), ins,
                [scores, r, c](Graph& g, const Tensor& dp, const Tensor& p) {
                  Tensor* ds = g.grad_target(scores);
                  if (ds == nullptr) return;
                  for (std::size_t i = 0; i < r; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < c; ++j)
                      dot += p.values[i * c + j] * dp.values[i * c + j];
                    for (std::size_t j = 0; j < c; ++j) {
                      const double pij = p.values[i * c + j];
                      if (pij != 0.0) ds->values[i * c + j] += pij * (dp.values[i * c + j] - dot);
                    }
                  }
                });
}

Var soft_cross_entropy(Graph& g, Var logits, const Tensor& targets,
                       std::span<const double> row_weights) {
  const Tensor& z = g.value(logits);
  const std::size_t r = z.rows(), c = z.cols();
  require(targets.rows() == r && targets.cols() == c,
          "soft_cross_entropy: targets " + shape_string(targets.shape) + " vs logits " +
              shape_string(z.shape));
  require(row_weights.size() == r, "soft_cross_entropy: one weight per row required");

  auto probs = std::make_shared<std::vector<double>>(r * c);
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    const double* zr = z.values.data() + i * c;
    kernels::softmax_row(zr, c, probs->data() + i * c);
    if (row_weights[i] == 0.0) continue;
    const double mx = *std::max_element(zr, zr + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(zr[j] - mx);
    const double lse = mx + std::log(s);
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double q = targets.values[i * c + j];
      if (q != 0.0) row -= q * (zr[j] - lse);
    }
    total += row_weights[i] * row;
  }
  std::vector<double> weights(row_weights.begin(), row_weights.end());
  Tensor tgt = targets;
  Var ins[] = {logits};
  return g.emit("soft_cross_entropy", Tensor({1}, {total}), ins,
                [logits, r, c, probs, weights = std::move(weights), tgt = std::move(tgt)](
                    Graph& g, const Tensor& d, const Tensor&) {
                  Tensor* dz = g.grad_target(logits);
                  if (dz == nullptr) return;
                  for (std::size_t i = 0; i < r; ++i) {
                    const double w = weights[i] * d.values[0];
                    if (w == 0.0) continue;
                    double qsum = 0.0;
                    for (std::size_t j = 0; j < c; ++j) qsum += tgt.values[i * c + j];
                    for (std::size_t j = 0; j < c; ++j)
                      dz->values[i * c + j] +=
                          w * ((*probs)[i * c + j] * qsum - tgt.values[i * c + j]);
                  }
                });
}

Var attention(Graph& g, Var queries, std::span<const Var> key_banks,
              std::span<const Var> value_banks, std::span<const AttentionSegment> segments,
              std::size_t heads) {
  const Tensor& qv = g.value(queries);
  const std::size_t d_model = qv.cols();
  require(heads >= 1 && d_model % heads == 0, "attention: model dim must divide into heads");
  require(key_banks.size() == value_banks.size() && !key_banks.empty(),
          "attention: need matching key and value banks");
  for (std::size_t b = 0; b < key_banks.size(); ++b) {
    const Tensor& kb = g.value(key_banks[b]);
    const Tensor& vb = g.value(value_banks[b]);
    require(kb.cols() == d_model && vb.cols() == d_model && kb.rows() == vb.rows(),
            "attention: bank " + std::to_string(b) + " shape mismatch");
  }
  const std::size_t dh = d_model / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  struct Layout {
    std::size_t prob_offset;  // into the probability buffer
    std::size_t n_key;
  };
  std::vector<Layout> layout;
  layout.reserve(segments.size());
  std::size_t prob_total = 0;
  for (const auto& seg : segments) {
    require(seg.mask != nullptr, "attention: segment without mask");
    require(seg.banks.size() == key_banks.size(), "attention: segment bank count mismatch");
    require(seg.mask->n_query() == seg.query.length &&
                seg.mask->banks().size() == seg.banks.size(),
            "attention: mask does not match segment");
    require(seg.query.offset + seg.query.length <= qv.rows(), "attention: query rows out of range");
    std::size_t nk = 0;
    for (std::size_t b = 0; b < seg.banks.size(); ++b) {
      require(seg.mask->banks()[b].n_key == seg.banks[b].length,
              "attention: mask/bank mismatch in bank " + std::to_string(b));
      require(seg.banks[b].offset + seg.banks[b].length <= g.value(key_banks[b]).rows(),
              "attention: key rows out of range");
      nk += seg.banks[b].length;
    }
    layout.push_back({prob_total, nk});
    prob_total += heads * seg.query.length * nk;
  }

  std::vector<Var> kvars(key_banks.begin(), key_banks.end());
  std::vector<Var> vvars(value_banks.begin(), value_banks.end());
  std::vector<AttentionSegment> segs(segments.begin(), segments.end());
  auto probs = std::make_shared<std::vector<double>>(prob_total, 0.0);

  // Row pointer of the key/value at flattened key column `col` of a segment.
  auto bank_row = [](const AttentionSegment& seg, std::size_t col, std::size_t& bank,
                     std::size_t& row) {
    bank = 0;
    while (col >= seg.banks[bank].length) col -= seg.banks[bank++].length;
    row = seg.banks[bank].offset + col;
  };

  Tensor out({qv.rows(), d_model});
  std::vector<double> scores;
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const auto& seg = segs[s];
    const std::size_t nq = seg.query.length, nk = layout[s].n_key;
    std::vector<const double*> krow(nk), vrow(nk);
    for (std::size_t col = 0; col < nk; ++col) {
      std::size_t b, row;
      bank_row(seg, col, b, row);
      krow[col] = g.value(kvars[b]).values.data() + row * d_model;
      vrow[col] = g.value(vvars[b]).values.data() + row * d_model;
    }
    scores.assign(nk, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < nq; ++i) {
        const double* q = qv.values.data() + (seg.query.offset + i) * d_model + off;
        const std::uint8_t* allow = seg.mask->flat() + i * nk;
        for (std::size_t col = 0; col < nk; ++col) {
          if (!allow[col]) continue;
          scores[col] = dot(q, krow[col] + off, dh) * scale;
        }
        double* p = probs->data() + layout[s].prob_offset + (h * nq + i) * nk;
        if (!kernels::masked_softmax_row(scores.data(), allow, nk, p)) continue;
        double* o = out.values.data() + (seg.query.offset + i) * d_model + off;
        for (std::size_t col = 0; col < nk; ++col) {
          if (!allow[col]) continue;
          axpy(p[col], vrow[col] + off, o, dh);
        }
      }
    }
  }

  std::vector<Var> ins{queries};
  ins.insert(ins.end(), kvars.begin(), kvars.end());
  ins.insert(ins.end(), vvars.begin(), vvars.end());
  return g.emit(
      "attention", std::move(out), ins,
      [queries, kvars, vvars, segs = std::move(segs), layout = std::move(layout), probs, heads, dh,
       d_model, scale, bank_row](Graph& g, const Tensor& dout, const Tensor&) {
        Tensor* dq = g.grad_target(queries);
        std::vector<Tensor*> dk(kvars.size()), dv(vvars.size());
        for (std::size_t b = 0; b < kvars.size(); ++b) {
          dk[b] = g.grad_target(kvars[b]);
          dv[b] = g.grad_target(vvars[b]);
        }
        const Tensor& qv = g.value(queries);
        std::vector<double> dp;
        for (std::size_t s = 0; s < segs.size(); ++s) {
          const auto& seg = segs[s];
          const std::size_t nq = seg.query.length, nk = layout[s].n_key;
          std::vector<const double*> krow(nk), vrow(nk);
          std::vector<double*> dkrow(nk, nullptr), dvrow(nk, nullptr);
          for (std::size_t col = 0; col < nk; ++col) {
            std::size_t b, row;
            bank_row(seg, col, b, row);
            krow[col] = g.value(kvars[b]).values.data() + row * d_model;
            vrow[col] = g.value(vvars[b]).values.data() + row * d_model;
            if (dk[b]) dkrow[col] = dk[b]->values.data() + row * d_model;
            if (dv[b]) dvrow[col] = dv[b]->values.data() + row * d_model;
          }
          dp.assign(nk, 0.0);
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            for (std::size_t i = 0; i < nq; ++i) {
              const double* p = probs->data() + layout[s].prob_offset + (h * nq + i) * nk;
              const double* go = dout.values.data() + (seg.query.offset + i) * d_model + off;
              const double* q = qv.values.data() + (seg.query.offset + i) * d_model + off;
              const std::uint8_t* allow = seg.mask->flat() + i * nk;
              double pdp = 0.0;
              for (std::size_t col = 0; col < nk; ++col) {
                if (!allow[col] || p[col] == 0.0) {
                  dp[col] = 0.0;
                  continue;
                }
                dp[col] = dot(go, vrow[col] + off, dh);
                pdp += p[col] * dp[col];
                if (dvrow[col]) axpy(p[col], go, dvrow[col] + off, dh);
              }
              double* gq = dq ? dq->values.data() + (seg.query.offset + i) * d_model + off : nullptr;
              for (std::size_t col = 0; col < nk; ++col) {
                if (!allow[col] || p[col] == 0.0) continue;
                const double ds = p[col] * (dp[col] - pdp) * scale;
                if (gq) axpy(ds, krow[col] + off, gq, dh);
                if (dkrow[col]) axpy(ds, q, dkrow[col] + off, dh);
              }
            }
          }
        }
      });
}

}  // namespace cloze
