/*
 * Copyright 2026 The ddag Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "ddag/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "ddag/errors.hpp"

namespace ddag::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

void require_rank(const Var& a, int rank, const char* op) {
  require(a.value().rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                        ", got shape " + shape_str(a.shape()));
}

Node& in(Node& n, std::size_t k) { return *n.inputs[k]; }

ConstMapMat cmap(const Tensor& t, Index rows, Index cols) { return ConstMapMat(t.data(), rows, cols); }
MapMat map(Tensor& t, Index rows, Index cols) { return MapMat(t.data(), rows, cols); }

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out += b.value();
  return Var::make(std::move(out), {a, b}, [](Node& n) {
    if (in(n, 0).requires_grad) in(n, 0).accumulate(n.grad);
    if (in(n, 1).requires_grad) in(n, 1).accumulate(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (Index i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return Var::make(std::move(out), {a, b}, [](Node& n) {
    if (in(n, 0).requires_grad) in(n, 0).accumulate(n.grad);
    if (in(n, 1).requires_grad) {
      Tensor g = n.grad;
      for (auto& v : g.values()) v = -v;
      in(n, 1).accumulate(g);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (Index i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return Var::make(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = in(n, 0).value;
    const Tensor& bv = in(n, 1).value;
    if (in(n, 0).requires_grad) {
      Tensor g = n.grad;
      for (Index i = 0; i < g.numel(); ++i) g[i] *= bv[i];
      in(n, 0).accumulate(g);
    }
    if (in(n, 1).requires_grad) {
      Tensor g = n.grad;
      for (Index i = 0; i < g.numel(); ++i) g[i] *= av[i];
      in(n, 1).accumulate(g);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return Var::make(std::move(out), {a}, [s](Node& n) {
    Tensor g = n.grad;
    for (auto& v : g.values()) v *= s;
    in(n, 0).accumulate(g);
  });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return Var::make(Tensor::scalar(total), {a}, [](Node& n) {
    in(n, 0).accumulate(Tensor(in(n, 0).value.shape(), n.grad[0]));
  });
}

Var mean(const Var& a) {
  require(a.value().numel() > 0, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().numel()));
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return Var::make(std::move(out), {a}, [](Node& n) {
    in(n, 0).accumulate(n.grad.reshaped(in(n, 0).value.shape()));
  });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var leaky_relu(const Var& a, double negative_slope) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : negative_slope * v;
  return Var::make(std::move(out), {a}, [negative_slope](Node& n) {
    const Tensor& x = in(n, 0).value;
    Tensor g = n.grad;
    for (Index i = 0; i < g.numel(); ++i) g[i] *= x[i] > 0.0 ? 1.0 : negative_slope;
    in(n, 0).accumulate(g);
  });
}

Var elu(const Var& a, double alpha) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : alpha * std::expm1(v);
  return Var::make(std::move(out), {a}, [alpha](Node& n) {
    const Tensor& x = in(n, 0).value;
    Tensor g = n.grad;
    for (Index i = 0; i < g.numel(); ++i) g[i] *= x[i] > 0.0 ? 1.0 : alpha * std::exp(x[i]);
    in(n, 0).accumulate(g);
  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Index m = a.value().dim(0), k = a.value().dim(1), nn = b.value().dim(1);
  require(b.value().dim(0) == k, "matmul: inner dimensions " + shape_str(a.shape()) + " x " +
                                     shape_str(b.shape()));
  Tensor out({m, nn});
  map(out, m, nn).noalias() = cmap(a.value(), m, k) * cmap(b.value(), k, nn);
  return Var::make(std::move(out), {a, b}, [m, k, nn](Node& n) {
    auto g = cmap(n.grad, m, nn);
    if (in(n, 0).requires_grad) {
      Tensor ga({m, k});
      map(ga, m, k).noalias() = g * cmap(in(n, 1).value, k, nn).transpose();
      in(n, 0).accumulate(ga);
    }
    if (in(n, 1).requires_grad) {
      Tensor gb({k, nn});
      map(gb, k, nn).noalias() = cmap(in(n, 0).value, m, k).transpose() * g;
      in(n, 1).accumulate(gb);
    }
  });
}

Var linear(const Var& x, const Var& weight) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const Index rows = x.value().dim(0), din = x.value().dim(1), dout = weight.value().dim(0);
  require(weight.value().dim(1) == din, "linear: input " + shape_str(x.shape()) + " vs weight " +
                                            shape_str(weight.shape()));
  // Row by row so that a sample's output does not depend on its position in
  // the batch.
  Tensor out({rows, dout});
  const auto wt = cmap(weight.value(), dout, din).transpose();
  auto o = map(out, rows, dout);
  const auto xv = cmap(x.value(), rows, din);
  for (Index r = 0; r < rows; ++r) o.row(r).noalias() = xv.row(r) * wt;
  return Var::make(std::move(out), {x, weight}, [rows, din, dout](Node& n) {
    auto g = cmap(n.grad, rows, dout);
    if (in(n, 0).requires_grad) {
      Tensor gx({rows, din});
      map(gx, rows, din).noalias() = g * cmap(in(n, 1).value, dout, din);
      in(n, 0).accumulate(gx);
    }
    if (in(n, 1).requires_grad) {
      Tensor gw({dout, din});
      map(gw, dout, din).noalias() = g.transpose() * cmap(in(n, 0).value, rows, din);
      in(n, 1).accumulate(gw);
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  Var y = linear(x, weight);
  require(bias.value().numel() == y.value().dim(1), "linear: bias size");
  const Index rows = y.value().dim(0), cols = y.value().dim(1);
  Tensor out = y.value();
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) out.at(r, c) += bias.value()[c];
  return Var::make(std::move(out), {y, bias}, [rows, cols](Node& n) {
    if (in(n, 0).requires_grad) in(n, 0).accumulate(n.grad);
    if (in(n, 1).requires_grad) {
      Tensor gb(in(n, 1).value.shape());
      for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) gb[c] += n.grad.at(r, c);
      in(n, 1).accumulate(gb);
    }
  });
}

Var bmm(const Var& a, const Var& b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const Index bs = a.value().dim(0), m = a.value().dim(1), k = a.value().dim(2), nn = b.value().dim(2);
  require(b.value().dim(0) == bs && b.value().dim(1) == k,
          "bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out({bs, m, nn});
  for (Index i = 0; i < bs; ++i)
    MapMat(out.data() + i * m * nn, m, nn).noalias() =
        ConstMapMat(a.value().data() + i * m * k, m, k) * ConstMapMat(b.value().data() + i * k * nn, k, nn);
  return Var::make(std::move(out), {a, b}, [bs, m, k, nn](Node& n) {
    const bool ga_needed = in(n, 0).requires_grad, gb_needed = in(n, 1).requires_grad;
    Tensor ga({bs, m, k}), gb({bs, k, nn});
    for (Index i = 0; i < bs; ++i) {
      ConstMapMat g(n.grad.data() + i * m * nn, m, nn);
      if (ga_needed)
        MapMat(ga.data() + i * m * k, m, k).noalias() =
            g * ConstMapMat(in(n, 1).value.data() + i * k * nn, k, nn).transpose();
      if (gb_needed)
        MapMat(gb.data() + i * k * nn, k, nn).noalias() =
            ConstMapMat(in(n, 0).value.data() + i * m * k, m, k).transpose() * g;
    }
    if (ga_needed) in(n, 0).accumulate(ga);
    if (gb_needed) in(n, 1).accumulate(gb);
  });
}

Var bmm_nt(const Var& a, const Var& b) {
  require_rank(a, 3, "bmm_nt");
  require_rank(b, 3, "bmm_nt");
  const Index bs = a.value().dim(0), m = a.value().dim(1), k = a.value().dim(2), nn = b.value().dim(1);
  require(b.value().dim(0) == bs && b.value().dim(2) == k,
          "bmm_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  Tensor out({bs, m, nn});
  for (Index i = 0; i < bs; ++i)
    MapMat(out.data() + i * m * nn, m, nn).noalias() =
        ConstMapMat(a.value().data() + i * m * k, m, k) *
        ConstMapMat(b.value().data() + i * nn * k, nn, k).transpose();
  return Var::make(std::move(out), {a, b}, [bs, m, k, nn](Node& n) {
    const bool ga_needed = in(n, 0).requires_grad, gb_needed = in(n, 1).requires_grad;
    Tensor ga({bs, m, k}), gb({bs, nn, k});
    for (Index i = 0; i < bs; ++i) {
      ConstMapMat g(n.grad.data() + i * m * nn, m, nn);
      if (ga_needed)
        MapMat(ga.data() + i * m * k, m, k).noalias() =
            g * ConstMapMat(in(n, 1).value.data() + i * nn * k, nn, k);
      if (gb_needed)
        MapMat(gb.data() + i * nn * k, nn, k).noalias() =
            g.transpose() * ConstMapMat(in(n, 0).value.data() + i * m * k, m, k);
    }
    if (ga_needed) in(n, 0).accumulate(ga);
    if (gb_needed) in(n, 1).accumulate(gb);
  });
}

namespace {

// Shared backward of (masked) row softmax: dx = y * (dy - <dy, y>).
void softmax_rows_backward(Node& n, Index rows, Index cols) {
  const Tensor& y = n.value;
  Tensor gx(y.shape());
  for (Index r = 0; r < rows; ++r) {
    double dot = 0.0;
    for (Index c = 0; c < cols; ++c) dot += n.grad[r * cols + c] * y[r * cols + c];
    for (Index c = 0; c < cols; ++c) gx[r * cols + c] = y[r * cols + c] * (n.grad[r * cols + c] - dot);
  }
  in(n, 0).accumulate(gx);
}

}  // namespace

Var softmax_rows(const Var& x) {
  require(x.value().rank() >= 1, "softmax_rows: scalar input");
  const Index cols = x.value().dim(-1);
  require(cols > 0, "softmax_rows: empty rows");
  const Index rows = x.value().numel() / cols;
  Tensor out(x.shape());
  for (Index r = 0; r < rows; ++r) {
    const double* src = x.value().data() + r * cols;
    double* dst = out.data() + r * cols;
    const double mx = *std::max_element(src, src + cols);
    double z = 0.0;
    for (Index c = 0; c < cols; ++c) z += (dst[c] = std::exp(src[c] - mx));
    for (Index c = 0; c < cols; ++c) dst[c] /= z;
  }
  return Var::make(std::move(out), {x}, [rows, cols](Node& n) { softmax_rows_backward(n, rows, cols); });
}

Var masked_softmax_rows(const Var& x, const Tensor& mask) {
  require_rank(x, 2, "masked_softmax_rows");
  require(mask.shape() == x.shape(), "masked_softmax_rows: mask shape " + shape_str(mask.shape()));
  const Index rows = x.value().dim(0), cols = x.value().dim(1);
  Tensor out(x.shape());
  for (Index r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < cols; ++c)
      if (mask.at(r, c) > 0.0) mx = std::max(mx, x.value().at(r, c));
    if (!std::isfinite(mx))
      throw NumericalError("masked_softmax_rows: row " + std::to_string(r) +
                           " has no neighbours or a non-finite maximum");
    double z = 0.0;
    for (Index c = 0; c < cols; ++c)
      if (mask.at(r, c) > 0.0) z += (out.at(r, c) = std::exp(x.value().at(r, c) - mx));
    for (Index c = 0; c < cols; ++c) out.at(r, c) /= z;
  }
  return Var::make(std::move(out), {x}, [rows, cols](Node& n) { softmax_rows_backward(n, rows, cols); });
}

Var outer_sum(const Var& s, const Var& t) {
  const Index k = s.value().numel();
  require(t.value().numel() == k, "outer_sum: sizes differ");
  Tensor out({k, k});
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j) out.at(i, j) = s.value()[i] + t.value()[j];
  return Var::make(std::move(out), {s, t}, [k](Node& n) {
    if (in(n, 0).requires_grad) {
      Tensor gs(in(n, 0).value.shape());
      for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j) gs[i] += n.grad.at(i, j);
      in(n, 0).accumulate(gs);
    }
    if (in(n, 1).requires_grad) {
      Tensor gt(in(n, 1).value.shape());
      for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j) gt[j] += n.grad.at(i, j);
      in(n, 1).accumulate(gt);
    }
  });
}

Var slice_cols(const Var& x, Index begin, Index end) {
  require_rank(x, 2, "slice_cols");
  const Index rows = x.value().dim(0), cols = x.value().dim(1);
  require(0 <= begin && begin <= end && end <= cols, "slice_cols: bad range");
  const Index w = end - begin;
  Tensor out({rows, w});
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < w; ++c) out.at(r, c) = x.value().at(r, begin + c);
  return Var::make(std::move(out), {x}, [rows, cols, begin, w](Node& n) {
    Tensor g({rows, cols});
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < w; ++c) g.at(r, begin + c) = n.grad.at(r, c);
    in(n, 0).accumulate(g);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Index rows = parts.front().value().dim(0);
  std::vector<Index> offsets;
  Index total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    require(p.value().dim(0) == rows, "concat_cols: row counts differ");
    offsets.push_back(total);
    total += p.value().dim(1);
  }
  Tensor out({rows, total});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Index w = parts[k].value().dim(1);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < w; ++c) out.at(r, offsets[k] + c) = parts[k].value().at(r, c);
  }
  return Var::make(std::move(out), parts, [rows, total, offsets](Node& n) {
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!in(n, k).requires_grad) continue;
      const Index w = in(n, k).value.dim(1);
      Tensor g({rows, w});
      for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < w; ++c) g.at(r, c) = n.grad[r * total + offsets[k] + c];
      in(n, k).accumulate(g);
    }
  });
}

Var weighted_part_sum(const Var& x, const Var& w) {
  require_rank(x, 3, "weighted_part_sum");
  const Index bs = x.value().dim(0), p = x.value().dim(1), c = x.value().dim(2);
  require(w.value().numel() == p, "weighted_part_sum: weight count");
  Tensor out({bs, c});
  for (Index b = 0; b < bs; ++b)
    for (Index i = 0; i < p; ++i)
      for (Index k = 0; k < c; ++k) out.at(b, k) += w.value()[i] * x.value().at(b, i, k);
  return Var::make(std::move(out), {x, w}, [bs, p, c](Node& n) {
    const Tensor& xv = in(n, 0).value;
    const Tensor& wv = in(n, 1).value;
    if (in(n, 0).requires_grad) {
      Tensor g(xv.shape());
      for (Index b = 0; b < bs; ++b)
        for (Index i = 0; i < p; ++i)
          for (Index k = 0; k < c; ++k) g.at(b, i, k) = wv[i] * n.grad.at(b, k);
      in(n, 0).accumulate(g);
    }
    if (in(n, 1).requires_grad) {
      Tensor g(wv.shape());
      for (Index b = 0; b < bs; ++b)
        for (Index i = 0; i < p; ++i)
          for (Index k = 0; k < c; ++k) g[i] += n.grad.at(b, k) * xv.at(b, i, k);
      in(n, 1).accumulate(g);
    }
  });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const Index rows = logits.value().dim(0), classes = logits.value().dim(1);
  require(static_cast<Index>(labels.size()) == rows, "cross_entropy: label count");
  require(rows > 0, "cross_entropy: empty batch");
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw ContractError("cross_entropy: label " + std::to_string(y) + " outside [0," +
                          std::to_string(classes) + ")");
  Tensor probs(logits.shape());
  double loss = 0.0;
  for (Index r = 0; r < rows; ++r) {
    const double* z = logits.value().data() + r * classes;
    const double mx = *std::max_element(z, z + classes);
    double s = 0.0;
    for (Index c = 0; c < classes; ++c) s += (probs.at(r, c) = std::exp(z[c] - mx));
    for (Index c = 0; c < classes; ++c) probs.at(r, c) /= s;
    loss += -(z[labels[static_cast<std::size_t>(r)]] - mx - std::log(s));
  }
  loss /= static_cast<double>(rows);
  std::vector<int> ys(labels.begin(), labels.end());
  return Var::make(Tensor::scalar(loss), {logits},
                   [probs = std::move(probs), ys = std::move(ys), rows, classes](Node& n) {
                     Tensor g = probs;
                     const double s = n.grad[0] / static_cast<double>(rows);
                     for (Index r = 0; r < rows; ++r) {
                       g.at(r, ys[static_cast<std::size_t>(r)]) -= 1.0;
                       for (Index c = 0; c < classes; ++c) g.at(r, c) *= s;
                     }
                     in(n, 0).accumulate(g);
                   });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  const Index bs = x.value().dim(0), cin = x.value().dim(1), h = x.value().dim(2), w = x.value().dim(3);
  const Index cout = weight.value().dim(0), kh = weight.value().dim(2), kw = weight.value().dim(3);
  require(weight.value().dim(1) == cin, "conv2d: input has " + std::to_string(cin) +
                                            " channels, weight expects " +
                                            std::to_string(weight.value().dim(1)));
  require(bias.value().numel() == cout, "conv2d: bias size");
  require(stride >= 1 && pad >= 0, "conv2d: bad stride/padding");
  const Index ho = (h + 2 * pad - kh) / stride + 1, wo = (w + 2 * pad - kw) / stride + 1;
  require(ho >= 1 && wo >= 1, "conv2d: input smaller than kernel");
  const Index patch = cin * kh * kw, spatial = ho * wo, ncols = bs * spatial;

  // im2col: row = (c, ky, kx), column = (n, oy, ox).
  Tensor cols({patch, ncols});
  for (Index c = 0; c < cin; ++c)
    for (Index ky = 0; ky < kh; ++ky)
      for (Index kx = 0; kx < kw; ++kx) {
        double* row = cols.data() + ((c * kh + ky) * kw + kx) * ncols;
        for (Index b = 0; b < bs; ++b)
          for (Index oy = 0; oy < ho; ++oy) {
            const Index iy = oy * stride - pad + ky;
            double* dst = row + b * spatial + oy * wo;
            if (iy < 0 || iy >= h) continue;
            const double* src = x.value().data() + ((b * cin + c) * h + iy) * w;
            for (Index ox = 0; ox < wo; ++ox) {
              const Index ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < w) dst[ox] = src[ix];
            }
          }
      }

  // One product per sample keeps outputs independent of batch composition.
  Tensor out({bs, cout, ho, wo});
  const auto wm = cmap(weight.value(), cout, patch);
  const auto cm = cmap(cols, patch, ncols);
  RowMat prod(cout, spatial);
  for (Index b = 0; b < bs; ++b) {
    prod.noalias() = wm * cm.middleCols(b * spatial, spatial);
    for (Index o = 0; o < cout; ++o) {
      const double bo = bias.value()[o];
      const double* src = prod.data() + o * spatial;
      double* dst = out.data() + (b * cout + o) * spatial;
      for (Index s = 0; s < spatial; ++s) dst[s] = src[s] + bo;
    }
  }

  return Var::make(
      std::move(out), {x, weight, bias},
      [cols = std::move(cols), bs, cin, h, w, cout, kh, kw, ho, wo, stride, pad, patch, spatial,
       ncols](Node& n) {
        RowMat g(cout, ncols);
        for (Index b = 0; b < bs; ++b)
          for (Index o = 0; o < cout; ++o) {
            const double* src = n.grad.data() + (b * cout + o) * spatial;
            std::copy(src, src + spatial, g.data() + o * ncols + b * spatial);
          }
        if (in(n, 1).requires_grad) {
          Tensor gw(in(n, 1).value.shape());
          map(gw, cout, patch).noalias() = g * cmap(cols, patch, ncols).transpose();
          in(n, 1).accumulate(gw);
        }
        if (in(n, 2).requires_grad) {
          Tensor gb({cout});
          for (Index o = 0; o < cout; ++o) gb[o] = g.row(o).sum();
          in(n, 2).accumulate(gb);
        }
        if (in(n, 0).requires_grad) {
          RowMat gcols = cmap(in(n, 1).value, cout, patch).transpose() * g;
          Tensor gx({bs, cin, h, w});
          for (Index c = 0; c < cin; ++c)
            for (Index ky = 0; ky < kh; ++ky)
              for (Index kx = 0; kx < kw; ++kx) {
                const double* row = gcols.data() + ((c * kh + ky) * kw + kx) * ncols;
                for (Index b = 0; b < bs; ++b)
                  for (Index oy = 0; oy < ho; ++oy) {
                    const Index iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const double* src = row + b * spatial + oy * wo;
                    double* dst = gx.data() + ((b * cin + c) * h + iy) * w;
                    for (Index ox = 0; ox < wo; ++ox) {
                      const Index ix = ox * stride - pad + kx;
                      if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                  }
              }
          in(n, 0).accumulate(gx);
        }
      });
}

namespace {

// Normalizes `groups` contiguous blocks of `count` elements each. Per
// element the affine parameter index is `channel_of(i)`.
struct NormStats {
  std::vector<double> inv_std;
  Tensor xhat;
};

// Backward of y = xhat * gamma + beta for blocks normalized with their own
// statistics: dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)).
template <typename ElemIndex>
void normalized_block_backward(const Tensor& dy, const NormStats& st, const Tensor& gamma,
                               Index blocks, Index count, ElemIndex&& elem, Tensor& gx) {
  for (Index blk = 0; blk < blocks; ++blk) {
    double mean_d = 0.0, mean_dx = 0.0;
    for (Index e = 0; e < count; ++e) {
      auto [i, c] = elem(blk, e);
      const double d = dy[i] * gamma[c];
      mean_d += d;
      mean_dx += d * st.xhat[i];
    }
    mean_d /= static_cast<double>(count);
    mean_dx /= static_cast<double>(count);
    for (Index e = 0; e < count; ++e) {
      auto [i, c] = elem(blk, e);
      const double d = dy[i] * gamma[c];
      gx[i] = st.inv_std[static_cast<std::size_t>(blk)] * (d - mean_d - st.xhat[i] * mean_dx);
    }
  }
}

}  // namespace

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
  require_rank(x, 4, "group_norm");
  const Index bs = x.value().dim(0), c = x.value().dim(1), hw = x.value().dim(2) * x.value().dim(3);
  require(groups >= 1 && c % groups == 0, "group_norm: channels not divisible by groups");
  require(gamma.value().numel() == c && beta.value().numel() == c, "group_norm: affine size");
  const Index cpg = c / groups, count = cpg * hw, blocks = bs * groups;

  NormStats st{std::vector<double>(static_cast<std::size_t>(blocks)), Tensor(x.shape())};
  Tensor out(x.shape());
  for (Index blk = 0; blk < blocks; ++blk) {
    const double* src = x.value().data() + blk * count;
    double mu = 0.0;
    for (Index e = 0; e < count; ++e) mu += src[e];
    mu /= static_cast<double>(count);
    double var = 0.0;
    for (Index e = 0; e < count; ++e) var += (src[e] - mu) * (src[e] - mu);
    var /= static_cast<double>(count);
    const double inv = 1.0 / std::sqrt(var + eps);
    st.inv_std[static_cast<std::size_t>(blk)] = inv;
    for (Index e = 0; e < count; ++e) {
      const Index i = blk * count + e;
      const Index ch = (blk % groups) * cpg + e / hw;
      st.xhat[i] = (src[e] - mu) * inv;
      out[i] = st.xhat[i] * gamma.value()[ch] + beta.value()[ch];
    }
  }
  return Var::make(std::move(out), {x, gamma, beta},
                   [st = std::move(st), groups, cpg, hw, count, blocks, c, bs](Node& n) {
                     auto elem = [&](Index blk, Index e) {
                       return std::pair<Index, Index>{blk * count + e, (blk % groups) * cpg + e / hw};
                     };
                     if (in(n, 0).requires_grad) {
                       Tensor gx(in(n, 0).value.shape());
                       normalized_block_backward(n.grad, st, in(n, 1).value, blocks, count, elem, gx);
                       in(n, 0).accumulate(gx);
                     }
                     if (in(n, 1).requires_grad || in(n, 2).requires_grad) {
                       Tensor gg({c}), gbeta({c});
                       for (Index b = 0; b < bs; ++b)
                         for (Index ch = 0; ch < c; ++ch)
                           for (Index s = 0; s < hw; ++s) {
                             const Index i = (b * c + ch) * hw + s;
                             gg[ch] += n.grad[i] * st.xhat[i];
                             gbeta[ch] += n.grad[i];
                           }
                       if (in(n, 1).requires_grad) in(n, 1).accumulate(gg);
                       if (in(n, 2).requires_grad) in(n, 2).accumulate(gbeta);
                     }
                   });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, bool training, double momentum, double eps) {
  require_rank(x, 2, "batch_norm");
  const Index bs = x.value().dim(0), c = x.value().dim(1);
  require(gamma.value().numel() == c && beta.value().numel() == c, "batch_norm: affine size");
  require(running_mean.numel() == c && running_var.numel() == c, "batch_norm: running stats size");
  require(bs >= 1, "batch_norm: empty batch");

  Tensor out(x.shape());
  if (!training) {
    std::vector<double> inv(static_cast<std::size_t>(c));
    for (Index ch = 0; ch < c; ++ch) inv[static_cast<std::size_t>(ch)] = 1.0 / std::sqrt(running_var[ch] + eps);
    Tensor xhat(x.shape());
    for (Index b = 0; b < bs; ++b)
      for (Index ch = 0; ch < c; ++ch) {
        xhat.at(b, ch) = (x.value().at(b, ch) - running_mean[ch]) * inv[static_cast<std::size_t>(ch)];
        out.at(b, ch) = xhat.at(b, ch) * gamma.value()[ch] + beta.value()[ch];
      }
    return Var::make(std::move(out), {x, gamma, beta},
                     [inv = std::move(inv), xhat = std::move(xhat), bs, c](Node& n) {
                       if (in(n, 0).requires_grad) {
                         Tensor gx(xhat.shape());
                         for (Index b = 0; b < bs; ++b)
                           for (Index ch = 0; ch < c; ++ch)
                             gx.at(b, ch) = n.grad.at(b, ch) * in(n, 1).value[ch] * inv[static_cast<std::size_t>(ch)];
                         in(n, 0).accumulate(gx);
                       }
                       Tensor gg({c}), gbeta({c});
                       for (Index b = 0; b < bs; ++b)
                         for (Index ch = 0; ch < c; ++ch) {
                           gg[ch] += n.grad.at(b, ch) * xhat.at(b, ch);
                           gbeta[ch] += n.grad.at(b, ch);
                         }
                       if (in(n, 1).requires_grad) in(n, 1).accumulate(gg);
                       if (in(n, 2).requires_grad) in(n, 2).accumulate(gbeta);
                     });
  }

  NormStats st{std::vector<double>(static_cast<std::size_t>(c)), Tensor(x.shape())};
  for (Index ch = 0; ch < c; ++ch) {
    double mu = 0.0;
    for (Index b = 0; b < bs; ++b) mu += x.value().at(b, ch);
    mu /= static_cast<double>(bs);
    double var = 0.0;
    for (Index b = 0; b < bs; ++b) var += (x.value().at(b, ch) - mu) * (x.value().at(b, ch) - mu);
    const double unbiased = bs > 1 ? var / static_cast<double>(bs - 1) : var;
    var /= static_cast<double>(bs);
    const double inv = 1.0 / std::sqrt(var + eps);
    st.inv_std[static_cast<std::size_t>(ch)] = inv;
    for (Index b = 0; b < bs; ++b) {
      st.xhat.at(b, ch) = (x.value().at(b, ch) - mu) * inv;
      out.at(b, ch) = st.xhat.at(b, ch) * gamma.value()[ch] + beta.value()[ch];
    }
    running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mu;
    running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * unbiased;
  }
  return Var::make(std::move(out), {x, gamma, beta}, [st = std::move(st), bs, c](Node& n) {
    if (in(n, 0).requires_grad) {
      // Blocks are channels; elements of a block are strided by c.
      auto elem = [&](Index ch, Index b) { return std::pair<Index, Index>{b * c + ch, ch}; };
      Tensor gx(in(n, 0).value.shape());
      normalized_block_backward(n.grad, st, in(n, 1).value, c, bs, elem, gx);
      in(n, 0).accumulate(gx);
    }
    Tensor gg({c}), gbeta({c});
    for (Index b = 0; b < bs; ++b)
      for (Index ch = 0; ch < c; ++ch) {
        gg[ch] += n.grad.at(b, ch) * st.xhat.at(b, ch);
        gbeta[ch] += n.grad.at(b, ch);
      }
    if (in(n, 1).requires_grad) in(n, 1).accumulate(gg);
    if (in(n, 2).requires_grad) in(n, 2).accumulate(gbeta);
  });
}

Var global_avg_pool(const Var& x) {
  require_rank(x, 4, "global_avg_pool");
  const Index bs = x.value().dim(0), c = x.value().dim(1), hw = x.value().dim(2) * x.value().dim(3);
  require(hw > 0, "global_avg_pool: empty spatial extent");
  Tensor out({bs, c});
  for (Index i = 0; i < bs * c; ++i) {
    double s = 0.0;
    for (Index k = 0; k < hw; ++k) s += x.value()[i * hw + k];
    out[i] = s / static_cast<double>(hw);
  }
  return Var::make(std::move(out), {x}, [bs, c, hw](Node& n) {
    Tensor g(in(n, 0).value.shape());
    for (Index i = 0; i < bs * c; ++i) {
      const double v = n.grad[i] / static_cast<double>(hw);
      for (Index k = 0; k < hw; ++k) g[i * hw + k] = v;
    }
    in(n, 0).accumulate(g);
  });
}

std::vector<Index> stripe_heights(Index height, int parts) {
  if (parts < 1) throw ConfigError("part count must be >= 1");
  if (height < parts)
    throw ConfigError("feature map height " + std::to_string(height) + " is smaller than part count " +
                      std::to_string(parts));
  std::vector<Index> heights(static_cast<std::size_t>(parts), height / parts);
  for (Index i = 0; i < height % parts; ++i) ++heights[static_cast<std::size_t>(i)];
  return heights;
}

Var stripe_pool(const Var& x, int parts) {
  require_rank(x, 4, "stripe_pool");
  const Index bs = x.value().dim(0), c = x.value().dim(1), h = x.value().dim(2), w = x.value().dim(3);
  const auto heights = stripe_heights(h, parts);
  std::vector<Index> starts;
  Index row = 0;
  for (auto sh : heights) {
    starts.push_back(row);
    row += sh;
  }
  Tensor out({bs, parts, c});
  for (Index b = 0; b < bs; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      const double* plane = x.value().data() + (b * c + ch) * h * w;
      for (int p = 0; p < parts; ++p) {
        const auto pi = static_cast<std::size_t>(p);
        double s = 0.0;
        for (Index y = starts[pi]; y < starts[pi] + heights[pi]; ++y)
          for (Index xx = 0; xx < w; ++xx) s += plane[y * w + xx];
        out.at(b, p, ch) = s / static_cast<double>(heights[pi] * w);
      }
    }
  return Var::make(std::move(out), {x}, [heights, starts, bs, c, h, w, parts](Node& n) {
    Tensor g(in(n, 0).value.shape());
    for (Index b = 0; b < bs; ++b)
      for (Index ch = 0; ch < c; ++ch) {
        double* plane = g.data() + (b * c + ch) * h * w;
        for (int p = 0; p < parts; ++p) {
          const auto pi = static_cast<std::size_t>(p);
          const double v = n.grad.at(b, p, ch) / static_cast<double>(heights[pi] * w);
          for (Index y = starts[pi]; y < starts[pi] + heights[pi]; ++y)
            for (Index xx = 0; xx < w; ++xx) plane[y * w + xx] = v;
        }
      }
    in(n, 0).accumulate(g);
  });
}

Var index_rows(const Var& x, std::span<const Index> rows) {
  require(x.value().rank() >= 1, "index_rows: scalar input");
  const Index total = x.value().dim(0);
  const Index stride = total ? x.value().numel() / total : 0;
  Shape shape = x.shape();
  shape[0] = static_cast<Index>(rows.size());
  Tensor out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] >= 0 && rows[r] < total, "index_rows: row out of range");
    std::copy_n(x.value().data() + rows[r] * stride, stride, out.data() + static_cast<Index>(r) * stride);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  return Var::make(std::move(out), {x}, [idx = std::move(idx), stride](Node& n) {
    Tensor g(in(n, 0).value.shape());
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (Index k = 0; k < stride; ++k) g[idx[r] * stride + k] += n.grad[static_cast<Index>(r) * stride + k];
    in(n, 0).accumulate(g);
  });
}

Var merge_rows(const std::vector<Var>& pieces, const std::vector<std::vector<Index>>& positions,
               Index total_rows) {
  require(!pieces.empty() && pieces.size() == positions.size(), "merge_rows: piece/position count");
  Shape shape = pieces.front().shape();
  const Index stride = shape_numel(Shape(shape.begin() + 1, shape.end()));
  shape[0] = total_rows;
  Tensor out(shape);
  std::vector<int> seen(static_cast<std::size_t>(total_rows), 0);
  for (std::size_t k = 0; k < pieces.size(); ++k) {
    require(pieces[k].value().dim(0) == static_cast<Index>(positions[k].size()), "merge_rows: row count");
    for (std::size_t r = 0; r < positions[k].size(); ++r) {
      const Index dst = positions[k][r];
      require(dst >= 0 && dst < total_rows && !seen[static_cast<std::size_t>(dst)]++,
              "merge_rows: positions must partition the output rows");
      std::copy_n(pieces[k].value().data() + static_cast<Index>(r) * stride, stride, out.data() + dst * stride);
    }
  }
  for (int s : seen) require(s == 1, "merge_rows: positions must cover every output row");
  return Var::make(std::move(out), pieces, [positions, stride](Node& n) {
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!in(n, k).requires_grad) continue;
      Tensor g(in(n, k).value.shape());
      for (std::size_t r = 0; r < positions[k].size(); ++r)
        std::copy_n(n.grad.data() + positions[k][r] * stride, stride, g.data() + static_cast<Index>(r) * stride);
      in(n, k).accumulate(g);
    }
  });
}

}  // namespace ddag::ops
