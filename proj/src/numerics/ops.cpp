// SPDX-License-Identifier: Apache-2.0
#include "mslb/numerics/ops.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_set>

namespace mslb::num {

namespace {

template <typename T>
using NodeT = detail::Node<T>;
template <typename T>
using NodePtr = std::shared_ptr<NodeT<T>>;

template <typename T>
Tensor<T> make_result(Matrix<T> value, const char* op, std::vector<NodePtr<T>> parents,
                      std::function<void(NodeT<T>&)> bw) {
  check_finite(value, op);
  auto node = std::make_shared<NodeT<T>>();
  node->value = std::move(value);
  node->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward = std::move(bw);
    }
  }
  return Tensor<T>(std::move(node));
}

std::string shape_str(Index r, Index c) { return "[" + std::to_string(r) + "x" + std::to_string(c) + "]"; }

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": " + shape_str(a.rows(), a.cols()) + " vs " + shape_str(b.rows(), b.cols()));
  }
}

void check_segments(std::span<const Segment> segments, Index rows, const char* op) {
  for (const auto& s : segments) {
    if (s.offset < 0 || s.length < 0 || s.offset + s.length > rows || s.prefix < 0 || s.prefix > s.length) {
      throw ShapeError(std::string(op) + ": segment out of range");
    }
  }
}

}  // namespace

std::vector<Segment> single_segment(Index length, Index prefix) { return {Segment{0, length, prefix}}; }

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.rows(), a.cols()) + " x " +
                     shape_str(b.rows(), b.cols()));
  }
  Matrix<T> out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  return make_result<T>(std::move(out), "matmul", {a.node(), b.node()}, [](NodeT<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      Matrix<T> g(pa->value.rows(), pa->value.cols());
      g.noalias() = self.grad * pb->value.transpose();
      pa->accumulate(std::move(g));
    }
    if (pb->requires_grad) {
      Matrix<T> g(pb->value.rows(), pb->value.cols());
      g.noalias() = pa->value.transpose() * self.grad;
      pb->accumulate(std::move(g));
    }
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_str(a.rows(), a.cols()) + " x " +
                     shape_str(b.rows(), b.cols()) + "^T");
  }
  Matrix<T> out(a.rows(), b.rows());
  out.noalias() = a.value() * b.value().transpose();
  return make_result<T>(std::move(out), "matmul_nt", {a.node(), b.node()}, [](NodeT<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      Matrix<T> g(pa->value.rows(), pa->value.cols());
      g.noalias() = self.grad * pb->value;
      pa->accumulate(std::move(g));
    }
    if (pb->requires_grad) {
      Matrix<T> g(pb->value.rows(), pb->value.cols());
      g.noalias() = self.grad.transpose() * pa->value;
      pb->accumulate(std::move(g));
    }
  });
}

template <typename T>
Tensor<T> matmul_col_blocks(const Tensor<T>& a, const Tensor<T>& b, std::span<const Index> edges) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul_col_blocks: inner dimensions differ " + shape_str(a.rows(), a.cols()) + " x " +
                     shape_str(b.rows(), b.cols()));
  }
  if (edges.size() < 2 || edges.front() != 0 || edges.back() != b.cols()) {
    throw ShapeError("matmul_col_blocks: block edges must span [0, cols]");
  }
  Matrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    const Index c0 = edges[i];
    const Index w = edges[i + 1] - c0;
    if (w < 0) throw ShapeError("matmul_col_blocks: decreasing block edges");
    if (w == 0) continue;
    const Matrix<T> block = b.value().middleCols(c0, w);
    Matrix<T> prod(a.rows(), w);
    prod.noalias() = a.value() * block;
    out.middleCols(c0, w) = prod;
  }
  return make_result<T>(std::move(out), "matmul_col_blocks", {a.node(), b.node()}, [](NodeT<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      Matrix<T> g(pa->value.rows(), pa->value.cols());
      g.noalias() = self.grad * pb->value.transpose();
      pa->accumulate(std::move(g));
    }
    if (pb->requires_grad) {
      Matrix<T> g(pb->value.rows(), pb->value.cols());
      g.noalias() = pa->value.transpose() * self.grad;
      pb->accumulate(std::move(g));
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  return make_result<T>(a.value() + b.value(), "add", {a.node(), b.node()}, [](NodeT<T>& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(self.grad);
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  return make_result<T>(a.value() - b.value(), "sub", {a.node(), b.node()}, [](NodeT<T>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(-self.grad);
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: row " + shape_str(row.rows(), row.cols()) + " for " + shape_str(a.rows(), a.cols()));
  }
  Matrix<T> out = a.value().rowwise() + row.value().row(0);
  return make_result<T>(std::move(out), "add_row", {a.node(), row.node()}, [](NodeT<T>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad.colwise().sum());
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  return make_result<T>(a.value().cwiseProduct(b.value()), "mul", {a.node(), b.node()}, [](NodeT<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) pa->accumulate(self.grad.cwiseProduct(pb->value));
    if (pb->requires_grad) pb->accumulate(self.grad.cwiseProduct(pa->value));
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return make_result<T>(a.value() * s, "scale", {a.node()}, [s](NodeT<T>& self) {
    self.parents[0]->accumulate(self.grad * s);
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result<T>(std::move(out), "sum", {a.node()}, [](NodeT<T>& self) {
    auto& p = self.parents[0];
    p->accumulate(Matrix<T>::Constant(p->value.rows(), p->value.cols(), self.grad(0, 0)));
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().mean();
  return make_result<T>(std::move(out), "mean", {a.node()}, [](NodeT<T>& self) {
    auto& p = self.parents[0];
    const T g = self.grad(0, 0) / static_cast<T>(p->value.size());
    p->accumulate(Matrix<T>::Constant(p->value.rows(), p->value.cols(), g));
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return make_result<T>(a.value().cwiseMax(T(0)), "relu", {a.node()}, [](NodeT<T>& self) {
    auto& p = self.parents[0];
    p->accumulate((p->value.array() > T(0)).select(self.grad, T(0)));
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  const T c = T(0.7978845608028654);  // sqrt(2/pi)
  const T k = T(0.044715);
  const auto& x = a.value().array();
  auto th = std::make_shared<Matrix<T>>((c * (x + k * x.cube())).tanh().matrix());
  Matrix<T> out = (T(0.5) * x * (T(1) + th->array())).matrix();
  return make_result<T>(std::move(out), "gelu", {a.node()}, [th, c, k](NodeT<T>& self) {
    auto& p = self.parents[0];
    const auto& xv = p->value.array();
    const auto& t = th->array();
    Matrix<T> d = (T(0.5) * (T(1) + t) + T(0.5) * xv * (T(1) - t.square()) * c * (T(1) + T(3) * k * xv.square())).matrix();
    p->accumulate(self.grad.cwiseProduct(d));
  });
}

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps) {
  if (gain.rows() != 1 || gain.cols() != x.cols()) throw ShapeError("rms_norm: gain width mismatch");
  const Index n = x.rows();
  const Index d = x.cols();
  auto inv_rms = std::make_shared<Eigen::Matrix<T, Eigen::Dynamic, 1>>(n);
  Matrix<T> out(n, d);
  for (Index i = 0; i < n; ++i) {
    const T ms = x.value().row(i).squaredNorm() / static_cast<T>(d) + eps;
    (*inv_rms)(i) = T(1) / std::sqrt(ms);
    out.row(i) = x.value().row(i).cwiseProduct(gain.value().row(0)) * (*inv_rms)(i);
  }
  return make_result<T>(std::move(out), "rms_norm", {x.node(), gain.node()}, [inv_rms](NodeT<T>& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    const Index rows = px->value.rows();
    const Index d = px->value.cols();
    Matrix<T> gx(rows, d);
    Matrix<T> gg = Matrix<T>::Zero(1, d);
    for (Index i = 0; i < rows; ++i) {
      const T r = (*inv_rms)(i);
      auto xhat = (px->value.row(i) * r).eval();
      gg += self.grad.row(i).cwiseProduct(xhat);
      auto gy = self.grad.row(i).cwiseProduct(pg->value.row(0)).eval();
      const T m = gy.dot(xhat) / static_cast<T>(d);
      gx.row(i) = (gy - xhat * m) * r;
    }
    if (px->requires_grad) px->accumulate(std::move(gx));
    if (pg->requires_grad) pg->accumulate(std::move(gg));
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  if (x.cols() == 0) throw ShapeError("softmax of empty input");
  Matrix<T> y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const T mx = x.value().row(i).maxCoeff();
    y.row(i) = (x.value().row(i).array() - mx).exp();
    y.row(i) /= y.row(i).sum();
  }
  auto y_saved = std::make_shared<Matrix<T>>(y);
  return make_result<T>(std::move(y), "softmax", {x.node()}, [y_saved](NodeT<T>& self) {
    const Matrix<T>& yy = *y_saved;
    Matrix<T> g(yy.rows(), yy.cols());
    for (Index i = 0; i < yy.rows(); ++i) {
      const T dot = self.grad.row(i).dot(yy.row(i));
      g.row(i) = yy.row(i).cwiseProduct((self.grad.row(i).array() - dot).matrix());
    }
    self.parents[0]->accumulate(std::move(g));
  });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int n_heads,
                    std::span<const Segment> segments) {
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  if (n_heads <= 0 || q.cols() % n_heads != 0) throw ShapeError("attention: width not divisible by head count");
  check_segments(segments, q.rows(), "attention");
  const Index dh = q.cols() / n_heads;
  const T scl = T(1) / std::sqrt(static_cast<T>(dh));
  const T neg_inf = -std::numeric_limits<T>::infinity();

  auto probs = std::make_shared<std::vector<Matrix<T>>>();
  probs->reserve(segments.size() * static_cast<std::size_t>(n_heads));
  Matrix<T> out = Matrix<T>::Zero(q.rows(), q.cols());
  for (const auto& seg : segments) {
    const Index len = seg.length;
    for (int h = 0; h < n_heads; ++h) {
      auto qb = q.value().block(seg.offset, h * dh, len, dh);
      auto kb = k.value().block(seg.offset, h * dh, len, dh);
      auto vb = v.value().block(seg.offset, h * dh, len, dh);
      Matrix<T> s(len, len);
      s.noalias() = qb * kb.transpose();
      s *= scl;
      for (Index i = 0; i < len; ++i) {
        for (Index j = 0; j < len; ++j) {
          if (!(j < seg.prefix || j <= i)) s(i, j) = neg_inf;
        }
        const T mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp();
        s.row(i) /= s.row(i).sum();
      }
      out.block(seg.offset, h * dh, len, dh).noalias() = s * vb;
      probs->push_back(std::move(s));
    }
  }
  std::vector<Segment> segs(segments.begin(), segments.end());
  return make_result<T>(
      std::move(out), "attention", {q.node(), k.node(), v.node()},
      [probs, segs = std::move(segs), n_heads, dh, scl](NodeT<T>& self) {
        auto& pq = self.parents[0];
        auto& pk = self.parents[1];
        auto& pv = self.parents[2];
        Matrix<T> gq = Matrix<T>::Zero(pq->value.rows(), pq->value.cols());
        Matrix<T> gk = Matrix<T>::Zero(gq.rows(), gq.cols());
        Matrix<T> gv = Matrix<T>::Zero(gq.rows(), gq.cols());
        std::size_t idx = 0;
        for (const auto& seg : segs) {
          const Index len = seg.length;
          for (int h = 0; h < n_heads; ++h, ++idx) {
            const Matrix<T>& p = (*probs)[idx];
            auto go = self.grad.block(seg.offset, h * dh, len, dh);
            auto qb = pq->value.block(seg.offset, h * dh, len, dh);
            auto kb = pk->value.block(seg.offset, h * dh, len, dh);
            auto vb = pv->value.block(seg.offset, h * dh, len, dh);
            gv.block(seg.offset, h * dh, len, dh).noalias() = p.transpose() * go;
            Matrix<T> dp(len, len);
            dp.noalias() = go * vb.transpose();
            for (Index i = 0; i < len; ++i) {
              const T dot = dp.row(i).dot(p.row(i));
              dp.row(i) = p.row(i).cwiseProduct((dp.row(i).array() - dot).matrix()) * scl;
            }
            gq.block(seg.offset, h * dh, len, dh).noalias() = dp * kb;
            gk.block(seg.offset, h * dh, len, dh).noalias() = dp.transpose() * qb;
          }
        }
        if (pq->requires_grad) pq->accumulate(std::move(gq));
        if (pk->requires_grad) pk->accumulate(std::move(gk));
        if (pv->requires_grad) pv->accumulate(std::move(gv));
      });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  const Index vocab = table.rows();
  Matrix<T> out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < -1 || id >= vocab) {
      throw IndexError("embedding: id " + std::to_string(id) + " outside [0, " + std::to_string(vocab) + ")");
    }
    if (id < 0) {
      out.row(static_cast<Index>(i)).setZero();
    } else {
      out.row(static_cast<Index>(i)) = table.value().row(id);
    }
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return make_result<T>(std::move(out), "embedding", {table.node()}, [saved = std::move(saved)](NodeT<T>& self) {
    auto& p = self.parents[0];
    Matrix<T> g = Matrix<T>::Zero(p->value.rows(), p->value.cols());
    for (std::size_t i = 0; i < saved.size(); ++i) {
      if (saved[i] >= 0) g.row(saved[i]) += self.grad.row(static_cast<Index>(i));
    }
    p->accumulate(std::move(g));
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const Index> rows) {
  Matrix<T> out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows()) throw IndexError("gather_rows: row out of range");
    out.row(static_cast<Index>(i)) = x.value().row(rows[i]);
  }
  std::vector<Index> saved(rows.begin(), rows.end());
  return make_result<T>(std::move(out), "gather_rows", {x.node()}, [saved = std::move(saved)](NodeT<T>& self) {
    auto& p = self.parents[0];
    Matrix<T> g = Matrix<T>::Zero(p->value.rows(), p->value.cols());
    for (std::size_t i = 0; i < saved.size(); ++i) g.row(saved[i]) += self.grad.row(static_cast<Index>(i));
    p->accumulate(std::move(g));
  });
}

template <typename T>
Tensor<T> segment_mean(const Tensor<T>& x, std::span<const Segment> segments, std::span<const Index> counts) {
  check_segments(segments, x.rows(), "segment_mean");
  if (!counts.empty() && counts.size() != segments.size()) throw ShapeError("segment_mean: counts size");
  std::vector<std::pair<Index, Index>> spans;
  for (std::size_t b = 0; b < segments.size(); ++b) {
    Index c = segments[b].length;
    if (!counts.empty() && counts[b] > 0) c = std::min(counts[b], c);
    if (c == 0) throw ShapeError("segment_mean: empty segment");
    spans.emplace_back(segments[b].offset, c);
  }
  Matrix<T> out(static_cast<Index>(spans.size()), x.cols());
  for (std::size_t b = 0; b < spans.size(); ++b) {
    out.row(static_cast<Index>(b)) =
        x.value().middleRows(spans[b].first, spans[b].second).colwise().sum() / static_cast<T>(spans[b].second);
  }
  return make_result<T>(std::move(out), "segment_mean", {x.node()}, [spans](NodeT<T>& self) {
    auto& p = self.parents[0];
    Matrix<T> g = Matrix<T>::Zero(p->value.rows(), p->value.cols());
    for (std::size_t b = 0; b < spans.size(); ++b) {
      const auto row = (self.grad.row(static_cast<Index>(b)) / static_cast<T>(spans[b].second)).eval();
      for (Index i = 0; i < spans[b].second; ++i) g.row(spans[b].first + i) += row;
    }
    p->accumulate(std::move(g));
  });
}

template <typename T>
Tensor<T> scale_rows_by_gate(const Tensor<T>& x, const Tensor<T>& gates, Index k, std::span<const Segment> segments) {
  check_segments(segments, x.rows(), "scale_rows_by_gate");
  if (gates.rows() != static_cast<Index>(segments.size()) || k < 0 || k >= gates.cols()) {
    throw ShapeError("scale_rows_by_gate: gate matrix " + shape_str(gates.rows(), gates.cols()) + " for " +
                     std::to_string(segments.size()) + " segments, expert " + std::to_string(k));
  }
  Matrix<T> out = x.value();
  for (std::size_t b = 0; b < segments.size(); ++b) {
    out.middleRows(segments[b].offset, segments[b].length) *= gates.value()(static_cast<Index>(b), k);
  }
  std::vector<Segment> segs(segments.begin(), segments.end());
  return make_result<T>(std::move(out), "scale_rows_by_gate", {x.node(), gates.node()},
                        [segs = std::move(segs), k](NodeT<T>& self) {
                          auto& px = self.parents[0];
                          auto& pg = self.parents[1];
                          if (px->requires_grad) {
                            Matrix<T> g = Matrix<T>::Zero(px->value.rows(), px->value.cols());
                            for (std::size_t b = 0; b < segs.size(); ++b) {
                              g.middleRows(segs[b].offset, segs[b].length) =
                                  self.grad.middleRows(segs[b].offset, segs[b].length) *
                                  pg->value(static_cast<Index>(b), k);
                            }
                            px->accumulate(std::move(g));
                          }
                          if (pg->requires_grad) {
                            Matrix<T> g = Matrix<T>::Zero(pg->value.rows(), pg->value.cols());
                            for (std::size_t b = 0; b < segs.size(); ++b) {
                              g(static_cast<Index>(b), k) =
                                  self.grad.middleRows(segs[b].offset, segs[b].length)
                                      .cwiseProduct(px->value.middleRows(segs[b].offset, segs[b].length))
                                      .sum();
                            }
                            pg->accumulate(std::move(g));
                          }
                        });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, int ignore_id) {
  const Index n = logits.rows();
  const Index vocab = logits.cols();
  if (static_cast<Index>(targets.size()) != n) throw ShapeError("cross_entropy: target count differs from rows");
  Index valid = 0;
  for (const int t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || t >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(vocab) + ")");
    }
    ++valid;
  }
  if (valid == 0) throw DataError("cross_entropy: degenerate batch, every position ignored");

  auto lse = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n), T(0));
  T total = 0;
  for (Index i = 0; i < n; ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t == ignore_id) continue;
    const auto row = logits.value().row(i);
    const T mx = row.maxCoeff();
    const T l = mx + std::log((row.array() - mx).exp().sum());
    (*lse)[static_cast<std::size_t>(i)] = l;
    total += l - row(t);
  }
  Matrix<T> out(1, 1);
  out(0, 0) = total / static_cast<T>(valid);
  std::vector<int> tg(targets.begin(), targets.end());
  return make_result<T>(std::move(out), "cross_entropy", {logits.node()},
                        [lse, tg = std::move(tg), ignore_id, valid](NodeT<T>& self) {
                          auto& p = self.parents[0];
                          const T g = self.grad(0, 0) / static_cast<T>(valid);
                          Matrix<T> d = Matrix<T>::Zero(p->value.rows(), p->value.cols());
                          for (Index i = 0; i < d.rows(); ++i) {
                            const int t = tg[static_cast<std::size_t>(i)];
                            if (t == ignore_id) continue;
                            d.row(i) = (p->value.row(i).array() - (*lse)[static_cast<std::size_t>(i)]).exp() * g;
                            d(i, t) -= g;
                          }
                          p->accumulate(std::move(d));
                        });
}

template <typename T>
Tensor<T> mse(const Tensor<T>& pred, const Matrix<T>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ShapeError("mse: shape mismatch");
  if (pred.numel() == 0) throw ShapeError("mse of empty tensor");
  auto diff = std::make_shared<Matrix<T>>(pred.value() - target);
  Matrix<T> out(1, 1);
  out(0, 0) = diff->squaredNorm() / static_cast<T>(diff->size());
  return make_result<T>(std::move(out), "mse", {pred.node()}, [diff](NodeT<T>& self) {
    self.parents[0]->accumulate(*diff * (T(2) * self.grad(0, 0) / static_cast<T>(diff->size())));
  });
}

std::vector<double> softmax(std::span<const double> x) {
  if (x.empty()) throw ShapeError("softmax of empty input");
  const double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (out[i] = std::exp(x[i] - mx));
  for (auto& v : out) v /= s;
  return out;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  const auto& root = loss.node();
  if (!root) throw ContractError("backward on an undefined tensor");
  if (root->value.size() != 1) {
    throw ContractError("backward requires a scalar loss, got " + shape_str(root->value.rows(), root->value.cols()));
  }
  if (root->backward_done) throw ContractError("backward already ran on this graph; run a new forward first");
  if (!root->requires_grad) throw ContractError("loss has no recorded graph (nothing requires grad)");

  std::vector<NodeT<T>*> order;
  std::unordered_set<NodeT<T>*> seen{root.get()};
  std::vector<std::pair<NodeT<T>*, std::size_t>> stack{{root.get(), 0}};
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      NodeT<T>* p = top.first->parents[top.second++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(top.first);
      stack.pop_back();
    }
  }

  root->accumulate(Matrix<T>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT<T>* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
  for (NodeT<T>* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->parents.clear();
      n->grad.resize(0, 0);
      n->backward_done = true;
    } else if (n->grad.size() != 0) {
      check_finite(n->grad, "gradient");
    }
  }
}

#define MSLB_INSTANTIATE(T)                                                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> matmul_col_blocks(const Tensor<T>&, const Tensor<T>&, std::span<const Index>);          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                                              \
  template Tensor<T> sum(const Tensor<T>&);                                                                   \
  template Tensor<T> mean(const Tensor<T>&);                                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                                  \
  template Tensor<T> gelu(const Tensor<T>&);                                                                  \
  template Tensor<T> rms_norm(const Tensor<T>&, const Tensor<T>&, T);                                         \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                          \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,                     \
                               std::span<const Segment>);                                                     \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const int>);                                       \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const Index>);                                   \
  template Tensor<T> segment_mean(const Tensor<T>&, std::span<const Segment>, std::span<const Index>);        \
  template Tensor<T> scale_rows_by_gate(const Tensor<T>&, const Tensor<T>&, Index, std::span<const Segment>); \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>, int);                              \
  template Tensor<T> mse(const Tensor<T>&, const Matrix<T>&);                                                 \
  template void backward(const Tensor<T>&);

MSLB_INSTANTIATE(float)
MSLB_INSTANTIATE(double)

#undef MSLB_INSTANTIATE

}  // namespace mslb::num
