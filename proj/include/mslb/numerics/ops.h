// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "mslb/numerics/tensor.h"

namespace mslb::num {

/// A contiguous run of rows belonging to one sequence in a packed batch.
/// Rows [offset, offset + prefix) form a bidirectional prefix; every later row
/// attends causally (to the prefix and to earlier rows of the same sequence).
struct Segment {
  Index offset = 0;
  Index length = 0;
  Index prefix = 0;
};

/// A packed batch of one or more sequences.
std::vector<Segment> single_segment(Index length, Index prefix = 0);

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a * b^T
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
/// a * b computed one column block at a time ([edges[i], edges[i+1]) per block),
/// so each block's values do not depend on how many other blocks exist.
template <typename T>
Tensor<T> matmul_col_blocks(const Tensor<T>& a, const Tensor<T>& b, std::span<const Index> edges);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
/// Adds a 1 x c row to every row of a.
template <typename T> Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
/// tanh approximation
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps = T(1e-6));
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x);

/// Multi-head scaled dot-product attention over a packed batch. q, k, v are
/// N x d with d divisible by n_heads.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int n_heads,
                    std::span<const Segment> segments);

/// Row gather from an embedding table. An id of -1 yields a zero row.
template <typename T> Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids);
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, std::span<const Index> rows);
/// Mean of each segment's first `count` rows (count <= 0 means the whole segment): B x d.
template <typename T>
Tensor<T> segment_mean(const Tensor<T>& x, std::span<const Segment> segments, std::span<const Index> counts);
/// Scales the rows of segment b by gates(b, k).
template <typename T>
Tensor<T> scale_rows_by_gate(const Tensor<T>& x, const Tensor<T>& gates, Index k, std::span<const Segment> segments);

/// Mean negative log-likelihood of targets under row-wise softmax(logits),
/// skipping rows whose target equals ignore_id.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, int ignore_id);
/// Mean squared error against a constant target.
template <typename T> Tensor<T> mse(const Tensor<T>& pred, const Matrix<T>& target);

/// Plain (non-recording) numerically stabilized softmax of a vector.
std::vector<double> softmax(std::span<const double> x);

}  // namespace mslb::num
