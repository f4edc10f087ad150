// SPDX-License-Identifier: Apache-2.0
#include "mslb/codec/kmeans.h"

#include <limits>

#include "mslb/error.h"

namespace mslb::codec {

namespace {

double sq_dist(const double* a, const double* b, num::Index dim) {
  double s = 0;
  for (num::Index j = 0; j < dim; ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

}  // namespace

int nearest_row(const RowsD& centroids, const double* x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (num::Index c = 0; c < centroids.rows(); ++c) {
    const double d = sq_dist(centroids.row(c).data(), x, centroids.cols());
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

KMeansResult kmeans(const RowsD& data, int k, int iters, num::Rng& rng) {
  const num::Index n = data.rows();
  const num::Index dim = data.cols();
  if (k < 1) throw ContractError("k-means needs k >= 1");
  if (n < k) {
    throw DataError("k-means needs at least " + std::to_string(k) + " samples, got " + std::to_string(n));
  }
  KMeansResult r;
  r.centroids.resize(k, dim);

  // k-means++ seeding.
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  num::Index first = static_cast<num::Index>(rng.below(static_cast<std::uint64_t>(n)));
  r.centroids.row(0) = data.row(first);
  for (int c = 1; c < k; ++c) {
    double total = 0;
    for (num::Index i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(data.row(i).data(), r.centroids.row(c - 1).data(), dim));
      total += d2[i];
    }
    num::Index pick = 0;
    if (total > 0) {
      double u = rng.uniform() * total;
      pick = n - 1;
      for (num::Index i = 0; i < n; ++i) {
        u -= d2[i];
        if (u < 0 && d2[i] > 0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<num::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    r.centroids.row(c) = data.row(pick);
  }

  r.assignment.assign(static_cast<std::size_t>(n), -1);
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (int it = 0;; ++it) {
    bool changed = false;
    double obj = 0;
    for (num::Index i = 0; i < n; ++i) {
      const int a = nearest_row(r.centroids, data.row(i).data());
      dist[i] = sq_dist(data.row(i).data(), r.centroids.row(a).data(), dim);
      obj += dist[i];
      if (a != r.assignment[i]) changed = true;
      r.assignment[i] = a;
    }
    r.objective.push_back(obj);
    if ((!changed && it > 0) || it == iters) break;

    RowsD sums = RowsD::Zero(k, dim);
    std::vector<num::Index> counts(static_cast<std::size_t>(k), 0);
    for (num::Index i = 0; i < n; ++i) {
      sums.row(r.assignment[i]) += data.row(i);
      ++counts[r.assignment[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        r.centroids.row(c) = sums.row(c) / static_cast<double>(counts[c]);
        continue;
      }
      num::Index far = 0;
      for (num::Index i = 1; i < n; ++i) {
        if (dist[i] > dist[far]) far = i;
      }
      r.centroids.row(c) = data.row(far);
      dist[far] = 0;
    }
  }
  return r;
}

}  // namespace mslb::codec
