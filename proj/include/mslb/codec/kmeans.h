// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mslb/numerics/rng.h"
#include "mslb/numerics/tensor.h"

namespace mslb::codec {

using RowsD = num::Matrix<double>;

/// Index of the row of `centroids` nearest to `x` (squared Euclidean
/// distance); the lowest index wins ties.
int nearest_row(const RowsD& centroids, const double* x);

struct KMeansResult {
  RowsD centroids;                 // k x dim
  std::vector<int> assignment;     // per data row, after the final Lloyd step
  std::vector<double> objective;   // sum of squared distances after each assignment step
};

/// Lloyd's algorithm with k-means++ seeding. A cluster that ends an
/// assignment step empty is re-seeded at the point currently farthest from
/// its centroid. Stops after `iters` iterations or when assignments repeat.
/// Throws DataError when there are fewer rows than k.
KMeansResult kmeans(const RowsD& data, int k, int iters, num::Rng& rng);

}  // namespace mslb::codec
