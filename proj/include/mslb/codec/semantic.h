// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mslb/codec/audio.h"
#include "mslb/codec/kmeans.h"

namespace mslb::codec {

/// Single-codebook VQ over per-frame log spectra.
struct SemanticCodebook {
  RowsD centroids;  // K x 33

  int size() const { return static_cast<int>(centroids.rows()); }
  /// Nearest centroid index of one frame (lowest index on ties).
  int index_of(std::span<const float> frame) const;
  bool operator==(const SemanticCodebook& o) const { return centroids == o.centroids; }
};

/// Raw frames (rows of 64 samples) of a waveform; FramingError on partial frames.
num::Matrix<float> waveform_frames(const Waveform& wav);
/// log_spectrum() of every row of `frames`.
RowsD frame_spectra(const num::Matrix<float>& frames);

struct SemanticFit {
  SemanticCodebook codebook;
  std::vector<double> objective;
};

/// k-means over spectra; DataError if there are fewer than k rows.
SemanticFit fit_semantic_codebook(const RowsD& spectra, int k, int iters, num::Rng& rng);

/// One id per frame, in [id_offset, id_offset + K).
std::vector<int> semantic_encode(const Waveform& wav, const SemanticCodebook& cb, int id_offset);

}  // namespace mslb::codec
