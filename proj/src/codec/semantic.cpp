// SPDX-License-Identifier: Apache-2.0
#include "mslb/codec/semantic.h"

#include "mslb/error.h"

namespace mslb::codec {

int SemanticCodebook::index_of(std::span<const float> frame) const {
  const auto spec = log_spectrum(frame);
  return nearest_row(centroids, spec.data());
}

num::Matrix<float> waveform_frames(const Waveform& wav) {
  check_framing(wav, kFrameLength);
  const auto n = static_cast<num::Index>(wav.frames());
  return Eigen::Map<const num::Matrix<float>>(wav.samples.data(), n, kFrameLength);
}

RowsD frame_spectra(const num::Matrix<float>& frames) {
  if (frames.cols() != kFrameLength) throw ShapeError("frames must have 64 columns");
  RowsD out(frames.rows(), kNumBins);
  for (num::Index i = 0; i < frames.rows(); ++i) {
    const auto spec = log_spectrum(std::span<const float>(frames.row(i).data(), kFrameLength));
    for (int b = 0; b < kNumBins; ++b) out(i, b) = spec[b];
  }
  return out;
}

SemanticFit fit_semantic_codebook(const RowsD& spectra, int k, int iters, num::Rng& rng) {
  if (spectra.cols() != kNumBins) throw ShapeError("semantic features must have 33 columns");
  auto km = kmeans(spectra, k, iters, rng);
  if (!num::all_finite(km.centroids)) throw NumericError("semantic centroids are not finite");
  return {SemanticCodebook{std::move(km.centroids)}, std::move(km.objective)};
}

std::vector<int> semantic_encode(const Waveform& wav, const SemanticCodebook& cb, int id_offset) {
  check_framing(wav, kFrameLength);
  std::vector<int> ids;
  ids.reserve(wav.frames());
  for (std::size_t f = 0; f < wav.frames(); ++f) ids.push_back(id_offset + cb.index_of(wav.frame(f)));
  return ids;
}

}  // namespace mslb::codec
