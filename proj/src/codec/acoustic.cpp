// SPDX-License-Identifier: Apache-2.0
#include "mslb/codec/acoustic.h"

#include <limits>

#include "mslb/codec/kmeans.h"
#include "mslb/error.h"
#include "mslb/lm/vocab.h"
#include "mslb/numerics/ops.h"
#include "mslb/numerics/optim.h"

namespace mslb::codec {

using num::Index;
using num::Tensor;

void AcousticCodecConfig::validate() const {
  if (d_lat < 1 || d_lat > kFrameLength) throw ConfigError("codec d_lat must lie in [1, 64]");
  if (stages < 1) throw ConfigError("codec stages must be >= 1");
  if (entries < 2) throw ConfigError("codec entries must be >= 2");
  if (ae_steps < 0 || finetune_steps < 0 || kmeans_iters < 0) throw ConfigError("codec step counts must be >= 0");
  if (batch < 1) throw ConfigError("codec batch must be >= 1");
  if (!(ae_lr > 0) || !(finetune_lr > 0)) throw ConfigError("codec learning rates must be > 0");
}

std::vector<int> rvq_quantize(std::span<const float> latent, const RvqCodebooks& cb,
                              std::vector<double>* residual_norms) {
  const int dim = cb.dim();
  if (static_cast<int>(latent.size()) != dim) {
    throw ShapeError("latent of size " + std::to_string(latent.size()) + " for codebooks of dim " +
                     std::to_string(dim));
  }
  std::vector<double> r(latent.begin(), latent.end());
  for (double x : r) {
    if (!std::isfinite(x)) throw NumericError("non-finite latent");
  }
  auto norm = [&] {
    double s = 0;
    for (double x : r) s += x * x;
    return std::sqrt(s);
  };
  if (residual_norms) residual_norms->assign(1, norm());
  std::vector<int> codes;
  codes.reserve(cb.stages.size());
  for (const auto& book : cb.stages) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index e = 0; e < book.rows(); ++e) {
      double d = 0;
      for (int j = 0; j < dim; ++j) {
        const double diff = r[j] - static_cast<double>(book(e, j));
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(e);
      }
    }
    for (int j = 0; j < dim; ++j) r[j] -= static_cast<double>(book(best, j));
    codes.push_back(best);
    if (residual_norms) residual_norms->push_back(norm());
  }
  return codes;
}

std::vector<float> rvq_dequantize(std::span<const int> codes, const RvqCodebooks& cb) {
  if (static_cast<int>(codes.size()) != cb.num_stages()) throw ShapeError("code count does not match stage count");
  std::vector<double> acc(static_cast<std::size_t>(cb.dim()), 0.0);
  for (int s = 0; s < cb.num_stages(); ++s) {
    const int c = codes[s];
    if (c < 0 || c >= cb.entries()) throw IndexError("acoustic code " + std::to_string(c) + " out of range");
    for (int j = 0; j < cb.dim(); ++j) acc[j] += cb.stages[s](c, j);
  }
  return {acc.begin(), acc.end()};
}

Matrix<float> AcousticCodec::encode_latents(const Matrix<float>& frames) const {
  if (frames.cols() != kFrameLength) throw ShapeError("frames must have 64 columns");
  Matrix<float> z = frames * enc_w.transpose();
  z.rowwise() += enc_b.row(0);
  return z;
}

Matrix<float> AcousticCodec::decode_latents(const Matrix<float>& latents) const {
  if (latents.cols() != d_lat()) throw ShapeError("latents have the wrong width");
  Matrix<float> x = latents * dec_w.transpose();
  x.rowwise() += dec_b.row(0);
  return x;
}

AcousticCodec AcousticCodec::truncated(int s) const {
  if (s < 0 || s > rvq.num_stages()) throw ContractError("cannot keep " + std::to_string(s) + " stages");
  AcousticCodec out = *this;
  out.rvq.stages.resize(static_cast<std::size_t>(s));
  return out;
}

namespace {

Matrix<float> gaussian(Index rows, Index cols, double stddev, num::Rng& rng) {
  Matrix<float> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal(0.0, stddev));
  return m;
}

Matrix<float> quantized_latents(const Matrix<float>& z, const RvqCodebooks& cb) {
  Matrix<float> q(z.rows(), z.cols());
  for (Index i = 0; i < z.rows(); ++i) {
    const auto codes = rvq_quantize(std::span<const float>(z.row(i).data(), z.cols()), cb);
    const auto v = rvq_dequantize(codes, cb);
    for (Index j = 0; j < z.cols(); ++j) q(i, j) = v[j];
  }
  return q;
}

Matrix<float> gather(const Matrix<float>& m, const std::vector<Index>& rows) {
  Matrix<float> out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

/// Cycles through shuffled epochs of row indices.
class RowCycler {
 public:
  RowCycler(Index n, num::Rng rng) : rng_(rng) {
    order_.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order_[i] = i;
    pos_ = order_.size();
  }
  std::vector<Index> next(int batch) {
    std::vector<Index> out;
    const int take = std::min<int>(batch, static_cast<int>(order_.size()));
    while (static_cast<int>(out.size()) < take) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  num::Rng rng_;
  std::vector<Index> order_;
  std::size_t pos_;
};

}  // namespace

AcousticCodec fit_acoustic_codec(const Matrix<float>& frames, const AcousticCodecConfig& cfg, AcousticFitLog* log) {
  cfg.validate();
  if (frames.cols() != kFrameLength) throw ShapeError("codec corpus frames must have 64 columns");
  const Index need = 10 * static_cast<Index>(cfg.entries);
  if (frames.rows() < need) {
    throw DataError("codec corpus has " + std::to_string(frames.rows()) + " frames; needs at least " +
                    std::to_string(need));
  }
  num::check_finite(frames, "codec corpus");
  num::Rng rng(cfg.seed);
  num::Rng init_rng = rng.fork(1);

  // Phase 1: autoencoder, no quantization.
  auto enc_w = Tensor<float>::from(gaussian(cfg.d_lat, kFrameLength, 1.0 / std::sqrt(kFrameLength), init_rng));
  auto enc_b = Tensor<float>::vector(cfg.d_lat, 0.0f);
  auto dec_w = Tensor<float>::from(gaussian(kFrameLength, cfg.d_lat, 1.0 / std::sqrt(cfg.d_lat), init_rng));
  auto dec_b = Tensor<float>::vector(kFrameLength, 0.0f);
  AcousticFitLog fit_log;
  {
    std::vector<num::NamedTensor<float>> params = {
        {"enc_w", enc_w}, {"enc_b", enc_b}, {"dec_w", dec_w}, {"dec_b", dec_b}};
    for (auto& [n, p] : params) p.set_requires_grad(true);
    if (cfg.ae_steps > 0) {
      num::AdamWConfig oc;
      oc.lr_max = cfg.ae_lr;
      oc.total_steps = cfg.ae_steps;
      oc.clip_norm = 0;
      num::AdamW opt(oc, params);
      RowCycler cyc(frames.rows(), rng.fork(2));
      for (int step = 0; step < cfg.ae_steps; ++step) {
        const Matrix<float> xb = gather(frames, cyc.next(cfg.batch));
        auto x = Tensor<float>::from(xb);
        auto z = num::add_row(num::matmul_nt(x, enc_w), enc_b);
        auto y = num::add_row(num::matmul_nt(z, dec_w), dec_b);
        auto loss = num::mse(y, xb);
        fit_log.ae_mse = loss.item();
        num::backward(loss);
        opt.step(step);
      }
    }
    for (auto& [n, p] : params) p.set_requires_grad(false);
  }

  AcousticCodec codec;
  codec.enc_w = enc_w.value();
  codec.enc_b = enc_b.value();
  codec.dec_w = dec_w.value();
  codec.dec_b = dec_b.value();

  // Phase 2: greedy residual codebooks with a fixed zero entry.
  const Matrix<float> z = codec.encode_latents(frames);
  num::Matrix<double> residual = z.cast<double>();
  num::Rng km_rng = rng.fork(3);
  for (int s = 0; s < cfg.stages; ++s) {
    auto km = kmeans(residual, cfg.entries - 1, cfg.kmeans_iters, km_rng);
    Matrix<float> book = Matrix<float>::Zero(cfg.entries, cfg.d_lat);
    book.bottomRows(cfg.entries - 1) = km.centroids.cast<float>();
    codec.rvq.stages.push_back(book);
    RvqCodebooks single{{book}};
    for (Index i = 0; i < residual.rows(); ++i) {
      const Matrix<float> ri = residual.row(i).cast<float>();
      const int c = rvq_quantize(std::span<const float>(ri.data(), cfg.d_lat), single)[0];
      residual.row(i) -= book.row(c).cast<double>();
    }
  }

  // Phase 3: decoder-only fine-tuning on quantized latents.
  const Matrix<float> zq = quantized_latents(z, codec.rvq);
  {
    auto fw = Tensor<float>::from(codec.dec_w, true);
    auto fb = Tensor<float>::from(codec.dec_b, true, 1);
    if (cfg.finetune_steps > 0) {
      num::AdamWConfig oc;
      oc.lr_max = cfg.finetune_lr;
      oc.total_steps = cfg.finetune_steps;
      oc.clip_norm = 0;
      num::AdamW opt(oc, {{"dec_w", fw}, {"dec_b", fb}});
      RowCycler cyc(frames.rows(), rng.fork(4));
      for (int step = 0; step < cfg.finetune_steps; ++step) {
        const auto rows = cyc.next(cfg.batch);
        auto q = Tensor<float>::from(gather(zq, rows));
        auto y = num::add_row(num::matmul_nt(q, fw), fb);
        auto loss = num::mse(y, gather(frames, rows));
        num::backward(loss);
        opt.step(step);
      }
    }
    codec.dec_w = fw.value();
    codec.dec_b = fb.value();
  }
  fit_log.finetune_mse = (codec.decode_latents(zq) - frames).squaredNorm() / static_cast<double>(frames.size());
  num::check_finite(codec.dec_w, "codec decoder");
  if (log) *log = fit_log;
  return codec;
}

AcousticTokenGrid acoustic_encode(const Waveform& wav, const AcousticCodec& codec) {
  check_framing(wav, kFrameLength);
  const auto t = static_cast<int>(wav.frames());
  const Matrix<float> frames = Eigen::Map<const Matrix<float>>(wav.samples.data(), t, kFrameLength);
  const Matrix<float> z = codec.encode_latents(frames);
  AcousticTokenGrid grid(codec.rvq.num_stages(), t);
  for (int f = 0; f < t; ++f) {
    const auto codes = rvq_quantize(std::span<const float>(z.row(f).data(), z.cols()), codec.rvq);
    for (int s = 0; s < grid.stages; ++s) grid.at(s, f) = codes[s];
  }
  return grid;
}

Waveform vocoder_decode(const AcousticTokenGrid& grid, const AcousticCodec& codec) {
  if (grid.stages != codec.rvq.num_stages()) {
    throw ShapeError("grid has " + std::to_string(grid.stages) + " stages; codec has " +
                     std::to_string(codec.rvq.num_stages()));
  }
  if (grid.codes.size() != static_cast<std::size_t>(grid.stages) * grid.frames) throw ShapeError("grid is not rectangular");
  Matrix<float> lat(grid.frames, codec.d_lat());
  std::vector<int> codes(static_cast<std::size_t>(grid.stages));
  for (int f = 0; f < grid.frames; ++f) {
    for (int s = 0; s < grid.stages; ++s) codes[s] = grid.at(s, f);
    const auto v = rvq_dequantize(codes, codec.rvq);
    for (int j = 0; j < codec.d_lat(); ++j) lat(f, j) = v[j];
  }
  const Matrix<float> x = codec.decode_latents(lat);
  Waveform w;
  w.samples.assign(x.data(), x.data() + x.size());
  return w;
}

std::string random_symbol_string(num::Rng& rng, int min_len, int max_len) {
  const int len = min_len + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len - min_len + 1)));
  std::string s;
  for (int i = 0; i < len; ++i) s.push_back(lm::kSymbols[rng.below(lm::kSymbols.size())]);
  return s;
}

Matrix<float> toy_frame_corpus(int n_strings, int silence_frames, double noise_sigma, num::Rng& rng) {
  std::vector<float> samples;
  for (int i = 0; i < n_strings; ++i) {
    const auto w = render(random_symbol_string(rng, 3, 12));
    samples.insert(samples.end(), w.samples.begin(), w.samples.end());
  }
  samples.resize(samples.size() + static_cast<std::size_t>(silence_frames) * kFrameLength, 0.0f);
  for (auto& x : samples) x += static_cast<float>(rng.normal(0.0, noise_sigma));
  const auto n = static_cast<Index>(samples.size() / kFrameLength);
  return Eigen::Map<const Matrix<float>>(samples.data(), n, kFrameLength);
}

}  // namespace mslb::codec
