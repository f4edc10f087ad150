// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "mslb/codec/acoustic.h"
#include "mslb/codec/semantic.h"
#include "mslb/codec/wav.h"
#include "mslb/error.h"
#include "mslb/eval/evalkit.h"
#include "mslb/lm/vocab.h"
#include "oracles.h"

using namespace mslb;
using namespace mslb::codec;
using num::Index;

namespace {

RvqCodebooks random_books(int s, int k, int d, num::Rng& rng, double scale = 1.0) {
  RvqCodebooks cb;
  for (int i = 0; i < s; ++i) {
    Matrix<float> m(k, d);
    for (Index j = 0; j < m.size(); ++j) m.data()[j] = static_cast<float>(rng.normal(0, scale));
    m.row(0).setZero();
    cb.stages.push_back(m);
  }
  return cb;
}

std::vector<oracle::MatD> as_double(const RvqCodebooks& cb) {
  std::vector<oracle::MatD> out;
  for (const auto& m : cb.stages) out.push_back(m.cast<double>());
  return out;
}

}  // namespace

TEST_CASE("renderer and oracle transcriber are exact inverses") {
  num::Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto s = random_symbol_string(rng, 1, 12);
    const auto w = render(s);
    CHECK(w.samples.size() == s.size() * kSamplesPerSymbol);
    CHECK(oracle_transcribe(w) == s);
  }
}

TEST_CASE("an independent tone decoder reads the rendered symbols") {
  const std::string alphabet(lm::kSymbols);
  const auto w = render(alphabet);
  CHECK(oracle::tone_transcribe(w.samples, alphabet, kSamplesPerSymbol, kFrameLength,
                                double(kSampleRate) / kFrameLength, kFirstToneBin, kSampleRate) == alphabet);
  CHECK(symbol_frequency(0) == 250.0);
  CHECK(symbol_frequency(15) == 17 * 125.0);
}

TEST_CASE("oracle maps silence to a space and rejects partial blocks") {
  Waveform silent;
  silent.samples.assign(2 * kSamplesPerSymbol, 0.0f);
  CHECK(oracle_transcribe(silent) == "  ");
  Waveform odd;
  odd.samples.assign(kSamplesPerSymbol + 1, 0.0f);
  CHECK_THROWS_AS(oracle_transcribe(odd), FramingError);
  CHECK_THROWS_AS(render("3+4"), AlphabetError);
}

TEST_CASE("magnitude spectrum matches a direct DFT") {
  num::Rng rng(2);
  std::vector<float> f(kFrameLength);
  for (auto& x : f) x = static_cast<float>(rng.normal());
  const auto mag = magnitude_spectrum(f);
  for (int k = 0; k < kNumBins; ++k) {
    double re = 0, im = 0;
    for (int n = 0; n < kFrameLength; ++n) {
      re += f[n] * std::cos(2 * M_PI * k * n / kFrameLength);
      im -= f[n] * std::sin(2 * M_PI * k * n / kFrameLength);
    }
    CHECK(mag[k] == doctest::Approx(std::hypot(re, im)).epsilon(1e-9));
  }
}

TEST_CASE("k-means: monotone objective, Lloyd fixed point, tie and size contracts") {
  num::Rng rng(3);
  RowsD data(300, 3);
  for (Index i = 0; i < data.rows(); ++i) {
    const int c = static_cast<int>(i % 4);
    for (Index j = 0; j < 3; ++j) data(i, j) = 5.0 * (c == j) + rng.normal(0, 0.3);
  }
  num::Rng krng(4);
  const auto r = kmeans(data, 4, 50, krng);
  for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] <= r.objective[i - 1] + 1e-9);
  for (int k = 0; k < 4; ++k) {
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(3);
    int n = 0;
    for (Index i = 0; i < data.rows(); ++i) {
      if (r.assignment[i] == k) {
        mean += data.row(i);
        ++n;
      }
    }
    REQUIRE(n > 0);
    CHECK((mean / n - r.centroids.row(k)).norm() < 1e-9);
  }
  for (Index i = 0; i < data.rows(); ++i) CHECK(r.assignment[i] == nearest_row(r.centroids, data.row(i).data()));
  RowsD two(2, 1);
  two << 0.0, 2.0;
  const double mid = 1.0;
  CHECK(nearest_row(two, &mid) == 0);
  num::Rng k2(5);
  CHECK_THROWS_AS(kmeans(two, 3, 5, k2), DataError);
}

TEST_CASE("semantic codebook separates every symbol") {
  num::Rng rng(6), krng(7);
  const auto frames = toy_frame_corpus(100, 32, 0.01, rng);
  const auto fit = fit_semantic_codebook(frame_spectra(frames), 32, 30, krng);
  std::set<int> seen;
  for (char c : lm::kSymbols) {
    const auto ids = semantic_encode(render(std::string(1, c)), fit.codebook, 64);
    CHECK(ids.size() == kFramesPerSymbol);
    CHECK(std::set<int>(ids.begin(), ids.end()).size() == 1);
    CHECK(ids[0] >= 64);
    CHECK(ids[0] < 96);
    seen.insert(ids[0]);
  }
  CHECK(seen.size() == lm::kSymbols.size());
}

TEST_CASE("RVQ residual norms never increase (1000 random latents)") {
  num::Rng rng(8);
  const auto cb = random_books(4, 16, 8, rng);
  for (int i = 0; i < 1000; ++i) {
    std::vector<float> x(8);
    for (auto& v : x) v = static_cast<float>(rng.normal(0, 2));
    std::vector<double> norms;
    const auto codes = rvq_quantize(x, cb, &norms);
    REQUIRE(norms.size() == 5);
    for (int s = 1; s <= 4; ++s) CHECK(norms[s] <= norms[s - 1] + 1e-6);
    const auto rec = rvq_dequantize(codes, cb);
    double err = 0;
    for (int j = 0; j < 8; ++j) err += (x[j] - rec[j]) * (x[j] - rec[j]);
    CHECK(std::sqrt(err) == doctest::Approx(norms[4]).epsilon(1e-4));
  }
}

TEST_CASE("RVQ matches brute force on d=2, K=4, S=2") {
  num::Rng rng(9);
  SUBCASE("greedy oracle on random books") {
    const auto cb = random_books(2, 4, 2, rng);
    for (int i = 0; i < 500; ++i) {
      const std::vector<float> x = {static_cast<float>(rng.normal(0, 2)), static_cast<float>(rng.normal(0, 2))};
      const auto got = rvq_quantize(x, cb);
      CHECK(got == oracle::greedy_rvq({x[0], x[1]}, as_double(cb)));
    }
  }
  SUBCASE("exhaustive joint search on a nested codebook") {
    RvqCodebooks cb;
    Matrix<float> coarse(4, 2), fine(4, 2);
    coarse << 0, 0, 10, 0, 0, 10, 10, 10;
    fine << 0, 0, 1, 0, 0, 1, -1, -1;
    cb.stages = {coarse, fine};
    for (int i = 0; i < 500; ++i) {
      const int c = static_cast<int>(rng.below(4)), f = static_cast<int>(rng.below(4));
      const std::vector<float> x = {coarse(c, 0) + fine(f, 0) + static_cast<float>(rng.normal(0, 0.1)),
                                    coarse(c, 1) + fine(f, 1) + static_cast<float>(rng.normal(0, 0.1))};
      CHECK(rvq_quantize(x, cb) == oracle::exhaustive_rvq({x[0], x[1]}, as_double(cb)));
    }
  }
}

TEST_CASE("fitted codec: rate-distortion is monotone in S and round-trip SNR >= 25 dB") {
  num::Rng rng(10);
  const auto frames = toy_frame_corpus(300, 64, 0.01, rng);
  AcousticFitLog log;
  const auto codec = fit_acoustic_codec(frames, AcousticCodecConfig{}, &log);
  CHECK(codec.rvq.num_stages() == 4);
  for (const auto& m : codec.rvq.stages) CHECK(m.row(0).isZero(0));

  const Matrix<float> lat = codec.encode_latents(frames);
  double prev = std::numeric_limits<double>::infinity();
  for (int s = 0; s <= 4; ++s) {
    const auto cut = codec.truncated(s);
    double err = 0;
    for (Index i = 0; i < lat.rows(); ++i) {
      const std::vector<float> x(lat.row(i).data(), lat.row(i).data() + lat.cols());
      const auto rec = s == 0 ? std::vector<float>(x.size(), 0.0f) : rvq_dequantize(rvq_quantize(x, cut.rvq), cut.rvq);
      for (std::size_t j = 0; j < x.size(); ++j) err += (x[j] - rec[j]) * (x[j] - rec[j]);
    }
    CHECK(err <= prev + 1e-9);
    prev = err;
  }

  num::Rng srng(11);
  Waveform ref, rec;
  for (int i = 0; i < 50; ++i) {
    const auto w = render(random_symbol_string(srng, 3, 12));
    const auto r = vocoder_decode(acoustic_encode(w, codec), codec);
    ref.samples.insert(ref.samples.end(), w.samples.begin(), w.samples.end());
    rec.samples.insert(rec.samples.end(), r.samples.begin(), r.samples.end());
  }
  CHECK(eval::codec_snr(ref, rec) >= 25.0);
  CHECK(oracle_transcribe(rec) == oracle_transcribe(ref));
}

TEST_CASE("acoustic encode produces an S x T grid in range") {
  num::Rng rng(12);
  const auto frames = toy_frame_corpus(60, 16, 0.01, rng);
  AcousticCodecConfig cfg;
  cfg.ae_steps = 50;
  cfg.finetune_steps = 10;
  cfg.kmeans_iters = 5;
  const auto codec = fit_acoustic_codec(frames, cfg);
  const auto g = acoustic_encode(render("3a7"), codec);
  CHECK(g.stages == 4);
  CHECK(g.frames == 12);
  for (int c : g.codes) CHECK((c >= 0 && c < 64));
  CHECK(vocoder_decode(g, codec).samples.size() == 3u * kSamplesPerSymbol);
}

TEST_CASE("wav round trip and format errors") {
  const auto dir = std::filesystem::temp_directory_path() / "mslb_wav_test";
  std::filesystem::create_directories(dir);
  const auto w = render("3a 7e");
  write_wav(dir / "a.wav", w);
  const auto r = read_wav(dir / "a.wav");
  REQUIRE(r.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) CHECK(std::abs(r.samples[i] - w.samples[i]) <= 1.0 / 32767 + 1e-7);
  CHECK(oracle_transcribe(r) == "3a 7e");
  std::ofstream(dir / "bad.wav") << "RIFFxxxxWAVEjunk";
  CHECK_THROWS_AS(read_wav(dir / "bad.wav"), FormatError);
  std::filesystem::remove_all(dir);
}
