// SPDX-License-Identifier: Apache-2.0
#include "mslb/lm/transformer.h"

#include <cmath>
#include <cstring>

namespace mslb::lm {

namespace {

template <typename T>
Tensor<T> gaussian(Index rows, Index cols, double stddev, num::Rng& rng) {
  Matrix<T> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal(0.0, stddev));
  return Tensor<T>::from(std::move(m));
}

/// Sinusoidal table with per-entry RMS equal to `rms`; the parameters stay
/// trainable, this only fixes their starting point.
template <typename T>
Tensor<T> sinusoidal(Index rows, Index cols, double rms) {
  Matrix<T> m(rows, cols);
  const double amp = rms * std::sqrt(2.0);
  for (Index p = 0; p < rows; ++p) {
    for (Index i = 0; i < cols; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(cols));
      const double a = static_cast<double>(p) * freq;
      m(p, i) = static_cast<T>(amp * ((i % 2 == 0) ? std::sin(a) : std::cos(a)));
    }
  }
  return Tensor<T>::from(std::move(m));
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const std::string& name, const AdapterHook<T>* hook,
                 std::span<const Segment> segments) {
  Tensor<T> y = num::matmul_nt(x, w);
  if (hook) return hook->adapt(name, x, y, segments);
  return y;
}

std::string layer_name(std::size_t i) { return "layers." + std::to_string(i) + "."; }

}  // namespace

// ---------------------------------------------------------------------------
// DecoderStack

template <typename T>
DecoderStack<T> DecoderStack<T>::init(int d_model, int n_layers, int n_heads, int d_ff, num::Rng& rng,
                                      double init_scale) {
  DecoderStack s;
  s.n_heads_ = n_heads;
  const double out_scale = init_scale / std::sqrt(2.0 * n_layers);
  for (int l = 0; l < n_layers; ++l) {
    DecoderBlock<T> b;
    b.attn_norm = Tensor<T>::vector(d_model, T(1));
    b.wq = gaussian<T>(d_model, d_model, init_scale, rng);
    b.wk = gaussian<T>(d_model, d_model, init_scale, rng);
    b.wv = gaussian<T>(d_model, d_model, init_scale, rng);
    b.wo = gaussian<T>(d_model, d_model, out_scale, rng);
    b.ffn_norm = Tensor<T>::vector(d_model, T(1));
    b.w1 = gaussian<T>(d_ff, d_model, init_scale, rng);
    b.w2 = gaussian<T>(d_model, d_ff, out_scale, rng);
    s.blocks_.push_back(std::move(b));
  }
  s.final_norm_ = Tensor<T>::vector(d_model, T(1));
  return s;
}

template <typename T>
Tensor<T> DecoderStack<T>::forward(const Tensor<T>& x_in, std::span<const Segment> segments,
                                   const AdapterHook<T>* hook) const {
  Tensor<T> x = x_in;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    const std::string p = layer_name(l);
    Tensor<T> h = num::rms_norm(x, b.attn_norm);
    Tensor<T> q = linear(h, b.wq, p + "attn.wq", hook, segments);
    Tensor<T> k = linear(h, b.wk, p + "attn.wk", hook, segments);
    Tensor<T> v = linear(h, b.wv, p + "attn.wv", hook, segments);
    Tensor<T> a = num::attention(q, k, v, n_heads_, segments);
    x = num::add(x, linear(a, b.wo, p + "attn.wo", hook, segments));
    h = num::rms_norm(x, b.ffn_norm);
    Tensor<T> f = num::gelu(linear(h, b.w1, p + "ffn.w1", hook, segments));
    x = num::add(x, linear(f, b.w2, p + "ffn.w2", hook, segments));
  }
  return num::rms_norm(x, final_norm_);
}

template <typename T>
void DecoderStack<T>::collect(std::vector<NamedTensor<T>>& out, const std::string& prefix) const {
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    const std::string p = prefix + layer_name(l);
    out.emplace_back(p + "attn_norm", b.attn_norm);
    out.emplace_back(p + "attn.wq", b.wq);
    out.emplace_back(p + "attn.wk", b.wk);
    out.emplace_back(p + "attn.wv", b.wv);
    out.emplace_back(p + "attn.wo", b.wo);
    out.emplace_back(p + "ffn_norm", b.ffn_norm);
    out.emplace_back(p + "ffn.w1", b.w1);
    out.emplace_back(p + "ffn.w2", b.w2);
  }
  out.emplace_back(prefix + "final_norm", final_norm_);
}

template <typename T>
TargetShapes DecoderStack<T>::targets() const {
  TargetShapes t;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    const std::string p = layer_name(l);
    for (const auto& [name, w] : {std::pair{"attn.wq", &b.wq}, std::pair{"attn.wk", &b.wk},
                                  std::pair{"attn.wv", &b.wv}, std::pair{"attn.wo", &b.wo},
                                  std::pair{"ffn.w1", &b.w1}, std::pair{"ffn.w2", &b.w2}}) {
      t[p + name] = {w->rows(), w->cols()};
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// LmConfig / TokenBatch

void LmConfig::validate() const {
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1 || max_seq_len < 1) {
    throw ConfigError("lm dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ConfigError("lm.d_model must be divisible by lm.n_heads");
  if (!(init_scale > 0)) throw ConfigError("lm.init_scale must be > 0");
}

TokenBatch TokenBatch::pack(const std::vector<std::vector<int>>& seqs) {
  TokenBatch b;
  for (const auto& s : seqs) {
    b.segments.push_back(Segment{static_cast<Index>(b.ids.size()), static_cast<Index>(s.size()), 0});
    for (std::size_t i = 0; i < s.size(); ++i) {
      b.ids.push_back(s[i]);
      b.positions.push_back(static_cast<int>(i));
    }
  }
  return b;
}

std::vector<Index> TokenBatch::last_rows() const {
  std::vector<Index> rows;
  for (const auto& s : segments) rows.push_back(s.offset + s.length - 1);
  return rows;
}

// ---------------------------------------------------------------------------
// LanguageModel

template <typename T>
LanguageModel<T> LanguageModel<T>::init(const LmConfig& cfg, num::Rng& rng) {
  cfg.validate();
  LanguageModel m;
  m.cfg_ = cfg;
  const Index v = cfg.vocab.total();
  m.tok_embed_ = gaussian<T>(v, cfg.d_model, cfg.init_scale, rng);
  m.pos_embed_ = sinusoidal<T>(cfg.max_seq_len, cfg.d_model, cfg.init_scale);
  m.stack_ = DecoderStack<T>::init(cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.d_ff, rng, cfg.init_scale);
  m.head_ = gaussian<T>(cfg.d_model, v, cfg.init_scale, rng);
  return m;
}

template <typename T>
LanguageModel<T> LanguageModel<T>::zeros(const LmConfig& cfg) {
  num::Rng rng(0);
  LanguageModel m = init(cfg, rng);
  for (auto& [name, p] : m.named_parameters()) p.mutable_value().setZero();
  return m;
}

template <typename T>
void LanguageModel<T>::validate_batch(const TokenBatch& batch) const {
  const int v = cfg_.vocab.total();
  for (const int id : batch.ids) {
    if (id < 0 || id >= v) throw IndexError("token id " + std::to_string(id) + " outside [0, " + std::to_string(v) + ")");
  }
  for (const auto& s : batch.segments) {
    if (s.length > cfg_.max_seq_len) {
      throw LengthError("sequence length " + std::to_string(s.length) + " exceeds max_seq_len " +
                        std::to_string(cfg_.max_seq_len));
    }
  }
}

template <typename T>
std::vector<Index> LanguageModel<T>::head_blocks() const {
  std::vector<Index> edges{0, cfg_.vocab.n_text()};
  if (cfg_.vocab.n_semantic() > 0) edges.push_back(cfg_.vocab.total());
  return edges;
}

template <typename T>
Tensor<T> LanguageModel<T>::hidden(const TokenBatch& batch, const AdapterHook<T>* hook) const {
  validate_batch(batch);
  Tensor<T> x = num::add(num::embedding(tok_embed_, std::span<const int>(batch.ids)),
                         num::embedding(pos_embed_, std::span<const int>(batch.positions)));
  return stack_.forward(x, batch.segments, hook);
}

template <typename T>
Tensor<T> LanguageModel<T>::forward(const TokenBatch& batch, const AdapterHook<T>* hook) const {
  const auto edges = head_blocks();
  return num::matmul_col_blocks(hidden(batch, hook), head_, std::span<const Index>(edges));
}

template <typename T>
Tensor<T> LanguageModel<T>::forward_rows(const TokenBatch& batch, std::span<const Index> rows,
                                         const AdapterHook<T>* hook) const {
  const auto edges = head_blocks();
  return num::matmul_col_blocks(num::gather_rows(hidden(batch, hook), rows), head_, std::span<const Index>(edges));
}

template <typename T>
Tensor<T> LanguageModel<T>::token_embeddings(std::span<const int> ids) const {
  return num::embedding(tok_embed_, ids);
}

template <typename T>
LanguageModel<T> LanguageModel<T>::extend_vocabulary(int n_new, double init_scale, num::Rng& rng) const {
  if (n_new < 1) throw ContractError("extend_vocabulary needs n_new >= 1");
  LanguageModel out = clone();
  out.cfg_.vocab = cfg_.vocab.with_semantic(cfg_.vocab.n_semantic() + n_new);
  const Index v_old = tok_embed_.rows();
  const Index d = cfg_.d_model;

  Matrix<T> emb(v_old + n_new, d);
  emb.topRows(v_old) = tok_embed_.value();
  for (Index i = v_old; i < v_old + n_new; ++i)
    for (Index j = 0; j < d; ++j) emb(i, j) = static_cast<T>(rng.normal(0.0, init_scale));

  Matrix<T> head(d, v_old + n_new);
  head.leftCols(v_old) = head_.value();
  for (Index j = v_old; j < v_old + n_new; ++j)
    for (Index i = 0; i < d; ++i) head(i, j) = static_cast<T>(rng.normal(0.0, init_scale));

  out.tok_embed_ = Tensor<T>::from(std::move(emb));
  out.head_ = Tensor<T>::from(std::move(head));
  return out;
}

template <typename T>
LanguageModel<T> LanguageModel<T>::clone() const {
  LanguageModel out = *this;
  out.tok_embed_ = tok_embed_.clone();
  out.pos_embed_ = pos_embed_.clone();
  out.head_ = head_.clone();
  out.stack_ = DecoderStack<T>();
  num::Rng rng(0);
  out.stack_ = DecoderStack<T>::init(cfg_.d_model, cfg_.n_layers, cfg_.n_heads, cfg_.d_ff, rng, cfg_.init_scale);
  copy_parameters(named_parameters(), out.named_parameters());
  return out;
}

template <typename T>
template <typename U>
LanguageModel<U> LanguageModel<T>::cast() const {
  LanguageModel<U> out = LanguageModel<U>::zeros(cfg_);
  copy_parameters(named_parameters(), out.named_parameters());
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> LanguageModel<T>::named_parameters() const {
  std::vector<NamedTensor<T>> out;
  out.emplace_back("lm/tok_embed", tok_embed_);
  out.emplace_back("lm/pos_embed", pos_embed_);
  stack_.collect(out, "lm/");
  out.emplace_back("lm/head", head_);
  return out;
}

template <typename T>
Tensor<T> LanguageModel<T>::parameter(const std::string& name) const {
  for (auto& [n, p] : named_parameters())
    if (n == name) return p;
  throw ConfigError("unknown parameter " + name);
}

template <typename T, typename U>
void copy_parameters(const std::vector<NamedTensor<U>>& from, const std::vector<NamedTensor<T>>& to) {
  if (from.size() != to.size()) throw ShapeError("copy_parameters: parameter count differs");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].first != to[i].first) throw ShapeError("copy_parameters: name mismatch " + from[i].first);
    auto dst = to[i].second;
    const auto& src = from[i].second.value();
    if (src.rows() != dst.rows() || src.cols() != dst.cols()) {
      throw ShapeError("copy_parameters: shape mismatch for " + from[i].first);
    }
    dst.mutable_value() = src.template cast<T>();
  }
}

template <typename T>
std::uint64_t checksum(const std::vector<NamedTensor<T>>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, p] : params) {
    mix(name.data(), name.size());
    mix(p.value().data(), static_cast<std::size_t>(p.value().size()) * sizeof(T));
  }
  return h;
}

template <typename T>
Tensor<T> gaussian_init(Index rows, Index cols, double stddev, num::Rng& rng) {
  return gaussian<T>(rows, cols, stddev, rng);
}

template <typename T>
Tensor<T> sinusoidal_init(Index rows, Index cols, double rms) {
  return sinusoidal<T>(rows, cols, rms);
}

template Tensor<float> gaussian_init(Index, Index, double, num::Rng&);
template Tensor<double> gaussian_init(Index, Index, double, num::Rng&);
template Tensor<float> sinusoidal_init(Index, Index, double);
template Tensor<double> sinusoidal_init(Index, Index, double);
template class DecoderStack<float>;
template class DecoderStack<double>;
template class LanguageModel<float>;
template class LanguageModel<double>;
template LanguageModel<double> LanguageModel<float>::cast<double>() const;
template LanguageModel<float> LanguageModel<double>::cast<float>() const;
template LanguageModel<float> LanguageModel<float>::cast<float>() const;
template void copy_parameters(const std::vector<NamedTensor<float>>&, const std::vector<NamedTensor<float>>&);
template void copy_parameters(const std::vector<NamedTensor<double>>&, const std::vector<NamedTensor<float>>&);
template void copy_parameters(const std::vector<NamedTensor<float>>&, const std::vector<NamedTensor<double>>&);
template void copy_parameters(const std::vector<NamedTensor<double>>&, const std::vector<NamedTensor<double>>&);
template std::uint64_t checksum(const std::vector<NamedTensor<float>>&);
template std::uint64_t checksum(const std::vector<NamedTensor<double>>&);

}  // namespace mslb::lm
