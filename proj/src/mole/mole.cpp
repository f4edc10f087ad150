// SPDX-License-Identifier: Apache-2.0
#include "mslb/mole/mole.h"

#include <cmath>
#include <set>

namespace mslb::mole {

template <typename T>
Router<T> Router<T>::init(int d_model, int hidden, int n_experts, num::Rng& rng) {
  if (d_model < 1 || hidden < 1 || n_experts < 1) throw ConfigError("router dimensions must be >= 1");
  Router r;
  r.w1_ = lm::gaussian_init<T>(hidden, d_model, 1.0 / std::sqrt(static_cast<double>(d_model)), rng);
  r.b1_ = Tensor<T>::vector(hidden, T(0));
  r.w2_ = Tensor<T>::zeros(n_experts, hidden);
  r.b2_ = Tensor<T>::vector(n_experts, T(0));
  return r;
}

template <typename T>
Tensor<T> Router<T>::logits(const Tensor<T>& pooled) const {
  if (pooled.cols() != d_model()) throw ShapeError("router input width differs from d_model");
  Tensor<T> h = num::relu(num::add_row(num::matmul_nt(pooled, w1_), b1_));
  return num::add_row(num::matmul_nt(h, w2_), b2_);
}

template <typename T>
std::vector<NamedTensor<T>> Router<T>::named_parameters() const {
  return {{"router/w1", w1_}, {"router/b1", b1_}, {"router/w2", w2_}, {"router/b2", b2_}};
}

template <typename T>
Router<T> Router<T>::clone() const {
  Router r;
  r.w1_ = w1_.clone();
  r.b1_ = b1_.clone();
  r.w2_ = w2_.clone();
  r.b2_ = b2_.clone();
  return r;
}

template <typename T>
template <typename U>
Router<U> Router<T>::cast() const {
  Router<U> r;
  auto c = [](const Tensor<T>& t) { return Tensor<U>::from(t.value().template cast<U>(), false, t.rank()); };
  r.w1_ = c(w1_);
  r.b1_ = c(b1_);
  r.w2_ = c(w2_);
  r.b2_ = c(b2_);
  return r;
}

template <typename T>
Tensor<T> GatedHook<T>::adapt(const std::string& target, const Tensor<T>& x, const Tensor<T>& base,
                              std::span<const Segment> segments) const {
  if (gates_.cols() != static_cast<Index>(experts_.size())) {
    throw ContractError("gate width " + std::to_string(gates_.cols()) + " differs from expert count " +
                        std::to_string(experts_.size()));
  }
  Tensor<T> y = base;
  for (std::size_t k = 0; k < experts_.size(); ++k) {
    const auto& e = experts_[k];
    Tensor<T> d = lora::lora_delta(e.adapter(target), e.scale(), x);
    y = num::add(y, num::scale_rows_by_gate(d, gates_, static_cast<Index>(k), segments));
  }
  return y;
}

template <typename T>
MoleModel<T>::MoleModel(LanguageModel<T> base, std::vector<Expert<T>> experts, Router<T> router, bool hard_routing)
    : base_(std::move(base)), experts_(std::move(experts)), router_(std::move(router)), hard_(hard_routing) {
  if (experts_.empty()) throw ContractError("a mixture needs at least one expert");
  if (router_.n_experts() != static_cast<int>(experts_.size())) {
    throw ContractError("router outputs " + std::to_string(router_.n_experts()) + " gates for " +
                        std::to_string(experts_.size()) + " experts");
  }
  if (router_.d_model() != base_.config().d_model) throw ShapeError("router width differs from the model width");
  const auto targets = base_.lora_targets();
  for (const auto& e : experts_) {
    if (e.merged()) throw ContractError("expert " + e.name() + " was merged into a base model");
    for (const auto& [t, shape] : targets) e.adapter(t);
  }
}

template <typename T>
int MoleModel<T>::expert_index(const std::string& name) const {
  for (std::size_t k = 0; k < experts_.size(); ++k) {
    if (experts_[k].name() == name) return static_cast<int>(k);
  }
  throw ContractError("no expert named " + name);
}

namespace {

template <typename T>
Tensor<T> pooled_input(const LanguageModel<T>& base, const TokenBatch& batch, std::span<const Index> counts) {
  Tensor<T> emb = base.token_embeddings(std::span<const int>(batch.ids));
  Tensor<T> pooled = num::segment_mean(emb, std::span<const Segment>(batch.segments), counts);
  const Tensor<T> ones = Tensor<T>::vector(pooled.cols(), T(1));
  return num::rms_norm(pooled, ones);
}

template <typename T>
Matrix<T> one_hot_rows(const Matrix<T>& soft) {
  Matrix<T> hard = Matrix<T>::Zero(soft.rows(), soft.cols());
  for (Index i = 0; i < soft.rows(); ++i) {
    Index best = 0;
    for (Index k = 1; k < soft.cols(); ++k) {
      if (soft(i, k) > soft(i, best)) best = k;
    }
    hard(i, best) = T(1);
  }
  return hard;
}

}  // namespace

template <typename T>
Tensor<T> MoleModel<T>::route_batch(const TokenBatch& batch, std::span<const Index> prompt_lengths) const {
  if (prompt_lengths.size() != batch.segments.size()) throw ContractError("one prompt length per sequence required");
  for (std::size_t b = 0; b < batch.segments.size(); ++b) {
    if (prompt_lengths[b] < 1 || prompt_lengths[b] > batch.segments[b].length) {
      throw ContractError("prompt length outside its sequence");
    }
  }
  Tensor<T> g = router_.gates(pooled_input(base_, batch, prompt_lengths));
  if (hard_) return Tensor<T>::from(one_hot_rows(g.value()));
  return g;
}

template <typename T>
std::vector<double> MoleModel<T>::route(const std::vector<int>& prompt) const {
  if (prompt.empty()) throw ContractError("cannot route an empty prompt");
  num::NoGradGuard guard;
  const TokenBatch batch = TokenBatch::single(prompt);
  const Index n = static_cast<Index>(prompt.size());
  const Tensor<T> g = route_batch(batch, std::span<const Index>(&n, 1));
  std::vector<double> out;
  for (Index k = 0; k < g.cols(); ++k) out.push_back(static_cast<double>(g.value()(0, k)));
  return out;
}

template <typename T>
Tensor<T> MoleModel<T>::forward(const TokenBatch& batch, const Tensor<T>& gates) const {
  if (gates.cols() != static_cast<Index>(experts_.size())) {
    throw ContractError("gate count " + std::to_string(gates.cols()) + " differs from expert count " +
                        std::to_string(experts_.size()));
  }
  if (gates.rows() != static_cast<Index>(batch.segments.size())) throw ContractError("one gate row per sequence required");
  GatedHook<T> hook(experts_, gates);
  return base_.forward(batch, &hook);
}

template <typename T>
Tensor<T> MoleModel<T>::forward_rows(const TokenBatch& batch, std::span<const Index> rows, const Tensor<T>& gates) const {
  if (gates.cols() != static_cast<Index>(experts_.size())) {
    throw ContractError("gate count " + std::to_string(gates.cols()) + " differs from expert count " +
                        std::to_string(experts_.size()));
  }
  if (gates.rows() != static_cast<Index>(batch.segments.size())) throw ContractError("one gate row per sequence required");
  GatedHook<T> hook(experts_, gates);
  return base_.forward_rows(batch, rows, &hook);
}

template <typename T>
Tensor<T> MoleModel<T>::gate_tensor(const std::vector<double>& g) const {
  Matrix<T> m(1, static_cast<Index>(g.size()));
  for (std::size_t k = 0; k < g.size(); ++k) m(0, static_cast<Index>(k)) = static_cast<T>(g[k]);
  return Tensor<T>::from(std::move(m));
}

template <typename T>
std::vector<float> MoleModel<T>::next_logits(const std::vector<int>& seq, const std::vector<double>& gates) const {
  num::NoGradGuard guard;
  const TokenBatch batch = TokenBatch::single(seq);
  const auto rows = batch.last_rows();
  const Tensor<T> l = forward_rows(batch, rows, gate_tensor(gates));
  std::vector<float> out(static_cast<std::size_t>(l.cols()));
  for (Index i = 0; i < l.cols(); ++i) out[i] = static_cast<float>(l.value()(0, i));
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> MoleModel<T>::named_parameters() const {
  auto out = base_.named_parameters();
  for (const auto& e : experts_) {
    auto p = e.named_parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  auto r = router_.named_parameters();
  out.insert(out.end(), r.begin(), r.end());
  return out;
}

Tensor<float> mole_loss(const MoleModel<float>& model, const std::vector<const lm::Sample*>& samples) {
  const lm::TeacherForced tf = lm::teacher_forced(samples);
  std::vector<Index> rows;
  std::vector<int> targets;
  for (std::size_t i = 0; i < tf.targets.size(); ++i) {
    if (tf.targets[i] == lm::kIgnoreId) continue;
    rows.push_back(static_cast<Index>(i));
    targets.push_back(tf.targets[i]);
  }
  const Tensor<float> gates = model.route_batch(tf.batch, std::span<const Index>(tf.prompt_lengths));
  const Tensor<float> logits = model.forward_rows(tf.batch, rows, gates);
  return num::cross_entropy(logits, std::span<const int>(targets), lm::kIgnoreId);
}

RouterTrainResult train_router(MoleModel<float>& model, const std::vector<const std::vector<lm::Sample>*>& pools,
                               const std::vector<double>& weights, const lm::TrainOptions& opts,
                               const lm::LogFn& on_log) {
  if (model.experts().size() < 2) throw ContractError("router training needs at least two experts");
  RouterTrainResult result;
  std::set<int> tasks;
  for (std::size_t i = 0; i < pools.size(); ++i) {
    if (i < weights.size() && weights[i] <= 0) continue;
    for (const auto& s : *pools[i]) tasks.insert(s.task);
  }
  if (tasks.size() < 2) result.warning = "router training data covers a single task; the router may collapse";
  if (opts.steps <= 0) return result;
  auto trainable = lora::apply_policy(model.named_parameters(), lora::TrainablePolicy::stage3());
  lm::BatchSampler sampler(pools, weights, num::Rng(opts.seed).fork(0x726f7574).seed());
  auto loss_fn = [&model](const std::vector<const lm::Sample*>& b) { return mole_loss(model, b); };
  result.log = lm::train_loop(loss_fn, trainable, sampler, opts, on_log);
  return result;
}

template class Router<float>;
template class Router<double>;
template Router<double> Router<float>::cast<double>() const;
template Router<float> Router<double>::cast<float>() const;
template class GatedHook<float>;
template class GatedHook<double>;
template class MoleModel<float>;
template class MoleModel<double>;

}  // namespace mslb::mole
