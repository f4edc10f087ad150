// SPDX-License-Identifier: Apache-2.0
#include "mslb/lora/lora.h"

namespace mslb::lora {

template <typename T>
const LoraAdapter<T>& Expert<T>::adapter(const std::string& target) const {
  const auto it = adapters_.find(target);
  if (it == adapters_.end()) throw ContractError("expert " + name_ + " has no adapter for " + target);
  return it->second;
}

template <typename T>
Matrix<T> Expert<T>::delta(const std::string& target) const {
  const auto& ad = adapter(target);
  Matrix<T> d = ad.b.value() * ad.a.value();
  return d * static_cast<T>(scale());
}

template <typename T>
std::vector<NamedTensor<T>> Expert<T>::named_parameters() const {
  std::vector<NamedTensor<T>> out;
  for (const auto& [target, ad] : adapters_) {
    out.emplace_back("experts/" + name_ + "/" + target + ".lora_a", ad.a);
    out.emplace_back("experts/" + name_ + "/" + target + ".lora_b", ad.b);
  }
  return out;
}

template <typename T>
Expert<T> Expert<T>::clone(const std::string& new_name) const {
  Expert out(new_name.empty() ? name_ : new_name, rank_, alpha_);
  out.merged_ = merged_;
  for (const auto& [target, ad] : adapters_) out.adapters_[target] = LoraAdapter<T>{ad.a.clone(), ad.b.clone()};
  return out;
}

template <typename T>
template <typename U>
Expert<U> Expert<T>::cast() const {
  Expert<U> out(name_, rank_, alpha_);
  for (const auto& [target, ad] : adapters_) {
    out.adapters()[target] = LoraAdapter<U>{Tensor<U>::from(ad.a.value().template cast<U>()),
                                            Tensor<U>::from(ad.b.value().template cast<U>())};
  }
  if (merged_) out.mark_merged();
  return out;
}

template <typename T>
Expert<T> inject_lora(const LanguageModel<T>& model, const std::string& name, int rank, double alpha, num::Rng& rng) {
  if (rank < 1) throw ContractError("lora rank must be >= 1");
  if (!(alpha > 0)) throw ContractError("lora alpha must be > 0");
  const auto targets = model.lora_targets();
  for (const auto& [target, shape] : targets) {
    if (rank > std::min(shape.first, shape.second)) {
      throw ContractError("lora rank " + std::to_string(rank) + " exceeds a dimension of " + target + " (" +
                          std::to_string(shape.first) + "x" + std::to_string(shape.second) + ")");
    }
  }
  Expert<T> e(name, rank, alpha);
  for (const auto& [target, shape] : targets) {
    const auto [d_out, d_in] = shape;
    Matrix<T> a(rank, d_in);
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = static_cast<T>(rng.normal(0.0, 0.02));
    e.adapters()[target] = LoraAdapter<T>{Tensor<T>::from(std::move(a)), Tensor<T>::zeros(d_out, rank)};
  }
  return e;
}

template <typename T>
Tensor<T> lora_delta(const LoraAdapter<T>& adapter, double scale, const Tensor<T>& x) {
  return num::scale(num::matmul_nt(num::matmul_nt(x, adapter.a), adapter.b), static_cast<T>(scale));
}

template <typename T>
Tensor<T> ExpertHook<T>::adapt(const std::string& target, const Tensor<T>& x, const Tensor<T>& base,
                               std::span<const Segment>) const {
  return num::add(base, lora_delta(expert_.adapter(target), expert_.scale(), x));
}

template <typename T>
LanguageModel<T> merge_lora(const LanguageModel<T>& model, Expert<T>& expert) {
  if (expert.merged()) throw ContractError("expert " + expert.name() + " is already merged; inject a fresh one");
  const auto targets = model.lora_targets();
  for (const auto& [target, ad] : expert.adapters()) {
    const auto it = targets.find(target);
    if (it == targets.end()) throw ShapeError("expert target " + target + " not in model");
    if (ad.b.rows() != it->second.first || ad.a.cols() != it->second.second) {
      throw ShapeError("expert adapter shape mismatch for " + target);
    }
  }
  LanguageModel<T> out = model.clone();
  for (const auto& [target, ad] : expert.adapters()) {
    Tensor<T> w = out.parameter("lm/" + target);
    w.mutable_value() += expert.delta(target);
  }
  expert.mark_merged();
  return out;
}

// ---------------------------------------------------------------------------

TrainablePolicy TrainablePolicy::stage0() { return {0, {"lm/*"}}; }

TrainablePolicy TrainablePolicy::stage1(const std::string& tts_expert) {
  return {1, {"lm/tok_embed", "lm/pos_embed", "lm/head", "experts/" + tts_expert + "/*"}};
}

TrainablePolicy TrainablePolicy::stage2(const std::vector<std::string>& experts) {
  TrainablePolicy p{2, {}};
  for (const auto& e : experts) p.names.push_back("experts/" + e + "/*");
  return p;
}

TrainablePolicy TrainablePolicy::stage3() { return {3, {"router/*"}}; }

namespace {
bool matches(const std::string& pattern, const std::string& name) {
  if (!pattern.empty() && pattern.back() == '*') {
    return name.compare(0, pattern.size() - 1, pattern, 0, pattern.size() - 1) == 0;
  }
  return pattern == name;
}
}  // namespace

bool TrainablePolicy::allows(const std::string& param) const {
  for (const auto& n : names)
    if (matches(n, param)) return true;
  return false;
}

std::vector<NamedTensor<float>> apply_policy(const std::vector<NamedTensor<float>>& all,
                                             const TrainablePolicy& policy) {
  for (const auto& n : policy.names) {
    bool found = false;
    for (const auto& [name, p] : all) found = found || matches(n, name);
    if (!found) throw ConfigError("stage " + std::to_string(policy.stage) + " policy names unknown parameter " + n);
  }
  std::vector<NamedTensor<float>> out;
  for (const auto& [name, p] : all) {
    Tensor<float> t = p;
    const bool on = policy.allows(name);
    t.set_requires_grad(on);
    t.zero_grad();
    if (on) out.emplace_back(name, t);
  }
  return out;
}

template class Expert<float>;
template class Expert<double>;
template Expert<double> Expert<float>::cast<double>() const;
template Expert<float> Expert<double>::cast<float>() const;
template class ExpertHook<float>;
template class ExpertHook<double>;
template Expert<float> inject_lora(const LanguageModel<float>&, const std::string&, int, double, num::Rng&);
template Expert<double> inject_lora(const LanguageModel<double>&, const std::string&, int, double, num::Rng&);
template Tensor<float> lora_delta(const LoraAdapter<float>&, double, const Tensor<float>&);
template Tensor<double> lora_delta(const LoraAdapter<double>&, double, const Tensor<double>&);
template LanguageModel<float> merge_lora(const LanguageModel<float>&, Expert<float>&);
template LanguageModel<double> merge_lora(const LanguageModel<double>&, Expert<double>&);

}  // namespace mslb::lora
