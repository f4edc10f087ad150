// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "mslb/error.h"
#include "mslb/lm/training.h"
#include "mslb/lora/lora.h"
#include "oracles.h"

using namespace mslb;
using namespace mslb::lm;
using namespace mslb::lora;

namespace {

LmConfig small(int n_sem = 8) {
  LmConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 24;
  c.vocab = UnifiedVocab(64, n_sem);
  return c;
}

template <typename T>
void randomize_b(Expert<T>& e, num::Rng& rng, double s = 0.05) {
  for (auto& [t, ad] : e.adapters()) {
    for (Index i = 0; i < ad.b.value().size(); ++i) ad.b.mutable_value().data()[i] = static_cast<T>(rng.normal(0, s));
  }
}

bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

std::vector<Sample> toy_data() {
  std::vector<Sample> d;
  for (int i = 0; i < 6; ++i) d.push_back({{19, 25, 22, i, 23}, {64 + i, 65, 20}, 0});
  return d;
}

}  // namespace

TEST_CASE("adapters cover every projection with the documented shapes") {
  num::Rng rng(1), lr(2);
  auto m = LanguageModel<float>::init(small(), rng);
  auto e = inject_lora(m, "tts", 4, 8.0, lr);
  CHECK(e.adapters().size() == m.lora_targets().size());
  for (const auto& [t, shape] : m.lora_targets()) {
    const auto& ad = e.adapter(t);
    CHECK(ad.a.rows() == 4);
    CHECK(ad.a.cols() == shape.second);
    CHECK(ad.b.rows() == shape.first);
    CHECK(ad.b.value().isZero(0));
  }
  CHECK(e.scale() == 2.0);
  CHECK(starts_with(e.named_parameters().front().first, "experts/tts/"));
}

TEST_CASE("a fresh expert is bit-neutral") {
  num::Rng rng(3), lr(4);
  auto m = LanguageModel<float>::init(small(), rng);
  auto e = inject_lora(m, "tts", 4, 8.0, lr);
  ExpertHook<float> hook(e);
  const auto tb = TokenBatch::pack({{19, 25, 22, 1, 2, 23}, {19, 26, 22, 5, 23}});
  CHECK(m.forward(tb).value() == m.forward(tb, &hook).value());
}

TEST_CASE("delta equals (alpha / r) B A computed by hand") {
  num::Rng rng(5), lr(6), br(7);
  auto m = LanguageModel<double>::init(small(), rng);
  auto e = inject_lora(m, "x", 3, 5.0, lr);
  randomize_b(e, br);
  for (const auto& [t, ad] : e.adapters()) {
    const oracle::MatD ref = (5.0 / 3.0) * oracle::matmul(ad.b.value(), ad.a.value());
    CHECK((e.delta(t) - ref).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("merged weights reproduce adapter logits") {
  num::Rng rng(8), lr(9), br(10);
  auto m = LanguageModel<float>::init(small(), rng);
  auto e = inject_lora(m, "tts", 4, 8.0, lr);
  randomize_b(e, br);
  ExpertHook<float> hook(e);
  const auto tb = TokenBatch::single({19, 25, 22, 1, 2, 3, 23});
  const auto with_hook = m.forward(tb, &hook).value();
  auto merged = merge_lora(m, e);
  const auto dense = merged.forward(tb).value();
  CHECK((dense - with_hook).norm() / with_hook.norm() <= 1e-5);
  CHECK(e.merged());
  CHECK_THROWS_AS(merge_lora(m, e), ContractError);
}

TEST_CASE("gradients through the adapter path (double)") {
  num::Rng rng(11), lr(12), br(13);
  auto m = LanguageModel<double>::init(small(), rng);
  auto e = inject_lora(m, "tts", 2, 4.0, lr);
  randomize_b(e, br, 0.3);
  ExpertHook<double> hook(e);
  Sample s{{19, 25, 22, 1, 2, 23}, {66, 67, 20}, 0};
  std::vector<Tensor<double>> ps;
  for (auto& [n, t] : e.named_parameters()) ps.push_back(t);
  CHECK(oracle::grad_rel_error([&] { return lm_loss(m, {&s}, &hook); }, ps) < 1e-4);
}

TEST_CASE("policies select the documented parameter sets") {
  num::Rng rng(14), lr(15);
  auto m = LanguageModel<float>::init(small(), rng);
  auto e = inject_lora(m, "tts", 2, 4.0, lr);
  auto all = m.named_parameters();
  for (auto& p : e.named_parameters()) all.push_back(p);
  const auto s1 = apply_policy(all, TrainablePolicy::stage1("tts"));
  for (const auto& [n, t] : s1) {
    CHECK((n == "lm/tok_embed" || n == "lm/pos_embed" || n == "lm/head" || starts_with(n, "experts/tts/")));
  }
  CHECK(s1.size() == 3 + e.named_parameters().size());
  for (const auto& [n, t] : all) CHECK(t.requires_grad() == TrainablePolicy::stage1("tts").allows(n));
  CHECK_THROWS_AS(apply_policy(all, TrainablePolicy::stage2({"nope"})), ConfigError);
}

TEST_CASE("stage-1 and stage-2 training touch only their trainable sets") {
  num::Rng rng(16), lr(17);
  auto m = LanguageModel<float>::init(small(), rng);
  auto tts = inject_lora(m, "tts", 2, 4.0, lr);
  const auto data = toy_data();
  TrainOptions o;
  o.steps = 5;
  o.batch_size = 3;
  o.opt.lr_max = 1e-2;

  auto all = [&](const std::vector<const Expert<float>*>& ex) {
    auto v = m.named_parameters();
    for (const auto* e : ex) {
      auto p = e->named_parameters();
      v.insert(v.end(), p.begin(), p.end());
    }
    return v;
  };

  const auto p1 = TrainablePolicy::stage1("tts");
  const auto frozen1 = oracle::checksum(all({&tts}), [&](const std::string& n) { return !p1.allows(n); });
  const auto moving1 = oracle::checksum(all({&tts}), [&](const std::string& n) { return p1.allows(n); });
  {
    ExpertHook<float> hook(tts);
    BatchSampler s({&data}, {1.0}, 1);
    train_loop([&](const auto& b) { return lm_loss(m, b, &hook); }, apply_policy(all({&tts}), p1), s, o);
  }
  CHECK(oracle::checksum(all({&tts}), [&](const std::string& n) { return !p1.allows(n); }) == frozen1);
  CHECK(oracle::checksum(all({&tts}), [&](const std::string& n) { return p1.allows(n); }) != moving1);

  auto text = tts.clone("text");
  const auto p2 = TrainablePolicy::stage2({"text"});
  const auto frozen2 = oracle::checksum(all({&tts, &text}), [&](const std::string& n) { return !p2.allows(n); });
  {
    ExpertHook<float> hook(text);
    BatchSampler s({&data}, {1.0}, 2);
    auto v = m.named_parameters();
    for (auto& p : text.named_parameters()) v.push_back(p);
    train_loop([&](const auto& b) { return lm_loss(m, b, &hook); }, apply_policy(v, p2), s, o);
  }
  CHECK(oracle::checksum(all({&tts, &text}), [&](const std::string& n) { return !p2.allows(n); }) == frozen2);
}

TEST_CASE("clone is deep and renames parameters") {
  num::Rng rng(18), lr(19);
  auto m = LanguageModel<float>::init(small(), rng);
  auto a = inject_lora(m, "tts", 2, 4.0, lr);
  auto b = a.clone("text");
  CHECK(b.name() == "text");
  CHECK(starts_with(b.named_parameters().front().first, "experts/text/"));
  b.adapters().begin()->second.a.mutable_value()(0, 0) += 1.0f;
  CHECK(a.adapters().begin()->second.a.value()(0, 0) != b.adapters().begin()->second.a.value()(0, 0));
}
