// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <numeric>

#include "mslb/error.h"
#include "mslb/mole/mole.h"
#include "oracles.h"

using namespace mslb;
using namespace mslb::lm;
using namespace mslb::mole;

namespace {

LmConfig small() {
  LmConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 24;
  c.vocab = UnifiedVocab(64, 8);
  return c;
}

template <typename T>
lora::Expert<T> random_expert(const LanguageModel<T>& m, const std::string& name, std::uint64_t seed) {
  num::Rng rng(seed);
  auto e = lora::inject_lora(m, name, 2, 4.0, rng);
  for (auto& [t, ad] : e.adapters()) {
    for (Index i = 0; i < ad.b.value().size(); ++i) ad.b.mutable_value().data()[i] = static_cast<T>(rng.normal(0, 0.1));
  }
  return e;
}

template <typename T>
void randomize_router(Router<T>& r, std::uint64_t seed) {
  num::Rng rng(seed);
  for (auto& [n, t] : r.named_parameters()) {
    for (Index i = 0; i < t.value().size(); ++i) t.mutable_value().data()[i] = static_cast<T>(rng.normal(0, 1.0));
  }
}

}  // namespace

TEST_CASE("an untrained router returns uniform gates") {
  num::Rng rng(1), rr(2);
  auto m = LanguageModel<float>::init(small(), rng);
  MoleModel<float> mm(m, {random_expert(m, "a", 3), random_expert(m, "b", 4)}, Router<float>::init(16, 8, 2, rr));
  const auto g = mm.route({19, 25, 22, 1, 23});
  CHECK(g[0] == doctest::Approx(0.5));
  CHECK(g[1] == doctest::Approx(0.5));
}

TEST_CASE("one-hot gates reproduce the standalone expert") {
  num::Rng rng(5), rr(6);
  auto m = LanguageModel<float>::init(small(), rng);
  auto a = random_expert(m, "a", 7), b = random_expert(m, "b", 8), c = random_expert(m, "c", 9);
  MoleModel<float> mm(m, {a, b, c}, Router<float>::init(16, 8, 3, rr));
  const auto tb = TokenBatch::pack({{19, 25, 22, 1, 2, 23, 64}, {19, 26, 22, 3, 23}});
  const std::vector<lora::Expert<float>*> ex = {&a, &b, &c};
  for (int k = 0; k < 3; ++k) {
    num::Matrix<float> g = num::Matrix<float>::Zero(2, 3);
    g.col(k).setOnes();
    const auto mixed = mm.forward(tb, Tensor<float>::from(g)).value();
    lora::ExpertHook<float> hook(*ex[k]);
    const auto alone = m.forward(tb, &hook).value();
    CHECK((mixed - alone).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("gates stay on the simplex for arbitrary router weights and prompts") {
  num::Rng rng(10), rr(11), pr(12);
  auto m = LanguageModel<float>::init(small(), rng);
  auto router = Router<float>::init(16, 8, 3, rr);
  randomize_router(router, 13);
  MoleModel<float> mm(m, {random_expert(m, "a", 1), random_expert(m, "b", 2), random_expert(m, "c", 3)}, router);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> p(1 + pr.below(10));
    for (auto& t : p) t = static_cast<int>(pr.below(72));
    const auto g = mm.route(p);
    CHECK(std::accumulate(g.begin(), g.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
    for (double x : g) CHECK(x >= 0.0);
  }
  mm.set_hard_routing(true);
  const auto h = mm.route({19, 25});
  CHECK(std::count(h.begin(), h.end(), 1.0) == 1);
  CHECK(std::count(h.begin(), h.end(), 0.0) == 2);
}

TEST_CASE("router input ignores tokens after the prompt") {
  num::Rng rng(14), rr(15);
  auto m = LanguageModel<float>::init(small(), rng);
  auto router = Router<float>::init(16, 8, 2, rr);
  randomize_router(router, 16);
  MoleModel<float> mm(m, {random_expert(m, "a", 1), random_expert(m, "b", 2)}, router);
  const auto t1 = TokenBatch::single({19, 25, 22, 1, 23, 64, 65});
  const auto t2 = TokenBatch::single({19, 25, 22, 1, 23, 70});
  const std::vector<Index> pl = {5};
  CHECK(mm.route_batch(t1, pl).value() == mm.route_batch(t2, pl).value());
}

TEST_CASE("gate and shape contracts") {
  num::Rng rng(17), rr(18);
  auto m = LanguageModel<float>::init(small(), rng);
  MoleModel<float> mm(m, {random_expert(m, "a", 1), random_expert(m, "b", 2)}, Router<float>::init(16, 8, 2, rr));
  const auto tb = TokenBatch::single({19, 25});
  CHECK_THROWS_AS(mm.forward(tb, Tensor<float>::from(num::Matrix<float>::Constant(1, 3, 0.3f))), ContractError);
  CHECK_THROWS_AS(mm.route({}), ContractError);
  CHECK(mm.expert_index("b") == 1);
}

TEST_CASE("router gradients match finite differences (double)") {
  num::Rng rng(19), rr(20);
  auto m = LanguageModel<double>::init(small(), rng);
  auto router = Router<double>::init(16, 8, 2, rr);
  randomize_router(router, 21);
  MoleModel<double> mm(m, {random_expert(m, "a", 1), random_expert(m, "b", 2)}, router);
  Sample s1{{19, 25, 22, 1, 23}, {64, 65, 20}, 0}, s2{{19, 26, 22, 2, 16, 3, 23}, {5, 20}, 1};
  const auto tf = teacher_forced({&s1, &s2});
  std::vector<Tensor<double>> ps;
  for (auto& [n, t] : mm.router().named_parameters()) ps.push_back(t);
  auto f = [&] {
    const auto g = mm.route_batch(tf.batch, tf.prompt_lengths);
    return num::cross_entropy(mm.forward(tf.batch, g), tf.targets, kIgnoreId);
  };
  CHECK(oracle::grad_rel_error(f, ps) < 1e-4);
}

TEST_CASE("router training changes only router parameters") {
  num::Rng rng(22), rr(23);
  auto m = LanguageModel<float>::init(small(), rng);
  MoleModel<float> mm(m, {random_expert(m, "tts", 1), random_expert(m, "text", 2)}, Router<float>::init(16, 8, 2, rr));
  std::vector<Sample> tts, qa;
  for (int i = 0; i < 8; ++i) {
    tts.push_back({{19, 25, 22, i, 23}, {64 + (i % 8), 20}, 0});
    qa.push_back({{19, 26, 22, i, 16, 1, 23}, {(i + 1) % 10, 20}, 1});
  }
  auto is_router = [](const std::string& n) { return n.rfind("router/", 0) == 0; };
  auto not_router = [&](const std::string& n) { return !is_router(n); };
  const auto frozen = oracle::checksum(mm.named_parameters(), not_router);
  const auto before = oracle::checksum(mm.named_parameters(), is_router);
  TrainOptions o;
  o.steps = 10;
  o.batch_size = 4;
  o.opt.lr_max = 1e-2;
  const auto r = train_router(mm, {&tts, &qa}, {0.5, 0.5}, o);
  CHECK(r.warning.empty());
  CHECK(oracle::checksum(mm.named_parameters(), not_router) == frozen);
  CHECK(oracle::checksum(mm.named_parameters(), is_router) != before);
  CHECK_FALSE(train_router(mm, {&tts}, {1.0}, o).warning.empty());
}

TEST_CASE("router training needs two experts") {
  num::Rng rng(24), rr(25);
  auto m = LanguageModel<float>::init(small(), rng);
  MoleModel<float> mm(m, {random_expert(m, "a", 1)}, Router<float>::init(16, 8, 1, rr));
  std::vector<Sample> d = {{{19, 25}, {64, 20}, 0}};
  CHECK_THROWS_AS(train_router(mm, {&d}, {1.0}, TrainOptions{}), ContractError);
}
