#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"

#include "hcd/gradcheck.hpp"
#include "hcd/hcd.hpp"
#include "hcd/rng.hpp"

using namespace hcd;

namespace {

Tensor randn(Rng& rng, Shape shape, bool rg = false) {
  Tensor t(std::move(shape), 0.0, rg);
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
  return t;
}

std::vector<std::vector<Tensor>> tensorize(
    const std::vector<std::vector<std::vector<double>>>& subs, int64_t batch,
    int64_t k) {
  std::vector<std::vector<Tensor>> out(subs.size());
  for (size_t i = 0; i < subs.size(); ++i)
    for (const auto& s : subs[i])
      out[i].push_back(Tensor::from({batch, k}, s));
  return out;
}

}  // namespace

TEST_CASE("cfm head shapes and teacher isolation") {
  ParamStore store;
  CfmHead head(store, "cfm.stage1", 16, /*m=*/8, /*d=*/32, /*n=*/4, /*k=*/10);
  init_params(store, 5);
  Rng rng(1);
  Tensor feat = randn(rng, {2, 16, 8, 8}, true);
  Tensor teacher = randn(rng, {2, 32});

  Tensor z = head.forward(feat, teacher, true, false);
  CHECK(z.shape() == Shape{2, 40});

  SUBCASE("gradients reach the stage feature, never the teacher") {
    Graph g;
    {
      Recording rec(g);
      Tensor z2 = head.forward(feat, teacher, true, false);
      g.backward(reduce_all(z2, Reduce::kSum));
    }
    CHECK(feat.has_grad());
    CHECK(!teacher.has_grad());
  }
  SUBCASE("a teacher tensor that requires grad is rejected") {
    Tensor live = randn(rng, {2, 32}, true);
    CHECK_THROWS_AS(head.forward(feat, live, true, false), Error);
  }
  SUBCASE("width mismatch is an error") {
    CHECK_THROWS_AS(head.forward(feat, randn(rng, {2, 16}), true, false), Error);
  }
  SUBCASE("with zero teacher features the teacher columns of FC1 are inert") {
    Tensor zero_teacher({2, 32}, 0.0);
    Tensor base = head.forward(feat, zero_teacher, true, false);
    // scramble the FC1 rows that multiply the teacher half of the concat
    for (auto& e : store.params())
      if (e.name == "cfm.stage1.fc1.w")
        for (int64_t r = 8; r < 8 + 32; ++r)
          for (int64_t c = 0; c < e.tensor.shape()[1]; ++c)
            e.tensor.at({r, c}) += 10.0;
    Tensor scrambled = head.forward(feat, zero_teacher, true, false);
    CHECK(base.values() == scrambled.values());
  }
}

TEST_CASE("cfm gradient vs finite differences") {
  ParamStore store;
  CfmHead head(store, "cfm.s", 4, 4, 8, 2, 3);
  init_params(store, 11);
  Rng rng(2);
  Tensor feat = randn(rng, {2, 4, 4, 4}, true);
  Tensor teacher = randn(rng, {2, 8});
  auto f = [&] {
    return reduce_all(head.forward(feat, teacher, true, false), Reduce::kSum);
  };
  GradCheckOptions opt;
  opt.max_coords_per_input = 40;
  auto rep = grad_check(f, {feat}, opt);
  CHECK(rep.checked > 0);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("decompose") {
  SUBCASE("n=1 is the identity") {
    Tensor z = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    auto subs = decompose(z, 1, 3);
    REQUIRE(subs.size() == 1);
    CHECK(subs[0].values() == z.values());
  }
  SUBCASE("row [1,2,3,4] with n=2, K=2 splits into [1,2] and [3,4]") {
    Tensor z = Tensor::from({1, 4}, {1, 2, 3, 4});
    auto subs = decompose(z, 2, 2);
    CHECK(subs[0].values() == std::vector<double>{1, 2});
    CHECK(subs[1].values() == std::vector<double>{3, 4});
  }
  SUBCASE("re-concatenation reproduces the input bit-exactly") {
    Rng rng(3);
    Tensor z = randn(rng, {3, 12});
    auto subs = decompose(z, 4, 3);
    Tensor back = subs[0];
    for (size_t j = 1; j < subs.size(); ++j) back = concat_features(back, subs[j]);
    CHECK(back.values() == z.values());
  }
  SUBCASE("indivisible width is an error") {
    CHECK_THROWS_AS(decompose(Tensor({1, 7}), 2, 3), Error);
  }
}

TEST_CASE("fuse_teacher") {
  Tensor sub = Tensor::from({1, 2}, {1, 2});
  Tensor teacher = Tensor::from({1, 2}, {3, 4});

  SUBCASE("element-wise addition") {
    FusionSpec add_spec;
    CHECK(fuse_teacher(sub, teacher, add_spec).values() == std::vector<double>{4, 6});
  }
  SUBCASE("ratio 0.5/0.5 equals weighted 0.5/0.5") {
    CHECK(fuse_teacher(sub, teacher, parse_fusion("ratio:0.5:0.5")).values() ==
          fuse_teacher(sub, teacher, parse_fusion("weighted:0.5:0.5")).values());
  }
  SUBCASE("weighted 1/1 equals add bit-exactly") {
    Rng rng(4);
    Tensor s = randn(rng, {5, 7});
    Tensor t = randn(rng, {5, 7});
    CHECK(fuse_teacher(s, t, parse_fusion("weighted:1.0:1.0")).values() ==
          fuse_teacher(s, t, FusionSpec{}).values());
  }
  SUBCASE("none leaves the sub-logit untouched") {
    CHECK(fuse_teacher(sub, teacher, parse_fusion("none")).values() == sub.values());
  }
  SUBCASE("invalid weights are config errors") {
    CHECK_THROWS_AS(fuse_teacher(sub, teacher, parse_fusion("ratio:0.7:0.4")), Error);
    CHECK_THROWS_AS(fuse_teacher(sub, teacher, parse_fusion("weighted:1.0:0.5")), Error);
    CHECK_THROWS_AS(parse_fusion("bogus"), Error);
  }
}

TEST_CASE("sub_kd_loss") {
  SUBCASE("identical logits give zero") {
    Tensor z = Tensor::from({2, 3}, {1, 2, 3, -1, 0, 1});
    std::vector<std::vector<Tensor>> subs{{z, z}};
    CHECK(std::abs(sub_kd_loss(subs, z, 4.0, true, false).item()) <= 1e-12);
  }
  SUBCASE("hand-computed two-class case") {
    // KL([0.25, 0.75] || [0.5, 0.5]) = 0.25 ln 0.5 + 0.75 ln 1.5
    Tensor sub = Tensor::from({1, 2}, {0.0, std::log(3.0)});
    Tensor student = Tensor::from({1, 2}, {0.0, 0.0});
    std::vector<std::vector<Tensor>> subs{{sub}};
    const double expect = 0.25 * std::log(0.5) + 0.75 * std::log(1.5);
    CHECK(sub_kd_loss(subs, student, 1.0, true, false).item() ==
          doctest::Approx(expect).epsilon(1e-12));
    CHECK(sub_kd_loss(subs, student, 1.0, true, false).item() ==
          doctest::Approx(0.13082).epsilon(1e-4));
  }
  SUBCASE("non-negative on random draws") {
    Rng rng(5);
    for (int iter = 0; iter < 1000; ++iter) {
      Tensor a = randn(rng, {2, 5});
      Tensor b = randn(rng, {2, 5});
      std::vector<std::vector<Tensor>> subs{{a}};
      CHECK(sub_kd_loss(subs, b, 2.0, false, false).item() >= -1e-15);
    }
  }
  SUBCASE("matches the explicit-sum oracle") {
    Rng rng(6);
    for (int iter = 0; iter < 100; ++iter) {
      const int64_t B = 1 + int64_t(rng.next_below(3));
      const int64_t K = 2 + int64_t(rng.next_below(5));
      const double tau = rng.uniform(0.5, 6.0);
      std::vector<std::vector<std::vector<double>>> raw(2);
      for (auto& stage : raw)
        for (int j = 0; j < 2; ++j) {
          std::vector<double> v(size_t(B * K));
          for (auto& x : v) x = rng.normal() * 3.0;
          stage.push_back(v);
        }
      std::vector<double> student(size_t(B * K));
      for (auto& x : student) x = rng.normal() * 3.0;
      auto subs = tensorize(raw, B, K);
      const double got =
          sub_kd_loss(subs, Tensor::from({B, K}, student), tau, true, false).item();
      const double expect = oracle::sub_kd(raw, student, B, K, tau, true);
      CHECK(std::abs(got - expect) <= 1e-12);
    }
  }
  SUBCASE("gradient flows into both sides unless the student is detached") {
    Rng rng(7);
    Tensor sub = randn(rng, {2, 4}, true);
    Tensor student = randn(rng, {2, 4}, true);
    {
      Graph g;
      Recording rec(g);
      std::vector<std::vector<Tensor>> subs{{sub}};
      g.backward(sub_kd_loss(subs, student, 2.0, true, false));
      CHECK(sub.has_grad());
      CHECK(student.has_grad());
    }
    sub.zero_grad();
    student.zero_grad();
    {
      Graph g;
      Recording rec(g);
      std::vector<std::vector<Tensor>> subs{{sub}};
      g.backward(sub_kd_loss(subs, student, 2.0, true, true));
      CHECK(sub.has_grad());
      CHECK(!student.has_grad());
    }
  }
}

TEST_CASE("sub_ce_loss") {
  SUBCASE("uniform logits cost ln K") {
    Tensor z({2, 10}, 0.0);
    std::vector<std::vector<Tensor>> subs{{z}};
    CHECK(sub_ce_loss(subs, {3, 7}).item() ==
          doctest::Approx(std::log(10.0)).epsilon(1e-12));
  }
  SUBCASE("a huge aligned margin drives the loss to zero") {
    Tensor z({1, 4}, 0.0);
    z.at({0, 2}) = 50.0;
    std::vector<std::vector<Tensor>> subs{{z}};
    CHECK(sub_ce_loss(subs, {2}).item() <= 1e-12);
  }
  SUBCASE("matches the explicit-sum oracle") {
    Rng rng(8);
    for (int iter = 0; iter < 100; ++iter) {
      const int64_t B = 1 + int64_t(rng.next_below(4));
      const int64_t K = 2 + int64_t(rng.next_below(6));
      std::vector<std::vector<std::vector<double>>> raw(1);
      for (int j = 0; j < 3; ++j) {
        std::vector<double> v(size_t(B * K));
        for (auto& x : v) x = rng.normal() * 2.0;
        raw[0].push_back(v);
      }
      std::vector<int64_t> labels;
      for (int64_t b = 0; b < B; ++b) labels.push_back(int64_t(rng.next_below(uint64_t(K))));
      auto subs = tensorize(raw, B, K);
      CHECK(std::abs(sub_ce_loss(subs, labels).item() -
                     oracle::sub_ce(raw, labels, B, K)) <= 1e-12);
    }
  }
  SUBCASE("label out of range is an error") {
    Tensor z({1, 3}, 0.0);
    std::vector<std::vector<Tensor>> subs{{z}};
    CHECK_THROWS_AS(sub_ce_loss(subs, {3}), Error);
  }
}

TEST_CASE("mask_ground_truth") {
  Tensor z = Tensor::from({1, 3}, {2, 3, 5});
  Tensor masked = mask_ground_truth(z, {0}, 1e-6);
  CHECK(masked.values()[0] == -1e-6);
  CHECK(masked.values()[1] == 3.0);
  CHECK(masked.values()[2] == 5.0);

  SUBCASE("original is untouched") { CHECK(z.values() == std::vector<double>{2, 3, 5}); }
  SUBCASE("masking twice equals masking once") {
    Tensor twice = mask_ground_truth(masked, {0}, 1e-6);
    CHECK(twice.values() == masked.values());
  }
  SUBCASE("non-target coordinates are bit-identical") {
    Rng rng(9);
    Tensor r = randn(rng, {4, 6});
    Tensor m = mask_ground_truth(r, {1, 2, 3, 0}, 1e-6);
    const std::vector<int64_t> labels = {1, 2, 3, 0};
    for (int64_t b = 0; b < 4; ++b)
      for (int64_t j = 0; j < 6; ++j) {
        if (j == labels[size_t(b)]) CHECK(m.at({b, j}) == -1e-6);
        else CHECK(m.at({b, j}) == r.at({b, j}));
      }
  }
  SUBCASE("no gradient passes through the masked position") {
    Tensor r = Tensor::from({1, 3}, {2, 3, 5}, true);
    Graph g;
    {
      Recording rec(g);
      g.backward(reduce_all(mask_ground_truth(r, {1}, 1e-6), Reduce::kSum));
    }
    CHECK(r.grad() == std::vector<double>{1, 0, 1});
  }
}

TEST_CASE("orth_loss") {
  SUBCASE("two identical sub-logits score (1 - theta)^2 = 0.25") {
    Tensor z = Tensor::from({1, 4}, {1, 2, 3, 4});
    std::vector<std::vector<Tensor>> subs{{z, z}};
    CHECK(orth_loss(subs, 0.5).item() == 0.25);
  }
  SUBCASE("orthogonal sub-logits score zero") {
    Tensor a = Tensor::from({1, 2}, {1, 0});
    Tensor b = Tensor::from({1, 2}, {0, 1});
    std::vector<std::vector<Tensor>> subs{{a, b}};
    CHECK(orth_loss(subs, 0.5).item() == 0.0);
  }
  SUBCASE("cosine exactly at the threshold is inactive") {
    // dot = 4, norms 2 and 4, so the cosine is exactly 0.5 in binary
    Tensor a = Tensor::from({1, 4}, {1, 1, 1, 1});
    Tensor b = Tensor::from({1, 4}, {4, 0, 0, 0});
    std::vector<std::vector<Tensor>> subs{{a, b}};
    CHECK(orth_loss(subs, 0.5).item() == 0.0);
  }
  SUBCASE("duplicated pair among orthogonal vectors = 0.25 * pair fraction") {
    Tensor e0 = Tensor::from({1, 4}, {1, 0, 0, 0});
    Tensor e1 = Tensor::from({1, 4}, {0, 1, 0, 0});
    Tensor e2 = Tensor::from({1, 4}, {0, 0, 1, 0});
    std::vector<std::vector<Tensor>> subs{{e0, e0, e1, e2}};
    // 2 of the 12 ordered pairs are the identical pair
    CHECK(orth_loss(subs, 0.5).item() == doctest::Approx(0.25 * 2.0 / 12.0).epsilon(1e-15));
  }
  SUBCASE("n=1 contributes nothing") {
    Tensor z = Tensor::from({1, 3}, {1, 2, 3});
    std::vector<std::vector<Tensor>> subs{{z}};
    CHECK(orth_loss(subs, 0.5).item() == 0.0);
  }
  SUBCASE("matches the quadruple-loop oracle") {
    Rng rng(10);
    for (int iter = 0; iter < 100; ++iter) {
      const int64_t B = 1 + int64_t(rng.next_below(3));
      const int64_t K = 2 + int64_t(rng.next_below(9));
      const int64_t n = 2 + int64_t(rng.next_below(3));
      const size_t stages = 1 + size_t(rng.next_below(2));
      std::vector<std::vector<std::vector<double>>> raw(stages);
      for (auto& stage : raw)
        for (int64_t j = 0; j < n; ++j) {
          std::vector<double> v(size_t(B * K));
          for (auto& x : v) x = rng.normal();
          stage.push_back(v);
        }
      auto subs = tensorize(raw, B, K);
      CHECK(std::abs(orth_loss(subs, 0.5).item() - oracle::orth(raw, B, K, 0.5)) <= 1e-12);
    }
  }
  SUBCASE("permuting the sub-logit index leaves the value unchanged") {
    Rng rng(11);
    std::vector<Tensor> subs;
    for (int j = 0; j < 4; ++j) subs.push_back(randn(rng, {3, 6}));
    std::vector<std::vector<Tensor>> a{{subs[0], subs[1], subs[2], subs[3]}};
    std::vector<std::vector<Tensor>> b{{subs[2], subs[0], subs[3], subs[1]}};
    CHECK(orth_loss(a, 0.5).item() == doctest::Approx(orth_loss(b, 0.5).item()).epsilon(1e-15));
  }
  SUBCASE("per-sub-logit positive scaling is invariant") {
    Rng rng(12);
    std::vector<Tensor> subs;
    for (int j = 0; j < 3; ++j) subs.push_back(randn(rng, {2, 5}));
    std::vector<std::vector<Tensor>> a{{subs[0], subs[1], subs[2]}};
    std::vector<std::vector<Tensor>> b{
        {scale(subs[0], 3.7), scale(subs[1], 0.01), scale(subs[2], 250.0)}};
    CHECK(std::abs(orth_loss(a, 0.5).item() - orth_loss(b, 0.5).item()) <= 1e-12);
  }
  SUBCASE("zero-norm sub-logit is an error") {
    Tensor a = Tensor::from({1, 2}, {1, 0});
    Tensor zero({1, 2}, 0.0);
    std::vector<std::vector<Tensor>> subs{{a, zero}};
    CHECK_THROWS_AS(orth_loss(subs, 0.5), Error);
  }
  SUBCASE("gradient flows into the sub-logits") {
    Rng rng(13);
    Tensor a = randn(rng, {2, 4}, true);
    Tensor b = randn(rng, {2, 4}, true);
    auto f = [&] {
      std::vector<std::vector<Tensor>> subs{{a, b}};
      return orth_loss(subs, 0.1);  // low threshold keeps the hinge active
    };
    GradCheckOptions opt;
    auto rep = grad_check(f, {a, b}, opt);
    CHECK(rep.checked > 0);
    CHECK(rep.max_rel_err <= 1e-4);
  }
}

TEST_CASE("vanilla_kd_loss") {
  Rng rng(14);
  SUBCASE("alpha = 1 reduces to plain cross-entropy") {
    Tensor s = randn(rng, {3, 5});
    Tensor t = randn(rng, {3, 5});
    std::vector<int64_t> labels = {0, 2, 4};
    CHECK(vanilla_kd_loss(s, t, labels, 1.0, 4.0, true).item() ==
          doctest::Approx(cross_entropy(s, labels).item()).epsilon(1e-15));
  }
  SUBCASE("matching logits at alpha = 0 give zero") {
    Tensor s = randn(rng, {3, 5});
    CHECK(std::abs(vanilla_kd_loss(s, s.detach(), {0, 1, 2}, 0.0, 4.0, true).item()) <=
          1e-12);
  }
  SUBCASE("matches the explicit-sum oracle") {
    for (int iter = 0; iter < 100; ++iter) {
      const int64_t B = 1 + int64_t(rng.next_below(4));
      const int64_t K = 2 + int64_t(rng.next_below(6));
      const double tau = rng.uniform(0.5, 6.0);
      const double alpha = rng.uniform(0.0, 1.0);
      std::vector<double> s(size_t(B * K)), t(size_t(B * K));
      for (auto& x : s) x = rng.normal() * 2.0;
      for (auto& x : t) x = rng.normal() * 2.0;
      std::vector<int64_t> labels;
      for (int64_t b = 0; b < B; ++b) labels.push_back(int64_t(rng.next_below(uint64_t(K))));
      const double got = vanilla_kd_loss(Tensor::from({B, K}, s), Tensor::from({B, K}, t),
                                         labels, alpha, tau, true)
                             .item();
      const double expect = oracle::vanilla_kd(s, t, labels, B, K, alpha, tau, true);
      CHECK(std::abs(got - expect) <= 1e-12);
    }
  }
}

namespace {

struct HcdFixture {
  ParamStore store;
  std::vector<CfmHead> heads;
  StudentNet net;
  HcdConfig cfg;
  Tensor x, t_feats, t_logits;
  std::vector<int64_t> labels;

  explicit HcdFixture(uint64_t seed, HcdConfig config = {})
      : net(store, 1, 16, 16, 10, {8, 8, 16, 16}), cfg(config) {
    cfg.m = 4;
    cfg.d = 8;
    for (int64_t stage : cfg.stages)
      heads.emplace_back(store, "cfm.stage" + std::to_string(stage),
                         net.stage_channels(stage - 1), cfg.m, cfg.d, cfg.n, 10);
    init_params(store, seed);
    Rng rng(seed);
    x = randn(rng, {4, 1, 16, 16});
    t_feats = randn(rng, {4, 8});
    t_logits = Tensor({4, 10});
    labels.resize(4);
    for (int64_t b = 0; b < 4; ++b) {
      labels[size_t(b)] = int64_t(rng.next_below(10));
      for (int64_t j = 0; j < 10; ++j)
        t_logits.at({b, j}) = (j == labels[size_t(b)] ? 6.0 : 0.0) + 0.3 * rng.normal();
    }
  }

  Tensor loss(LossBreakdown* bd) {
    StudentOutput so = net.forward(x, true, false);
    std::vector<Tensor> feats;
    for (int64_t stage : cfg.stages) feats.push_back(so.stage_feats[size_t(stage - 1)]);
    return hcd_total_loss(so.logits, feats, heads, t_feats, t_logits, labels, cfg, true,
                          false, bd);
  }
};

}  // namespace

TEST_CASE("hcd_total_loss") {
  SUBCASE("default config carries the CIFAR/ResNet18 recipe") {
    HcdConfig def;
    CHECK(def.lambda == 1.0);
    CHECK(def.beta == 8.0);
    CHECK(def.omega == 10.0);
    CHECK(def.tau == 4.0);
    CHECK(def.theta == 0.5);
    CHECK(def.eps_mask == 1e-6);
    CHECK(def.n == 4);
    CHECK(def.stages == std::vector<int64_t>{1, 2, 3, 4});
    CHECK(def.fusion.mode == FusionMode::kAdd);
    CHECK(def.tau_squared_kl);
  }
  SUBCASE("switching every extra weight off collapses to CE + sub-CE") {
    HcdConfig cfg;
    cfg.lambda = 0.0;
    cfg.beta = 0.0;
    cfg.omega = 0.0;
    HcdFixture fx(21, cfg);
    LossBreakdown bd;
    Tensor loss = fx.loss(&bd);
    CHECK(bd.kl == 0.0);
    CHECK(bd.sub_kl == 0.0);
    CHECK(bd.orth == 0.0);
    CHECK(bd.total == doctest::Approx(bd.ce + bd.sub_ce).epsilon(1e-15));
    CHECK(loss.item() == bd.total);
  }
  SUBCASE("per-term values are non-negative and the breakdown identity holds") {
    HcdFixture fx(22);
    LossBreakdown bd;
    Tensor loss = fx.loss(&bd);
    CHECK(bd.ce >= 0.0);
    CHECK(bd.sub_ce >= 0.0);
    CHECK(bd.kl >= 0.0);
    CHECK(bd.sub_kl >= 0.0);
    CHECK(bd.orth >= 0.0);
    const double recomposed = bd.ce + bd.sub_ce + fx.cfg.lambda * bd.kl +
                              fx.cfg.beta * bd.sub_kl + fx.cfg.omega * bd.orth;
    CHECK(std::abs(bd.total - recomposed) <= 1e-10);
    CHECK(loss.item() == bd.total);
  }
  SUBCASE("teacher tensors never receive gradient buffers") {
    HcdFixture fx(23);
    Graph g;
    {
      Recording rec(g);
      g.backward(fx.loss(nullptr));
    }
    CHECK(!fx.t_feats.has_grad());
    CHECK(!fx.t_logits.has_grad());
    for (auto& e : fx.store.params()) CHECK(e.tensor.has_grad());
  }
  SUBCASE("full-loss gradients agree with finite differences") {
    HcdConfig cfg;
    cfg.stages = {1, 2};  // small but multi-stage; the full sweep runs in acceptance
    HcdFixture fx(24, cfg);
    auto f = [&] { return fx.loss(nullptr); };
    std::vector<Tensor> inputs;
    for (auto& e : fx.store.params()) inputs.push_back(e.tensor);
    GradCheckOptions opt;
    opt.max_coords_per_input = 4;
    opt.sample_seed = 99;
    auto rep = grad_check(f, inputs, opt);
    CHECK(rep.checked >= 100);
    CHECK(rep.max_rel_err <= 1e-4);
  }
  SUBCASE("n=1 reduces the sub losses to their single-logit values") {
    HcdConfig cfg;
    cfg.n = 1;
    cfg.stages = {4};
    HcdFixture fx(25, cfg);
    LossBreakdown bd;
    (void)fx.loss(&bd);
    CHECK(bd.orth == 0.0);

    // recompute the single fused sub-logit by hand
    StudentOutput so = fx.net.forward(fx.x, true, false);
    Tensor z = fx.heads[0].forward(so.stage_feats[3], fx.t_feats, true, false);
    Tensor fused = fuse_teacher(z, fx.t_logits, fx.cfg.fusion);
    const double kd_single =
        scale(kl_divergence(fused, so.logits, fx.cfg.tau), fx.cfg.tau * fx.cfg.tau).item();
    const double ce_single = cross_entropy(fused, fx.labels).item();
    CHECK(bd.sub_kl == doctest::Approx(kd_single).epsilon(1e-12));
    CHECK(bd.sub_ce == doctest::Approx(ce_single).epsilon(1e-12));
  }
  SUBCASE("config violations error out before any compute") {
    HcdFixture fx(26);
    fx.cfg.n = 0;
    CHECK_THROWS_AS(fx.loss(nullptr), Error);
    fx.cfg = HcdConfig{};
    fx.cfg.fusion = FusionSpec{FusionMode::kRatio, 0.8, 0.4, 1.0, 1.0};
    CHECK_THROWS_AS(fx.loss(nullptr), Error);
  }
}
