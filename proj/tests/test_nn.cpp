#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "hcd/gradcheck.hpp"
#include "hcd/hcd.hpp"
#include "hcd/nn.hpp"
#include "hcd/rng.hpp"

using namespace hcd;
namespace fs = std::filesystem;

namespace {

Tensor randn(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
  return t;
}

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("hcd_nn_" + name)).string();
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  return std::vector<char>((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("init_params: determinism, init values, He bound") {
  auto build = [](ParamStore& store) {
    StudentNet net(store, 1, 16, 16, 10, {16, 32, 64, 64});
    return net;
  };
  ParamStore s1, s2;
  build(s1);
  build(s2);
  init_params(s1, 99);
  init_params(s2, 99);
  REQUIRE(s1.params().size() == s2.params().size());
  for (size_t i = 0; i < s1.params().size(); ++i)
    CHECK(s1.params()[i].tensor.values() == s2.params()[i].tensor.values());

  for (const auto& e : s1.params()) {
    if (e.name.find(".bn.gamma") != std::string::npos) {
      for (double v : e.tensor.values()) CHECK(v == 1.0);
    } else if (e.name.find(".bn.beta") != std::string::npos ||
               e.name.rfind(".b") == e.name.size() - 2) {
      for (double v : e.tensor.values()) CHECK(v == 0.0);
    } else if (e.name.find(".conv") != std::string::npos) {
      const int64_t cin = e.tensor.shape()[1];
      const double bound = std::sqrt(6.0 / double(9 * cin));
      for (double v : e.tensor.values()) CHECK(std::abs(v) <= bound);
    }
  }

  init_params(s2, 100);
  bool any_differs = false;
  for (size_t i = 0; i < s1.params().size(); ++i)
    if (s1.params()[i].tensor.values() != s2.params()[i].tensor.values())
      any_differs = true;
  CHECK(any_differs);
}

TEST_CASE("student forward: shape contract and purity") {
  ParamStore store;
  StudentNet net(store, 1, 16, 16, 10, {16, 32, 64, 64});
  init_params(store, 7);
  Rng rng(1);
  Tensor x = randn(rng, {3, 1, 16, 16});

  StudentOutput so = net.forward(x, true, false);
  CHECK(so.logits.shape() == Shape{3, 10});
  REQUIRE(so.stage_feats.size() == 4);
  CHECK(so.stage_feats[0].shape() == Shape{3, 16, 8, 8});
  CHECK(so.stage_feats[1].shape() == Shape{3, 32, 4, 4});
  CHECK(so.stage_feats[2].shape() == Shape{3, 64, 2, 2});
  CHECK(so.stage_feats[3].shape() == Shape{3, 64, 1, 1});
  // spatial extent never grows stage to stage
  for (size_t i = 1; i < so.stage_feats.size(); ++i)
    CHECK(so.stage_feats[i].shape()[2] <= so.stage_feats[i - 1].shape()[2]);

  StudentOutput again = net.forward(x, true, false);
  CHECK(so.logits.values() == again.logits.values());

  CHECK_THROWS_AS(net.forward(Tensor({3, 2, 16, 16}), true), Error);
  CHECK_THROWS_AS(StudentNet(store, 1, 12, 12, 10, {8, 8, 8, 8}), Error);
}

TEST_CASE("classifier gradient agrees with finite differences") {
  ParamStore store;
  StudentNet net(store, 1, 8, 8, 4, {4, 8});
  init_params(store, 13);
  Rng rng(2);
  Tensor x = randn(rng, {4, 1, 8, 8});
  std::vector<int64_t> labels = {0, 1, 2, 3};
  auto f = [&] {
    return cross_entropy(net.forward(x, true, false).logits, labels);
  };
  std::vector<Tensor> inputs;
  for (auto& e : store.params())
    if (e.name.rfind("student.classifier", 0) == 0) inputs.push_back(e.tensor);
  REQUIRE(inputs.size() == 2);
  GradCheckOptions opt;
  opt.max_coords_per_input = 30;
  auto rep = grad_check(f, inputs, opt);
  CHECK(rep.checked > 0);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("sgd") {
  SUBCASE("plain step is theta - lr*g") {
    ParamStore store;
    Tensor w = store.add_param("w", {3}, Init::kZeros);
    w.values() = {1.0, 2.0, 3.0};
    SgdConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    Sgd opt(store, cfg);
    Graph g;
    {
      Recording rec(g);
      g.backward(reduce_all(mul(w, w), Reduce::kSum));  // g = 2w
    }
    opt.step(0.1);
    CHECK(w.values()[0] == doctest::Approx(1.0 - 0.1 * 2.0).epsilon(1e-15));
    CHECK(w.values()[2] == doctest::Approx(3.0 - 0.1 * 6.0).epsilon(1e-15));
    CHECK(!w.has_grad());  // step clears gradients
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamStore store;
    Tensor w = store.add_param("w", {2}, Init::kZeros);
    w.values() = {5.0, -5.0};
    SgdConfig cfg;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.0;
    Sgd opt(store, cfg);
    Graph g;
    {
      Recording rec(g);
      g.backward(reduce_all(scale(w, 0.0), Reduce::kSum));
    }
    opt.step(0.5);
    CHECK(w.values() == std::vector<double>{5.0, -5.0});
  }
  SUBCASE("two momentum steps on a constant gradient displace by lr*g*2.9") {
    ParamStore store;
    Tensor w = store.add_param("w", {1}, Init::kZeros);
    w.values() = {10.0};
    SgdConfig cfg;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.0;
    Sgd opt(store, cfg);
    const double lr = 0.01;
    for (int step = 0; step < 2; ++step) {
      Graph g;
      {
        Recording rec(g);
        g.backward(reduce_all(w, Reduce::kSum));  // g = 1
      }
      opt.step(lr);
    }
    // v1 = 1, v2 = 1.9 -> total displacement lr*(1 + 1.9)
    CHECK(w.values()[0] == doctest::Approx(10.0 - lr * 2.9).epsilon(1e-14));
  }
  SUBCASE("one small step on a strictly convex quadratic reduces the loss") {
    ParamStore store;
    Tensor w = store.add_param("w", {4}, Init::kZeros);
    w.values() = {2.0, -1.5, 0.5, 3.0};
    SgdConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    Sgd opt(store, cfg);
    auto loss_value = [&] {
      double s = 0.0;
      for (double v : w.values()) s += (v - 1.0) * (v - 1.0);
      return s;
    };
    const double before = loss_value();
    Graph g;
    {
      Recording rec(g);
      Tensor diff = add_scalar(w, -1.0);
      g.backward(reduce_all(mul(diff, diff), Reduce::kSum));
    }
    opt.step(0.05);
    CHECK(loss_value() < before);
  }
  SUBCASE("missing gradient for a trainable parameter is an error") {
    ParamStore store;
    Tensor used = store.add_param("used", {2}, Init::kZeros);
    store.add_param("unused", {2}, Init::kZeros);
    Sgd opt(store, SgdConfig{});
    Graph g;
    {
      Recording rec(g);
      g.backward(reduce_all(used, Reduce::kSum));
    }
    CHECK_THROWS_WITH_AS(opt.step(0.1), doctest::Contains("unused"), Error);
  }
  SUBCASE("config validation") {
    SgdConfig bad;
    bad.lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = SgdConfig{};
    bad.momentum = 1.0;
    CHECK_THROWS_AS(bad.validate(), Error);
  }
}

TEST_CASE("parameter count is invariant under training steps") {
  ParamStore store;
  StudentNet net(store, 1, 8, 8, 3, {4, 8});
  init_params(store, 3);
  Sgd opt(store, SgdConfig{});
  const int64_t count = store.scalar_count();
  Rng rng(4);
  for (int step = 0; step < 3; ++step) {
    Tensor x = randn(rng, {4, 1, 8, 8});
    Graph g;
    Tensor loss;
    {
      Recording rec(g);
      loss = cross_entropy(net.forward(x, true).logits, {0, 1, 2, 0});
      g.backward(loss);
    }
    opt.step(0.01);
    CHECK(store.scalar_count() == count);
  }
}

TEST_CASE("checkpoint round-trip") {
  const std::string path = temp_path("ckpt.hcdp");
  ParamStore store;
  StudentNet net(store, 1, 8, 8, 3, {4, 8});
  init_params(store, 17);
  Rng rng(5);
  Tensor x = randn(rng, {2, 1, 8, 8});

  save_checkpoint(path, store);

  ParamStore loaded_store;
  StudentNet loaded_net(loaded_store, 1, 8, 8, 3, {4, 8});
  load_checkpoint(path, loaded_store);

  // Two independent loads produce bit-identical forward outputs.
  ParamStore loaded_store2;
  StudentNet loaded_net2(loaded_store2, 1, 8, 8, 3, {4, 8});
  load_checkpoint(path, loaded_store2);
  CHECK(loaded_net.forward(x, false).logits.values() ==
        loaded_net2.forward(x, false).logits.values());

  // Values survive the f32 narrowing round-trip byte-exactly.
  const std::string path2 = temp_path("ckpt2.hcdp");
  save_checkpoint(path2, loaded_store);
  CHECK(slurp(path) == slurp(path2));

  SUBCASE("missing tensor is an error") {
    ParamStore bigger;
    StudentNet bigger_net(bigger, 1, 8, 8, 3, {4, 8});
    bigger.add_param("extra", {2}, Init::kZeros);
    CHECK_THROWS_WITH_AS(load_checkpoint(path, bigger), doctest::Contains("extra"), Error);
  }
  SUBCASE("shape mismatch is an error") {
    ParamStore other;
    StudentNet other_net(other, 1, 8, 8, 4, {4, 8});  // K differs
    CHECK_THROWS_AS(load_checkpoint(path, other), Error);
  }
  SUBCASE("bad magic is a format error") {
    const std::string garbage = temp_path("garbage.hcdp");
    std::ofstream out(garbage, std::ios::binary);
    out << "XXXXtrash";
    out.close();
    try {
      load_checkpoint(garbage, store);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kFormat);
    }
  }
}
