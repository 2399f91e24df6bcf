#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "pan/checkpoint.hpp"
#include "pan/errors.hpp"
#include "pan/layers.hpp"
#include "pan/optim.hpp"

using namespace pan;
using pan::testing::check_gradients;
using pan::testing::random_tensor;
using pan::testing::weighted_sum;

TEST_CASE("tensor rejects inconsistent shapes") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), InvalidShape);
  CHECK_THROWS_AS(Tensor({2, 0}), InvalidShape);
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK_FALSE(t.has_grad());
  CHECK(t.grad().size() == 6);
  CHECK_THROWS_AS(t.item(), InvalidShape);
}

TEST_CASE("conv2d forward examples") {
  Graph g;
  Var x = g.constant(Tensor({1, 1, 3, 3}, 1.0));
  Var w = g.constant(Tensor({1, 1, 3, 3}, 1.0));
  const Tensor& out = g.value(conv2d(g, x, w, 1, 0));
  CHECK(out.shape() == Shape{1, 1, 1, 1});
  CHECK(out.item() == 9.0);

  Rng rng(3);
  Tensor in = random_tensor({2, 1, 4, 5}, rng);
  Var id = conv2d(g, g.constant(in), g.constant(Tensor({1, 1, 1, 1}, 1.0)), 1, 0);
  CHECK(g.value(id).values() == in.values());
}

TEST_CASE("conv2d output size follows floor((H + 2p - k)/s) + 1") {
  Graph g;
  Var x = g.constant(Tensor({1, 2, 7, 6}));
  Var w = g.constant(Tensor({3, 2, 3, 3}));
  CHECK(g.value(conv2d(g, x, w, 2, 1)).shape() == Shape{1, 3, 4, 3});
  CHECK(g.value(conv2d(g, x, w, 1, 0)).shape() == Shape{1, 3, 5, 4});
}

TEST_CASE("conv2d shape mismatch names both shapes") {
  Graph g;
  Var x = g.constant(Tensor({1, 2, 5, 5}));
  Var w = g.constant(Tensor({1, 3, 3, 3}));
  try {
    conv2d(g, x, w, 1, 0);
    FAIL("expected InvalidShape");
  } catch (const InvalidShape& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1,2,5,5]") != std::string::npos);
    CHECK(msg.find("[1,3,3,3]") != std::string::npos);
  }
}

TEST_CASE("conv2d gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto res = check_gradients(
        [seed](Graph& g, const std::vector<Var>& v) {
          return weighted_sum(g, conv2d(g, v[0], v[1], v[2], 1, 1), seed + 100);
        },
        {random_tensor({1, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng),
         random_tensor({3}, rng)});
    CHECK(res.max_rel_error < 1e-6);
  }
  Rng rng(9);
  auto strided = check_gradients(
      [](Graph& g, const std::vector<Var>& v) {
        return weighted_sum(g, conv2d(g, v[0], v[1], 2, 1), 7);
      },
      {random_tensor({2, 2, 6, 5}, rng), random_tensor({2, 2, 3, 3}, rng)});
  CHECK(strided.max_rel_error < 1e-6);
}

TEST_CASE("relu, pooling and fully connected") {
  Graph g;
  Var r = relu(g, g.constant(Tensor({3}, {-2.0, 0.0, 3.0})));
  CHECK(g.value(r).values() == std::vector<double>{0.0, 0.0, 3.0});

  Var c = global_avg_pool(g, g.constant(Tensor({2, 3, 4, 5}, 0.37)));
  CHECK(g.value(c).shape() == Shape{2, 3});
  for (double v : g.value(c).data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-15));

  Var p = max_pool2d(g, g.constant(Tensor({1, 1, 3, 5}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15})), 2);
  CHECK(g.value(p).shape() == Shape{1, 1, 2, 3});
  CHECK(g.value(p).values() == std::vector<double>{7, 9, 10, 12, 14, 15});

  Rng rng(4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto fc = check_gradients(
        [seed](Graph& g, const std::vector<Var>& v) {
          return weighted_sum(g, fully_connected(g, v[0], v[1], v[2]), seed);
        },
        {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5}, rng)});
    CHECK(fc.max_rel_error < 1e-6);
  }
  auto pool = check_gradients(
      [](Graph& g, const std::vector<Var>& v) {
        return weighted_sum(g, global_avg_pool(g, max_pool2d(g, relu(g, v[0]), 2)), 5);
      },
      {random_tensor({2, 2, 5, 4}, rng)});
  CHECK(pool.max_rel_error < 1e-6);
  CHECK_THROWS_AS(fully_connected(g, g.constant(Tensor({2, 3})), g.constant(Tensor({4, 2})), Var{}),
                  InvalidShape);
}

TEST_CASE("softmax cross-entropy values") {
  Graph g;
  std::vector<int> label0{0};
  Var uniform_loss = softmax_cross_entropy(g, g.constant(Tensor({751}, 0.25)), label0);
  CHECK(g.value(uniform_loss).item() == doctest::Approx(std::log(751.0)).epsilon(1e-12));
  CHECK(g.value(uniform_loss).item() == doctest::Approx(6.6214).epsilon(1e-4));

  Var confident = softmax_cross_entropy(g, g.constant(Tensor({2}, {10.0, -10.0})), label0);
  CHECK(g.value(confident).item() == doctest::Approx(2.06e-9).epsilon(1e-2));

  std::vector<int> label2{2};
  Var hand = softmax_cross_entropy(g, g.constant(Tensor({3}, {1.0, 2.0, 3.0})), label2);
  const double expected = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  CHECK(g.value(hand).item() == doctest::Approx(expected).epsilon(1e-14));
  CHECK(expected == doctest::Approx(0.40761).epsilon(1e-5));
}

TEST_CASE("softmax cross-entropy gradient is p - onehot") {
  Graph g;
  Var z = g.variable(Tensor({3}, {1.0, 2.0, 3.0}));
  std::vector<int> label{1};
  g.backward(softmax_cross_entropy(g, z, label));
  const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(g.grad(z)[0] == doctest::Approx(std::exp(1.0) / denom));
  CHECK(g.grad(z)[1] == doctest::Approx(std::exp(2.0) / denom - 1.0));
  CHECK(g.grad(z)[2] == doctest::Approx(std::exp(3.0) / denom));
}

TEST_CASE("softmax cross-entropy rejects bad labels") {
  Graph g;
  Var z = g.constant(Tensor({2, 3}));
  std::vector<int> bad{0, 3};
  CHECK_THROWS_AS(softmax_cross_entropy(g, z, bad), InvalidLabel);
  std::vector<int> negative{-1, 0};
  CHECK_THROWS_AS(softmax_cross_entropy(g, z, negative), InvalidLabel);
  std::vector<int> one{0};
  CHECK_THROWS_AS(softmax_cross_entropy(g, g.constant(Tensor({1}, 0.0)), one), InvalidArgument);
}

TEST_CASE("backward basics") {
  Rng rng(1);
  Tensor x = random_tensor({2, 3}, rng);
  {
    Graph g;
    Var v = g.variable(x);
    g.backward(sum(g, v));
    for (double d : g.grad(v)) CHECK(d == 1.0);
  }
  {
    Graph g;
    Var v = g.variable(Tensor({2}, {1.0, 2.0}));
    g.backward(sum(g, mul(g, v, v)));
    CHECK(g.grad(v)[0] == 2.0);
    CHECK(g.grad(v)[1] == 4.0);
  }
  {
    Graph g;
    Var v = g.variable(x);
    CHECK_THROWS_AS(g.backward(v), InvalidArgument);
  }
}

TEST_CASE("parameter gradients accumulate across backward calls") {
  Tensor p({2}, {1.0, -3.0});
  Graph g;
  Var v = g.parameter(p);
  Var loss = sum(g, mul(g, v, v));
  g.backward(loss);
  CHECK(p.grad()[0] == 2.0);
  g.backward(loss);
  CHECK(p.grad()[0] == 4.0);
  CHECK(p.grad()[1] == -12.0);
  p.zero_grad();
  CHECK(p.grad()[1] == 0.0);
}

TEST_CASE("backward visits each recorded op once") {
  Graph g;
  Var x = g.variable(Tensor({3}, 1.0));
  Var y = mul(g, x, x);        // op 1
  Var z = add(g, y, x);        // op 2
  Var w = scale(g, z, 2.0);    // op 3
  Var loss = sum(g, add(g, w, y));  // ops 4, 5
  g.backward(loss);
  CHECK(g.backward_visits() == 5);
  for (double d : g.grad(x)) CHECK(d == doctest::Approx(2.0 * 3.0 + 2.0));
}

TEST_CASE("gradients are linear in the loss") {
  Rng rng(11);
  Tensor wa = random_tensor({4}, rng), wb = random_tensor({4}, rng);
  Tensor xs = random_tensor({4}, rng);
  auto grads = [&](bool first, bool second) {
    Tensor p = xs;
    Graph g;
    Var x = g.parameter(p);
    Var l1 = sum(g, mul(g, mul(g, x, x), g.constant(wa)));
    Var l2 = sum(g, mul(g, relu(g, x), g.constant(wb)));
    if (first && second) g.backward(add(g, l1, l2));
    else g.backward(first ? l1 : l2);
    return std::vector<double>(p.grad().begin(), p.grad().end());
  };
  auto both = grads(true, true), a = grads(true, false), b = grads(false, true);
  for (std::size_t i = 0; i < both.size(); ++i) CHECK(both[i] == doctest::Approx(a[i] + b[i]).epsilon(1e-14));
}

TEST_CASE("forward is bit-deterministic") {
  Rng rng(5);
  Tensor x = random_tensor({2, 3, 8, 8}, rng), w = random_tensor({4, 3, 3, 3}, rng);
  auto run = [&] {
    Graph g;
    return g.value(global_avg_pool(g, relu(g, conv2d(g, g.constant(x), g.constant(w), 1, 1)))).values();
  };
  CHECK(run() == run());
}

TEST_CASE("composite network gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed + 40);
    std::vector<int> labels{1, 0};
    auto res = check_gradients(
        [&](Graph& g, const std::vector<Var>& v) {
          Var h = max_pool2d(g, relu(g, conv2d(g, v[0], v[1], v[2], 1, 1)), 2);
          Var logits = fully_connected(g, global_avg_pool(g, h), v[3], v[4]);
          return softmax_cross_entropy(g, logits, labels);
        },
        {random_tensor({2, 2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng),
         random_tensor({3, 3}, rng), random_tensor({3}, rng)});
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("sgd update rule") {
  {
    Sgd opt(0.0, false);
    std::vector<double> p{0.0};
    std::vector<double> grad{1.0};
    opt.step(p, grad, 0.1);
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-15));
  }
  {
    // v1 = 1, p1 = -0.1 * (1 + 0.9 * 1) = -0.19
    // v2 = 0.9 * 1 + 1 = 1.9, p2 = p1 - 0.1 * (1 + 0.9 * 1.9) = -0.461
    Sgd opt(0.9, true);
    std::vector<double> p{0.0};
    std::vector<double> grad{1.0};
    opt.step(p, grad, 0.1);
    CHECK(p[0] == doctest::Approx(-0.19).epsilon(1e-14));
    opt.step(p, grad, 0.1);
    CHECK(p[0] == doctest::Approx(-0.461).epsilon(1e-14));
  }
  {
    Sgd opt(0.9, true);
    Tensor p({3}, {0.5, -1.0, 2.0});
    p.grad();
    const auto before = p.values();
    opt.step(p, 0.1);
    CHECK(p.values() == before);
  }
  CHECK_THROWS_AS(Sgd(1.0, true), InvalidArgument);
  Sgd opt;
  std::vector<double> p{0.0};
  std::vector<double> grad{1.0};
  CHECK_THROWS_AS(opt.step(p, grad, -1.0), InvalidArgument);
}

TEST_CASE("checkpoint round trip and layout") {
  Rng rng(2);
  std::vector<NamedTensor> tensors{{"a.weight", random_tensor({2, 3}, rng)},
                                   {"b", Tensor::scalar(4.5)}};
  const std::string bytes = encode_checkpoint(tensors);
  CHECK(bytes.substr(0, 4) == "PANW");
  // header 12 bytes; "a.weight": 2 + 8 + 1 + 8 + 48; "b": 2 + 1 + 1 + 4 + 8
  CHECK(bytes.size() == 12 + 67 + 16);
  auto back = decode_checkpoint(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "a.weight");
  CHECK(back[0].tensor.shape() == Shape{2, 3});
  CHECK(back[0].tensor.values() == tensors[0].tensor.values());
  CHECK(back[1].tensor.item() == 4.5);

  CHECK_THROWS_AS(decode_checkpoint("PANX" + bytes.substr(4)), DataError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);

  const auto path = std::filesystem::temp_directory_path() / "pan_test_ckpt.panw";
  save_checkpoint(path, tensors);
  CHECK(load_checkpoint(path)[0].tensor.values() == tensors[0].tensor.values());
  std::filesystem::remove(path);
}
