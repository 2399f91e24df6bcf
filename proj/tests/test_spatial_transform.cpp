#include "doctest.h"

#include <cmath>

#include "gradcheck.hpp"
#include "sampler_gradcheck.hpp"
#include "pan/errors.hpp"
#include "pan/spatial_transform.hpp"

using namespace pan;
using pan::testing::grid_clear_of_lattice;
using pan::testing::lattice_distance;
using pan::testing::random_tensor;
using pan::testing::random_theta;

namespace {

// Direct evaluation of the bilinear kernel sum over every source pixel.
double brute_force_sample(const Tensor& v, std::size_t c, double xs, double ys) {
  const std::size_t h = v.dim(1), w = v.dim(2);
  const double px = (xs + 1.0) / 2.0 * static_cast<double>(w - 1);
  const double py = (ys + 1.0) / 2.0 * static_cast<double>(h - 1);
  double acc = 0.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      acc += v[(c * h + y) * w + x] * std::max(0.0, 1.0 - std::abs(px - static_cast<double>(x))) *
             std::max(0.0, 1.0 - std::abs(py - static_cast<double>(y)));
    }
  }
  return acc;
}

}  // namespace

TEST_CASE("make_grid examples") {
  auto id = make_grid(AffineParams::identity(), 2, 2);
  CHECK(id.at(0, 0) == std::pair{-1.0, -1.0});
  CHECK(id.at(0, 1) == std::pair{1.0, -1.0});
  CHECK(id.at(1, 0) == std::pair{-1.0, 1.0});
  CHECK(id.at(1, 1) == std::pair{1.0, 1.0});

  AffineParams worked{{0.8, 0.0, -0.1, 0.0, 0.7, 0.0}};
  auto g = make_grid(worked, 5, 7);
  CHECK(std::abs(g.at(0, 0).first - (-0.9)) <= 1e-12);
  CHECK(std::abs(g.at(0, 0).second - (-0.7)) <= 1e-12);

  AffineParams half{{0.5, 0.0, 0.0, 0.0, 0.5, 0.0}};
  auto h = make_grid(half, 3, 3);
  CHECK(h.at(2, 2) == std::pair{0.5, 0.5});

  auto single = make_grid(AffineParams::identity(), 1, 3);
  CHECK(single.at(0, 1) == std::pair{0.0, 0.0});

  CHECK_THROWS_AS(make_grid(AffineParams::identity(), 0, 3), InvalidArgument);
}

TEST_CASE("make_grid is exactly theta times homogeneous target") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    AffineParams t;
    for (double& v : t.theta) v = uniform(rng, -3.0, 3.0);
    auto grid = make_grid(t, 4, 6);
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 6; ++c) {
        const double xt = target_coordinate(c, 6), yt = target_coordinate(r, 4);
        CHECK(grid.at(r, c).first == t.theta[0] * xt + t.theta[1] * yt + t.theta[2]);
        CHECK(grid.at(r, c).second == t.theta[3] * xt + t.theta[4] * yt + t.theta[5]);
      }
    }
  }
}

TEST_CASE("identity sampling reproduces the input exactly") {
  Rng rng(1);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{5, 7}, {1, 4}, {8, 1}, {6, 6}}) {
    Tensor v = random_tensor({3, h, w}, rng);
    CHECK(bilinear_sample(v, make_grid(AffineParams::identity(), h, w)).values() == v.values());
    CHECK(apply_affine_to_image(v, AffineParams::identity(), h, w).values() == v.values());
  }
}

TEST_CASE("out-of-range grid samples zeros") {
  Rng rng(2);
  Tensor v = random_tensor({2, 5, 5}, rng);
  AffineParams far{{0.1, 0.0, 3.0, 0.0, 0.1, -3.0}};
  Tensor out = bilinear_sample(v, make_grid(far, 4, 4));
  for (double x : out.data()) CHECK(x == 0.0);
}

TEST_CASE("centre of four pixels averages them") {
  Tensor v({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  SamplingGrid g{1, 1, {0.0, 0.0}};
  CHECK(bilinear_sample(v, g)[0] == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(brute_force_sample(v, 0, 0.0, 0.0) == doctest::Approx(2.5));
}

TEST_CASE("sampler agrees with the brute-force kernel sum") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor v = random_tensor({2, 6, 5}, rng);
    AffineParams t;
    for (double& x : t.theta) x = uniform(rng, -1.5, 1.5);
    auto grid = make_grid(t, 4, 3);
    Tensor out = bilinear_sample(v, grid);
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t col = 0; col < 3; ++col) {
          auto [xs, ys] = grid.at(r, col);
          CHECK(out[(c * 4 + r) * 3 + col] == doctest::Approx(brute_force_sample(v, c, xs, ys)).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("sampler is linear in the input") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_tensor({2, 5, 6}, rng), b = random_tensor({2, 5, 6}, rng);
    const double ca = uniform(rng, -2.0, 2.0), cb = uniform(rng, -2.0, 2.0);
    Tensor mix(a.shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = ca * a[i] + cb * b[i];
    auto grid = make_grid(random_theta(rng), 4, 4);
    Tensor sm = bilinear_sample(mix, grid), sa = bilinear_sample(a, grid), sb = bilinear_sample(b, grid);
    for (std::size_t i = 0; i < sm.size(); ++i) CHECK(std::abs(sm[i] - (ca * sa[i] + cb * sb[i])) <= 1e-12);
  }
}

TEST_CASE("pixels with zero bilinear weight never affect the output") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor v = random_tensor({1, 6, 6}, rng);
    auto grid = make_grid(random_theta(rng), 3, 3);
    Tensor base = bilinear_sample(v, grid);
    // Pixel weight is max(0,1-|px-x|)max(0,1-|py-y|); perturb every pixel whose weight is zero for all targets.
    for (std::size_t y = 0; y < 6; ++y) {
      for (std::size_t x = 0; x < 6; ++x) {
        bool used = false;
        for (std::size_t i = 0; i < grid.coords.size(); i += 2) {
          const double px = (grid.coords[i] + 1.0) / 2.0 * 5.0, py = (grid.coords[i + 1] + 1.0) / 2.0 * 5.0;
          if (std::abs(px - x) < 1.0 && std::abs(py - y) < 1.0) used = true;
        }
        if (used) continue;
        Tensor w = v;
        w[y * 6 + x] += 100.0;
        CHECK(bilinear_sample(w, grid).values() == base.values());
      }
    }
  }
}

TEST_CASE("sample_backward simple cases") {
  Rng rng(6);
  Tensor v = random_tensor({2, 4, 5}, rng);
  auto grid = make_grid(AffineParams::identity(), 4, 5);
  Tensor up = random_tensor({2, 4, 5}, rng);
  auto grads = sample_backward(v, grid, up);
  CHECK(grads.grad_input.values() == up.values());

  auto zero = sample_backward(v, make_grid(random_theta(rng), 3, 3), Tensor({2, 3, 3}));
  for (double d : zero.grad_input.data()) CHECK(d == 0.0);
  for (double d : zero.grad_coords) CHECK(d == 0.0);

  CHECK_THROWS_AS(sample_backward(v, grid, Tensor({2, 3, 3})), InvalidShape);
  CHECK_THROWS_AS(bilinear_sample(Tensor({2, 3}), grid), InvalidShape);
}

TEST_CASE("coordinate gradient is zero exactly on pixel centres") {
  Tensor v({1, 3, 3}, {0, 1, 2, 3, 4, 5, 6, 7, 8});
  SamplingGrid g{1, 1, {0.0, 0.0}};  // centre pixel (1,1)
  auto grads = sample_backward(v, g, Tensor({1, 1, 1}, 1.0));
  CHECK(grads.grad_coords[0] == 0.0);
  CHECK(grads.grad_coords[1] == 0.0);
  SamplingGrid off{1, 1, {0.25, 0.0}};  // px = 1.25, py = 1 exactly
  auto g2 = sample_backward(v, off, Tensor({1, 1, 1}, 1.0));
  CHECK(g2.grad_coords[0] == doctest::Approx(1.0 * 1.0));  // (V(1,2)-V(1,1)) * dpx/dx = 1 * 1
  CHECK(g2.grad_coords[1] == 0.0);
}

TEST_CASE("sampler and grid gradients match finite differences over 50 seeds") {
  const auto suite = pan::testing::run_sampler_gradcheck(50);
  CHECK(suite.seeds == 50);
  CHECK(suite.worst_sampler < 1e-6);
  CHECK(suite.worst_grid < 1e-6);
}

TEST_CASE("pure sample_backward agrees with the graph op") {
  Rng rng(12);
  Tensor v = random_tensor({3, 5, 4}, rng);
  AffineParams t = random_theta(rng);
  Tensor up = random_tensor({3, 3, 3}, rng);
  auto pure = sample_backward(v, make_grid(t, 3, 3), up);
  auto dtheta = grid_backward(pure.grad_coords, 3, 3);

  Graph g;
  Var input = g.variable(v.reshaped({1, 3, 5, 4}));
  Var theta = g.variable(Tensor({1, 6}, std::vector<double>(t.theta.begin(), t.theta.end())));
  Var out = grid_sample(g, input, affine_grid(g, theta, 3, 3));
  g.backward(sum(g, mul(g, out, g.constant(up.reshaped({1, 3, 3, 3})))));
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(g.grad(input)[i] == doctest::Approx(pure.grad_input[i]));
  for (std::size_t i = 0; i < 6; ++i) CHECK(g.grad(theta)[i] == doctest::Approx(dtheta[i]));
}

TEST_CASE("apply_affine_to_image zoom semantics") {
  // 9x9 image with a bright 3x3 square in the middle.
  Tensor img({1, 9, 9}, 0.0);
  for (std::size_t y = 3; y < 6; ++y)
    for (std::size_t x = 3; x < 6; ++x) img[y * 9 + x] = 1.0;

  // theta = 0.5 I: output corners sample the central half of the source.
  Tensor zoom = apply_affine_to_image(img, {{0.5, 0, 0, 0, 0.5, 0}}, 9, 9);
  auto count_bright = [](const Tensor& t) {
    std::size_t n = 0;
    for (double v : t.data()) n += v > 0.5;
    return n;
  };
  CHECK(count_bright(zoom) > count_bright(img));
  // Output (0,0) -> source (-0.5,-0.5) -> pixel (2,2), which is background.
  CHECK(zoom[0] == doctest::Approx(0.0));
  // Output pixel 2 -> normalized -0.5 -> source -0.25 -> pixel 3: inside the square.
  CHECK(zoom[2 * 9 + 2] == doctest::Approx(1.0));

  // theta = 1.5 I on a constant image: the border ring maps outside [-1,1].
  Tensor ones({1, 9, 9}, 1.0);
  Tensor out = apply_affine_to_image(ones, {{1.5, 0, 0, 0, 1.5, 0}}, 9, 9);
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(out[i] == 0.0);            // top row
    CHECK(out[8 * 9 + i] == 0.0);    // bottom row
    CHECK(out[i * 9] == 0.0);        // left column
    CHECK(out[i * 9 + 8] == 0.0);    // right column
  }
  CHECK(out[4 * 9 + 4] == 1.0);
}

TEST_CASE("affine inverse") {
  AffineParams t{{0.7, 0.1, 0.2, -0.05, 1.3, -0.1}};
  AffineParams inv = t.inverse();
  auto [x, y] = t.apply(0.3, -0.4);
  auto [bx, by] = inv.apply(x, y);
  CHECK(bx == doctest::Approx(0.3));
  CHECK(by == doctest::Approx(-0.4));
  CHECK_THROWS_AS(AffineParams({{1, 2, 0, 2, 4, 0}}).inverse(), InvalidArgument);
}
