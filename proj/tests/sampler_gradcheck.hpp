#pragma once

// Finite-difference checks of the affine grid generator and bilinear sampler on
// random thetas, skipping draws that land within `margin` pixels of a pixel centre.

#include <algorithm>
#include <cmath>

#include "gradcheck.hpp"
#include "pan/spatial_transform.hpp"

namespace pan::testing {

// Distance of a normalized coordinate's pixel position to the nearest pixel centre.
inline double lattice_distance(double normalized, std::size_t n) {
  const double p = (normalized + 1.0) / 2.0 * static_cast<double>(n - 1);
  return std::abs(p - std::round(p));
}

inline AffineParams random_theta(Rng& rng) {
  AffineParams t;
  for (double& v : t.theta) v = uniform(rng, -1.0, 1.0);
  return t;
}

inline bool grid_clear_of_lattice(const SamplingGrid& grid, std::size_t h, std::size_t w, double margin) {
  for (std::size_t i = 0; i < grid.coords.size(); i += 2) {
    if (lattice_distance(grid.coords[i], w) < margin) return false;
    if (lattice_distance(grid.coords[i + 1], h) < margin) return false;
  }
  return true;
}

struct SamplerGradSuite {
  double worst_sampler = 0.0;
  double worst_grid = 0.0;
  int seeds = 0;
};

inline SamplerGradSuite run_sampler_gradcheck(int seeds, double margin = 0.01) {
  SamplerGradSuite out;
  for (std::uint64_t seed = 0; out.seeds < seeds; ++seed) {
    Rng rng(seed);
    Tensor v = random_tensor({2, 6, 6}, rng);
    AffineParams t = random_theta(rng);
    if (!grid_clear_of_lattice(make_grid(t, 6, 6), 6, 6, margin)) continue;
    ++out.seeds;
    Tensor theta({1, 6}, std::vector<double>(t.theta.begin(), t.theta.end()));
    auto sampler = check_gradients(
        [seed](Graph& g, const std::vector<Var>& in) {
          Var input = reshape(g, in[0], {1, 2, 6, 6});
          Var grid = affine_grid(g, in[1], 6, 6);
          return weighted_sum(g, grid_sample(g, input, grid), seed + 1000);
        },
        {v, theta});
    out.worst_sampler = std::max(out.worst_sampler, sampler.max_rel_error);
    auto grid = check_gradients(
        [seed](Graph& g, const std::vector<Var>& in) { return weighted_sum(g, affine_grid(g, in[0], 3, 4), seed + 7); },
        {theta});
    out.worst_grid = std::max(out.worst_grid, grid.max_rel_error);
  }
  return out;
}

}  // namespace pan::testing
