#pragma once

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "pan/autodiff.hpp"
#include "pan/tensor.hpp"

namespace pan {

/// 2x3 affine map from target to source coordinates in normalized space,
/// stored row-major as (t11, t12, t13, t21, t22, t23).
///
/// Normalized coordinates run from (-1,-1) at the top-left pixel centre to
/// (1,1) at the bottom-right pixel centre; x is the column axis.
struct AffineParams {
  std::array<double, 6> theta{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};

  static AffineParams identity() { return {}; }
  static AffineParams scale_offset(double sx, double sy, double tx, double ty) {
    return {{sx, 0.0, tx, 0.0, sy, ty}};
  }

  // Source coordinate for a target coordinate.
  std::pair<double, double> apply(double xt, double yt) const {
    return {theta[0] * xt + theta[1] * yt + theta[2], theta[3] * xt + theta[4] * yt + theta[5]};
  }

  // Throws InvalidArgument when the linear part is singular.
  AffineParams inverse() const;
  bool finite() const;

  bool operator==(const AffineParams&) const = default;
};

// Evenly spaced target coordinate of index i on an axis of n pixels; a
// single-pixel axis maps to 0.
double target_coordinate(std::size_t i, std::size_t n);

struct SamplingGrid {
  std::size_t out_h = 0;
  std::size_t out_w = 0;
  // (x_s, y_s) per target pixel, row-major over (out_h, out_w).
  std::vector<double> coords;

  std::pair<double, double> at(std::size_t row, std::size_t col) const {
    const auto i = 2 * (row * out_w + col);
    return {coords[i], coords[i + 1]};
  }
};

SamplingGrid make_grid(const AffineParams& theta, std::size_t out_h, std::size_t out_w);

// d(loss)/d(theta) given d(loss)/d(coords) of a grid of the given size.
std::array<double, 6> grid_backward(std::span<const double> grad_coords, std::size_t out_h,
                                    std::size_t out_w);

/// Bilinear sampling of input [C,H,W] at the grid's source coordinates:
///   U[c,m,n] = sum_{y,x} V[c,y,x] * max(0, 1-|px - x|) * max(0, 1-|py - y|)
/// with px = (x_s+1)/2*(W-1), py = (y_s+1)/2*(H-1). Pixels outside the
/// source contribute zero.
Tensor bilinear_sample(const Tensor& input, const SamplingGrid& grid);

struct SampleGradients {
  Tensor grad_input;                // [C,H,W]
  std::vector<double> grad_coords;  // same layout as SamplingGrid::coords
};

// Gradients of bilinear_sample. The derivative of |t| at t = 0 is taken as 0,
// so a coordinate lying exactly on a pixel centre gets zero gradient along
// that axis.
SampleGradients sample_backward(const Tensor& input, const SamplingGrid& grid,
                                const Tensor& upstream);

// make_grid + bilinear_sample without recording gradients.
Tensor apply_affine_to_image(const Tensor& image, const AffineParams& theta, std::size_t out_h,
                             std::size_t out_w);

// Graph ops. theta is [N,6]; grid is [N,out_h,out_w,2]; input is [N,C,H,W].
Var affine_grid(Graph& g, Var theta, std::size_t out_h, std::size_t out_w);
Var grid_sample(Graph& g, Var input, Var grid);

}  // namespace pan
