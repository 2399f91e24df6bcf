#include "pan/spatial_transform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pan/errors.hpp"

namespace pan {

AffineParams AffineParams::inverse() const {
  const auto& t = theta;
  const double det = t[0] * t[4] - t[1] * t[3];
  if (det == 0.0 || !std::isfinite(det)) throw InvalidArgument("affine map is not invertible");
  const double a = t[4] / det, b = -t[1] / det;
  const double c = -t[3] / det, d = t[0] / det;
  return {{a, b, -(a * t[2] + b * t[5]), c, d, -(c * t[2] + d * t[5])}};
}

bool AffineParams::finite() const {
  return std::all_of(theta.begin(), theta.end(), [](double v) { return std::isfinite(v); });
}

double target_coordinate(std::size_t i, std::size_t n) {
  if (n <= 1) return 0.0;
  return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
}

namespace {

void fill_grid(const double* t, std::size_t out_h, std::size_t out_w, double* coords) {
  for (std::size_t r = 0; r < out_h; ++r) {
    const double yt = target_coordinate(r, out_h);
    for (std::size_t c = 0; c < out_w; ++c) {
      const double xt = target_coordinate(c, out_w);
      coords[2 * (r * out_w + c)] = t[0] * xt + t[1] * yt + t[2];
      coords[2 * (r * out_w + c) + 1] = t[3] * xt + t[4] * yt + t[5];
    }
  }
}

void accumulate_theta_grad(const double* grad_coords, std::size_t out_h, std::size_t out_w,
                           double* dtheta) {
  for (std::size_t r = 0; r < out_h; ++r) {
    const double yt = target_coordinate(r, out_h);
    for (std::size_t c = 0; c < out_w; ++c) {
      const double xt = target_coordinate(c, out_w);
      const double gx = grad_coords[2 * (r * out_w + c)];
      const double gy = grad_coords[2 * (r * out_w + c) + 1];
      dtheta[0] += gx * xt;
      dtheta[1] += gx * yt;
      dtheta[2] += gx;
      dtheta[3] += gy * xt;
      dtheta[4] += gy * yt;
      dtheta[5] += gy;
    }
  }
}

// Neighbour indices and weights of one source coordinate along one axis.
struct AxisTap {
  long lo;
  double w_lo;
  double w_hi;
  bool on_centre;
  double scale;  // d(pixel)/d(normalized)
};

AxisTap axis_tap(double normalized, std::size_t n) {
  const double scale = 0.5 * static_cast<double>(n - 1);
  double p = (normalized + 1.0) * scale;
  // Round-off from the normalized round trip must not move a pixel centre.
  const double nearest = std::round(p);
  if (std::abs(p - nearest) <= 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(p)))
    p = nearest;
  const double lo = std::floor(p);
  const double frac = p - lo;
  return {static_cast<long>(lo), 1.0 - frac, frac, frac == 0.0, scale};
}

struct PlaneGeom {
  std::size_t c, h, w;
  std::size_t points;
};

inline bool inside(long v, std::size_t n) { return v >= 0 && v < static_cast<long>(n); }

void sample_forward(const double* in, const PlaneGeom& g, const double* coords, double* out) {
  const std::size_t area = g.h * g.w;
  for (std::size_t p = 0; p < g.points; ++p) {
    if (!std::isfinite(coords[2 * p]) || !std::isfinite(coords[2 * p + 1])) {
      throw InvalidArgument("bilinear_sample: non-finite grid coordinate");
    }
    const AxisTap tx = axis_tap(coords[2 * p], g.w);
    const AxisTap ty = axis_tap(coords[2 * p + 1], g.h);
    const long xs[2] = {tx.lo, tx.lo + 1};
    const long ys[2] = {ty.lo, ty.lo + 1};
    const double wx[2] = {tx.w_lo, tx.w_hi};
    const double wy[2] = {ty.w_lo, ty.w_hi};
    for (std::size_t ch = 0; ch < g.c; ++ch) {
      const double* plane = in + ch * area;
      double acc = 0.0;
      for (int j = 0; j < 2; ++j) {
        if (!inside(ys[j], g.h) || wy[j] == 0.0) continue;
        for (int i = 0; i < 2; ++i) {
          if (!inside(xs[i], g.w) || wx[i] == 0.0) continue;
          acc += plane[ys[j] * static_cast<long>(g.w) + xs[i]] * wx[i] * wy[j];
        }
      }
      out[ch * g.points + p] = acc;
    }
  }
}

// Either output pointer may be null.
void sample_backward_raw(const double* in, const PlaneGeom& g, const double* coords,
                         const double* up, double* grad_in, double* grad_coords) {
  const std::size_t area = g.h * g.w;
  for (std::size_t p = 0; p < g.points; ++p) {
    const AxisTap tx = axis_tap(coords[2 * p], g.w);
    const AxisTap ty = axis_tap(coords[2 * p + 1], g.h);
    const long xs[2] = {tx.lo, tx.lo + 1};
    const long ys[2] = {ty.lo, ty.lo + 1};
    const double wx[2] = {tx.w_lo, tx.w_hi};
    const double wy[2] = {ty.w_lo, ty.w_hi};
    double gx = 0.0, gy = 0.0;
    for (std::size_t ch = 0; ch < g.c; ++ch) {
      const double u = up[ch * g.points + p];
      if (u == 0.0) continue;
      const double* plane = in + ch * area;
      double v[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
      for (int j = 0; j < 2; ++j) {
        if (!inside(ys[j], g.h)) continue;
        for (int i = 0; i < 2; ++i) {
          if (!inside(xs[i], g.w)) continue;
          const long idx = ys[j] * static_cast<long>(g.w) + xs[i];
          v[j][i] = plane[idx];
          if (grad_in != nullptr) grad_in[ch * area + idx] += u * wx[i] * wy[j];
        }
      }
      if (grad_coords != nullptr) {
        if (!tx.on_centre) gx += u * (wy[0] * (v[0][1] - v[0][0]) + wy[1] * (v[1][1] - v[1][0]));
        if (!ty.on_centre) gy += u * (wx[0] * (v[1][0] - v[0][0]) + wx[1] * (v[1][1] - v[0][1]));
      }
    }
    if (grad_coords != nullptr) {
      grad_coords[2 * p] += gx * tx.scale;
      grad_coords[2 * p + 1] += gy * ty.scale;
    }
  }
}

void check_image(const Tensor& input, const char* op) {
  if (input.rank() != 3) {
    throw InvalidShape(std::string(op) + ": expected [C,H,W], got " + to_string(input.shape()));
  }
}

void check_grid(const SamplingGrid& grid, const char* op) {
  if (grid.out_h == 0 || grid.out_w == 0 || grid.coords.size() != 2 * grid.out_h * grid.out_w) {
    throw InvalidShape(std::string(op) + ": grid of " + std::to_string(grid.coords.size()) +
                       " values does not match " + std::to_string(grid.out_h) + "x" +
                       std::to_string(grid.out_w));
  }
}

}  // namespace

SamplingGrid make_grid(const AffineParams& theta, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw InvalidArgument("make_grid: output dimensions must be >= 1");
  if (!theta.finite()) throw InvalidArgument("make_grid: theta has non-finite entries");
  SamplingGrid grid{out_h, out_w, std::vector<double>(2 * out_h * out_w)};
  fill_grid(theta.theta.data(), out_h, out_w, grid.coords.data());
  return grid;
}

std::array<double, 6> grid_backward(std::span<const double> grad_coords, std::size_t out_h,
                                    std::size_t out_w) {
  if (grad_coords.size() != 2 * out_h * out_w) {
    throw InvalidShape("grid_backward: " + std::to_string(grad_coords.size()) +
                       " gradients for a " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                       " grid");
  }
  std::array<double, 6> out{};
  accumulate_theta_grad(grad_coords.data(), out_h, out_w, out.data());
  return out;
}

Tensor bilinear_sample(const Tensor& input, const SamplingGrid& grid) {
  check_image(input, "bilinear_sample");
  check_grid(grid, "bilinear_sample");
  PlaneGeom g{input.dim(0), input.dim(1), input.dim(2), grid.out_h * grid.out_w};
  Tensor out({g.c, grid.out_h, grid.out_w});
  sample_forward(input.data().data(), g, grid.coords.data(), out.data().data());
  return out;
}

SampleGradients sample_backward(const Tensor& input, const SamplingGrid& grid,
                                const Tensor& upstream) {
  check_image(input, "sample_backward");
  check_grid(grid, "sample_backward");
  if (upstream.shape() != Shape{input.dim(0), grid.out_h, grid.out_w}) {
    throw InvalidShape("sample_backward: upstream " + to_string(upstream.shape()) +
                       " does not match sampler output " +
                       to_string({input.dim(0), grid.out_h, grid.out_w}));
  }
  PlaneGeom g{input.dim(0), input.dim(1), input.dim(2), grid.out_h * grid.out_w};
  SampleGradients out{Tensor(input.shape()), std::vector<double>(grid.coords.size())};
  sample_backward_raw(input.data().data(), g, grid.coords.data(), upstream.data().data(),
                      out.grad_input.data().data(), out.grad_coords.data());
  return out;
}

Tensor apply_affine_to_image(const Tensor& image, const AffineParams& theta, std::size_t out_h,
                             std::size_t out_w) {
  check_image(image, "apply_affine_to_image");
  return bilinear_sample(image, make_grid(theta, out_h, out_w));
}

Var affine_grid(Graph& g, Var theta, std::size_t out_h, std::size_t out_w) {
  const Tensor& t = g.value(theta);
  if (t.rank() != 2 || t.dim(1) != 6) {
    throw InvalidShape("affine_grid: expected theta [N,6], got " + to_string(t.shape()));
  }
  if (out_h == 0 || out_w == 0) throw InvalidArgument("affine_grid: output dimensions must be >= 1");
  const std::size_t n = t.dim(0);
  const std::size_t per = 2 * out_h * out_w;
  Tensor out({n, out_h, out_w, 2});
  for (std::size_t i = 0; i < n; ++i) {
    fill_grid(t.data().data() + 6 * i, out_h, out_w, out.data().data() + per * i);
  }
  return g.record(std::move(out), {theta}, [=](Graph& g, Var self) {
    auto up = g.upstream(self);
    auto dst = g.grad_sink(theta);
    for (std::size_t i = 0; i < n; ++i) {
      accumulate_theta_grad(up.data() + per * i, out_h, out_w, dst.data() + 6 * i);
    }
  });
}

Var grid_sample(Graph& g, Var input, Var grid) {
  const Tensor& x = g.value(input);
  const Tensor& gr = g.value(grid);
  if (x.rank() != 4 || gr.rank() != 4 || gr.dim(3) != 2 || gr.dim(0) != x.dim(0)) {
    throw InvalidShape("grid_sample: input " + to_string(x.shape()) + " incompatible with grid " +
                       to_string(gr.shape()));
  }
  const std::size_t n = x.dim(0);
  PlaneGeom geo{x.dim(1), x.dim(2), x.dim(3), gr.dim(1) * gr.dim(2)};
  const std::size_t in_size = geo.c * geo.h * geo.w;
  const std::size_t out_size = geo.c * geo.points;
  Tensor out({n, geo.c, gr.dim(1), gr.dim(2)});
  for (std::size_t i = 0; i < n; ++i) {
    sample_forward(x.data().data() + i * in_size, geo, gr.data().data() + i * 2 * geo.points,
                   out.data().data() + i * out_size);
  }
  return g.record(std::move(out), {input, grid}, [=](Graph& g, Var self) {
    auto up = g.upstream(self);
    double* din = g.requires_grad(input) ? g.grad_sink(input).data() : nullptr;
    double* dgrid = g.requires_grad(grid) ? g.grad_sink(grid).data() : nullptr;
    const double* xs = g.value(input).data().data();
    const double* coords = g.value(grid).data().data();
    for (std::size_t i = 0; i < n; ++i) {
      sample_backward_raw(xs + i * in_size, geo, coords + i * 2 * geo.points,
                          up.data() + i * out_size, din ? din + i * in_size : nullptr,
                          dgrid ? dgrid + i * 2 * geo.points : nullptr);
    }
  });
}

}  // namespace pan
