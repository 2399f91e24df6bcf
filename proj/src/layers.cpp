#include "pan/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "pan/errors.hpp"

namespace pan {
namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

struct ConvGeom {
  std::size_t n, c, h, w;
  std::size_t co, kh, kw;
  std::size_t ho, wo;
  int stride, pad;

  std::size_t patch() const { return c * kh * kw; }
  std::size_t out_plane() const { return ho * wo; }
};

void im2col(const double* img, const ConvGeom& g, double* col) {
  const auto plane = g.out_plane();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((ch * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = img + (ch * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeom& g, double* img) {
  const auto plane = g.out_plane();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((ch * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = img + (ch * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Graph& g, Var input, Var weight, Var bias, int stride, int padding) {
  const Tensor& x = g.value(input);
  const Tensor& w = g.value(weight);
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != x.dim(1)) {
    throw InvalidShape("conv2d: input " + to_string(x.shape()) + " incompatible with weight " +
                       to_string(w.shape()));
  }
  if (stride < 1 || padding < 0) {
    throw InvalidArgument("conv2d: stride must be >= 1 and padding >= 0");
  }
  ConvGeom geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0,
               stride, padding};
  const long span_h = static_cast<long>(geo.h) + 2 * padding - static_cast<long>(geo.kh);
  const long span_w = static_cast<long>(geo.w) + 2 * padding - static_cast<long>(geo.kw);
  if (span_h < 0 || span_w < 0) {
    throw InvalidShape("conv2d: kernel " + to_string(w.shape()) + " larger than padded input " +
                       to_string(x.shape()));
  }
  geo.ho = static_cast<std::size_t>(span_h / stride) + 1;
  geo.wo = static_cast<std::size_t>(span_w / stride) + 1;
  if (bias.valid()) {
    const Tensor& b = g.value(bias);
    if (b.size() != geo.co) {
      throw InvalidShape("conv2d: bias " + to_string(b.shape()) + " does not match weight " +
                         to_string(w.shape()));
    }
  }

  Tensor out({geo.n, geo.co, geo.ho, geo.wo});
  std::vector<double> col(geo.patch() * geo.out_plane());
  CMapR wm(w.data().data(), geo.co, geo.patch());
  CMapR cm(col.data(), geo.patch(), geo.out_plane());
  for (std::size_t n = 0; n < geo.n; ++n) {
    im2col(x.data().data() + n * geo.c * geo.h * geo.w, geo, col.data());
    MapR om(out.data().data() + n * geo.co * geo.out_plane(), geo.co, geo.out_plane());
    om.noalias() = wm * cm;
    if (bias.valid()) {
      const auto b = g.value(bias).data();
      for (std::size_t o = 0; o < geo.co; ++o) om.row(o).array() += b[o];
    }
  }

  return g.record(std::move(out), {input, weight, bias}, [=](Graph& g, Var self) {
    auto up = g.upstream(self);
    const Tensor& x = g.value(input);
    const Tensor& w = g.value(weight);
    const bool need_x = g.requires_grad(input);
    const bool need_w = g.requires_grad(weight);
    const bool need_b = bias.valid() && g.requires_grad(bias);
    std::vector<double> col(geo.patch() * geo.out_plane());
    MapR cm(col.data(), geo.patch(), geo.out_plane());
    CMapR wm(w.data().data(), geo.co, geo.patch());
    const auto in_size = geo.c * geo.h * geo.w;
    for (std::size_t n = 0; n < geo.n; ++n) {
      CMapR dout(up.data() + n * geo.co * geo.out_plane(), geo.co, geo.out_plane());
      if (need_w) {
        im2col(x.data().data() + n * in_size, geo, col.data());
        MapR dw(g.grad_sink(weight).data(), geo.co, geo.patch());
        dw.noalias() += dout * cm.transpose();
      }
      if (need_b) {
        auto db = g.grad_sink(bias);
        // Fixed summation order, independent of buffer alignment.
        const double* d = up.data() + n * geo.co * geo.out_plane();
        for (std::size_t o = 0; o < geo.co; ++o) {
          double acc = 0.0;
          for (std::size_t i = 0; i < geo.out_plane(); ++i) acc += d[o * geo.out_plane() + i];
          db[o] += acc;
        }
      }
      if (need_x) {
        cm.noalias() = wm.transpose() * dout;
        col2im_add(col.data(), geo, g.grad_sink(input).data() + n * in_size);
      }
    }
  });
}

Var conv2d(Graph& g, Var input, Var weight, int stride, int padding) {
  return conv2d(g, input, weight, Var{}, stride, padding);
}

Var relu(Graph& g, Var input) {
  const Tensor& x = g.value(input);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return g.record(std::move(out), {input}, [input](Graph& g, Var self) {
    auto up = g.upstream(self);
    auto x = g.value(input).data();
    auto dst = g.grad_sink(input);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (x[i] > 0.0) dst[i] += up[i];
    }
  });
}

Var max_pool2d(Graph& g, Var input, int size) {
  const Tensor& x = g.value(input);
  if (x.rank() != 4) throw InvalidShape("max_pool2d: expected [N,C,H,W], got " + to_string(x.shape()));
  if (size < 1) throw InvalidArgument("max_pool2d: window size must be >= 1");
  const std::size_t k = static_cast<std::size_t>(size);
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(2), w = x.dim(3);
  const std::size_t ho = (h + k - 1) / k, wo = (w + k - 1) / k;
  Tensor out({x.dim(0), x.dim(1), ho, wo});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.data().data() + p * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (oy * k) * w + ox * k;
        for (std::size_t iy = oy * k; iy < std::min(h, oy * k + k); ++iy) {
          for (std::size_t ix = ox * k; ix < std::min(w, ox * k + k); ++ix) {
            if (src[iy * w + ix] > src[best]) best = iy * w + ix;
          }
        }
        const std::size_t o = (p * ho + oy) * wo + ox;
        out[o] = src[best];
        argmax[o] = p * h * w + best;
      }
    }
  }
  return g.record(std::move(out), {input}, [input, argmax = std::move(argmax)](Graph& g, Var self) {
    auto up = g.upstream(self);
    auto dst = g.grad_sink(input);
    for (std::size_t o = 0; o < up.size(); ++o) dst[argmax[o]] += up[o];
  });
}

Var global_avg_pool(Graph& g, Var input) {
  const Tensor& x = g.value(input);
  if (x.rank() != 4) {
    throw InvalidShape("global_avg_pool: expected [N,C,H,W], got " + to_string(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t area = x.dim(2) * x.dim(3);
  Tensor out({x.dim(0), x.dim(1)});
  for (std::size_t p = 0; p < planes; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < area; ++i) s += x[p * area + i];
    out[p] = s / static_cast<double>(area);
  }
  return g.record(std::move(out), {input}, [input, area](Graph& g, Var self) {
    auto up = g.upstream(self);
    auto dst = g.grad_sink(input);
    const double inv = 1.0 / static_cast<double>(area);
    for (std::size_t p = 0; p < up.size(); ++p) {
      for (std::size_t i = 0; i < area; ++i) dst[p * area + i] += up[p] * inv;
    }
  });
}

Var fully_connected(Graph& g, Var input, Var weight, Var bias) {
  const Tensor& x = g.value(input);
  const Tensor& w = g.value(weight);
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
    throw InvalidShape("fully_connected: input " + to_string(x.shape()) +
                       " incompatible with weight " + to_string(w.shape()));
  }
  const std::size_t n = x.dim(0), d = x.dim(1), k = w.dim(0);
  if (bias.valid() && g.value(bias).size() != k) {
    throw InvalidShape("fully_connected: bias " + to_string(g.value(bias).shape()) +
                       " does not match weight " + to_string(w.shape()));
  }
  Tensor out({n, k});
  MapR om(out.data().data(), n, k);
  om.noalias() = CMapR(x.data().data(), n, d) * CMapR(w.data().data(), k, d).transpose();
  if (bias.valid()) {
    const auto b = g.value(bias).data();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < k; ++c) om(r, c) += b[c];
    }
  }
  return g.record(std::move(out), {input, weight, bias}, [=](Graph& g, Var self) {
    CMapR dout(g.upstream(self).data(), n, k);
    if (g.requires_grad(input)) {
      MapR dx(g.grad_sink(input).data(), n, d);
      dx.noalias() += dout * CMapR(g.value(weight).data().data(), k, d);
    }
    if (g.requires_grad(weight)) {
      MapR dw(g.grad_sink(weight).data(), k, d);
      dw.noalias() += dout.transpose() * CMapR(g.value(input).data().data(), n, d);
    }
    if (bias.valid() && g.requires_grad(bias)) {
      auto db = g.grad_sink(bias);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < k; ++c) db[c] += dout(r, c);
      }
    }
  });
}

Var softmax_cross_entropy(Graph& g, Var logits, std::span<const int> labels) {
  const Tensor& z = g.value(logits);
  if (z.rank() != 1 && z.rank() != 2) {
    throw InvalidShape("softmax_cross_entropy: expected [N,K] or [K], got " + to_string(z.shape()));
  }
  const std::size_t n = z.rank() == 2 ? z.dim(0) : 1;
  const std::size_t k = z.rank() == 2 ? z.dim(1) : z.dim(0);
  if (k < 2) throw InvalidArgument("softmax_cross_entropy: need at least 2 classes");
  if (labels.size() != n) {
    throw InvalidShape("softmax_cross_entropy: " + std::to_string(labels.size()) +
                       " labels for " + std::to_string(n) + " rows");
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw InvalidLabel("label " + std::to_string(label) + " outside [0, " + std::to_string(k) +
                         ")");
    }
  }
  std::vector<double> prob(n * k);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = z.data().data() + r * k;
    const double top = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t c = 0; c < k; ++c) denom += std::exp(row[c] - top);
    const double log_denom = std::log(denom);
    for (std::size_t c = 0; c < k; ++c) prob[r * k + c] = std::exp(row[c] - top - log_denom);
    total += log_denom + top - row[labels[r]];
  }
  std::vector<int> owned(labels.begin(), labels.end());
  return g.record(Tensor::scalar(total / static_cast<double>(n)), {logits},
                  [logits, n, k, prob = std::move(prob), owned = std::move(owned)](Graph& g, Var self) {
                    const double up = g.upstream(self)[0] / static_cast<double>(n);
                    auto dst = g.grad_sink(logits);
                    for (std::size_t r = 0; r < n; ++r) {
                      for (std::size_t c = 0; c < k; ++c) {
                        const double onehot = static_cast<int>(c) == owned[r] ? 1.0 : 0.0;
                        dst[r * k + c] += up * (prob[r * k + c] - onehot);
                      }
                    }
                  });
}

}  // namespace pan
