// Copyright 2026 The fmdacl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fmdacl/nn_ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fmdacl::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_rank(const Var& x, int rank, const char* op) {
  if (x.value().rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_str(x.shape()));
  }
}

struct ConvGeom {
  int ci, h, w, kh, kw, stride, pad, ho, wo;
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* img, const ConvGeom& g, double* col) {
  const int hw_out = g.ho * g.wo;
  for (int c = 0; c < g.ci; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((c * g.kh + ky) * g.kw + kx) * hw_out;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = img + (c * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeom& g, double* img) {
  const int hw_out = g.ho * g.wo;
  for (int c = 0; c < g.ci; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((c * g.kh + ky) * g.kw + kx) * hw_out;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          double* dst = img + (c * g.h + iy) * g.w;
          const double* src = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opt) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.dim(1) != wv.dim(1)) {
    throw std::invalid_argument("conv2d: input channels " + std::to_string(xv.dim(1)) +
                                " vs weight " + shape_str(wv.shape()));
  }
  ConvGeom g{xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(2), wv.dim(3), opt.stride, opt.padding, 0, 0};
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw std::invalid_argument("conv2d: kernel larger than input");
  const int batch = xv.dim(0);
  const int co = wv.dim(0);
  const int k = g.ci * g.kh * g.kw;
  const int hw_out = g.ho * g.wo;
  const int in_size = g.ci * g.h * g.w;

  Tensor out({batch, co, g.ho, g.wo}, 0.0);
  ConstMapMat wm(wv.data(), co, k);
  DoubleBuffer col(g.pointwise() ? 0 : static_cast<std::size_t>(k) * hw_out);
  for (int b = 0; b < batch; ++b) {
    const double* src = xv.data() + static_cast<std::ptrdiff_t>(b) * in_size;
    if (!g.pointwise()) im2col(src, g, col.data());
    ConstMapMat cm(g.pointwise() ? src : col.data(), k, hw_out);
    MapMat om(out.data() + static_cast<std::ptrdiff_t>(b) * co * hw_out, co, hw_out);
    om.noalias() = wm * cm;
    if (bias.defined()) {
      for (int c = 0; c < co; ++c) om.row(c).array() += bias.value()[static_cast<std::size_t>(c)];
    }
  }

  const bool has_bias = bias.defined();
  std::vector<Var> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result(std::move(out), std::move(parents), [g, batch, co, k, hw_out, in_size, has_bias](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    const Tensor& xv = xn.value;
    ConstMapMat wm(wn.value.data(), co, k);
    DoubleBuffer col(static_cast<std::size_t>(k) * hw_out);
    for (int b = 0; b < batch; ++b) {
      ConstMapMat dy(self.grad.data() + static_cast<std::ptrdiff_t>(b) * co * hw_out, co, hw_out);
      const double* src = xv.data() + static_cast<std::ptrdiff_t>(b) * in_size;
      if (wn.requires_grad) {
        if (!g.pointwise()) im2col(src, g, col.data());
        ConstMapMat cm(g.pointwise() ? src : col.data(), k, hw_out);
        MapMat dw(wn.grad_buffer().data(), co, k);
        dw.noalias() += dy * cm.transpose();
      }
      if (xn.requires_grad) {
        double* dst = xn.grad_buffer().data() + static_cast<std::ptrdiff_t>(b) * in_size;
        if (g.pointwise()) {
          MapMat dx(dst, k, hw_out);
          dx.noalias() += wm.transpose() * dy;
        } else {
          MapMat dcol(col.data(), k, hw_out);
          dcol.noalias() = wm.transpose() * dy;
          col2im_add(col.data(), g, dst);
        }
      }
      if (has_bias && self.parents[2]->requires_grad) {
        Tensor& db = self.parents[2]->grad_buffer();
        for (int c = 0; c < co; ++c) db[static_cast<std::size_t>(c)] += dy.row(c).sum();
      }
    }
  }, "conv2d");
}

Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                 Tensor& running_var, bool train, double momentum, double eps) {
  require_rank(x, 4, "batch_norm2d");
  const Tensor& xv = x.value();
  const int batch = xv.dim(0), channels = xv.dim(1);
  const int hw = xv.dim(2) * xv.dim(3);
  const double count = static_cast<double>(batch) * hw;
  if (gamma.value().numel() != static_cast<std::size_t>(channels)) {
    throw std::invalid_argument("batch_norm2d: gamma size does not match channels");
  }

  std::vector<double> mu(channels), inv_std(channels);
  for (int c = 0; c < channels; ++c) {
    if (train) {
      double s = 0.0;
      for (int b = 0; b < batch; ++b) {
        const double* p = xv.data() + (static_cast<std::ptrdiff_t>(b) * channels + c) * hw;
        for (int i = 0; i < hw; ++i) s += p[i];
      }
      const double m = s / count;
      double v = 0.0;
      for (int b = 0; b < batch; ++b) {
        const double* p = xv.data() + (static_cast<std::ptrdiff_t>(b) * channels + c) * hw;
        for (int i = 0; i < hw; ++i) v += (p[i] - m) * (p[i] - m);
      }
      const double var = v / count;
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      const double unbiased = count > 1 ? v / (count - 1) : var;
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * m;
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * unbiased;
    } else {
      mu[c] = running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor xhat(xv.shape());
  Tensor out(xv.shape());
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(b) * channels + c) * hw;
      const double gm = gamma.value()[c], bt = beta.value()[c];
      for (int i = 0; i < hw; ++i) {
        const double n = (xv[off + i] - mu[c]) * inv_std[c];
        xhat[off + i] = n;
        out[off + i] = gm * n + bt;
      }
    }
  }

  return make_result(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std, batch, channels, hw, count, train](Node& self) {
    Node& xn = *self.parents[0];
    Node& gn = *self.parents[1];
    Node& bn = *self.parents[2];
    for (int c = 0; c < channels; ++c) {
      double sdy = 0.0, sdyx = 0.0;
      for (int b = 0; b < batch; ++b) {
        const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(b) * channels + c) * hw;
        for (int i = 0; i < hw; ++i) {
          sdy += self.grad[off + i];
          sdyx += self.grad[off + i] * xhat[off + i];
        }
      }
      if (gn.requires_grad) gn.grad_buffer()[c] += sdyx;
      if (bn.requires_grad) bn.grad_buffer()[c] += sdy;
      if (!xn.requires_grad) continue;
      Tensor& dx = xn.grad_buffer();
      const double gm = gn.value[c];
      for (int b = 0; b < batch; ++b) {
        const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(b) * channels + c) * hw;
        for (int i = 0; i < hw; ++i) {
          if (train) {
            dx[off + i] += gm * inv_std[c] / count *
                           (count * self.grad[off + i] - sdy - xhat[off + i] * sdyx);
          } else {
            dx[off + i] += gm * inv_std[c] * self.grad[off + i];
          }
        }
      }
    }
  }, "batch_norm2d");
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), {x}, [](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (xv[i] > 0.0) g[i] += self.grad[i];
    }
  }, "relu");
}

constexpr double kInvSqrt2 = 0.70710678118654752440;

Var gelu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return make_result(std::move(out), {x}, [](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    Tensor& g = self.parents[0]->grad_buffer();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  }, "gelu");
}

Var max_pool2(const Var& x) {
  require_rank(x, 4, "max_pool2");
  const Tensor& xv = x.value();
  const int b = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h % 2 || w % 2) throw std::invalid_argument("max_pool2: odd spatial size " + shape_str(xv.shape()));
  const int ho = h / 2, wo = w / 2;
  Tensor out({b, c, ho, wo});
  std::vector<std::size_t> argmax(out.numel());
  std::size_t o = 0;
  for (int n = 0; n < b * c; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * h * w;
    for (int y = 0; y < ho; ++y) {
      for (int xx = 0; xx < wo; ++xx, ++o) {
        std::size_t best = base + static_cast<std::size_t>(2 * y) * w + 2 * xx;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + static_cast<std::size_t>(2 * y + dy) * w + 2 * xx + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        out[o] = xv[best];
        argmax[o] = best;
      }
    }
  }
  return make_result(std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
  }, "max_pool2");
}

namespace {
struct Interp {
  int i0, i1;
  double w0, w1;
};

std::vector<Interp> interp_table(int in, int out) {
  std::vector<Interp> t(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    const double l = src - i0;
    t[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - l, l};
  }
  return t;
}
}  // namespace

Var upsample_bilinear(const Var& x, int out_h, int out_w) {
  require_rank(x, 4, "upsample_bilinear");
  const Tensor& xv = x.value();
  const int planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  auto ty = interp_table(h, out_h);
  auto tx = interp_table(w, out_w);
  Tensor out({xv.dim(0), xv.dim(1), out_h, out_w});
  for (int p = 0; p < planes; ++p) {
    const double* src = xv.data() + static_cast<std::ptrdiff_t>(p) * h * w;
    double* dst = out.data() + static_cast<std::ptrdiff_t>(p) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const Interp& iy = ty[y];
      for (int xx = 0; xx < out_w; ++xx) {
        const Interp& ix = tx[xx];
        dst[y * out_w + xx] = iy.w0 * (ix.w0 * src[iy.i0 * w + ix.i0] + ix.w1 * src[iy.i0 * w + ix.i1]) +
                              iy.w1 * (ix.w0 * src[iy.i1 * w + ix.i0] + ix.w1 * src[iy.i1 * w + ix.i1]);
      }
    }
  }
  return make_result(std::move(out), {x}, [ty, tx, planes, h, w, out_h, out_w](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (int p = 0; p < planes; ++p) {
      double* dst = g.data() + static_cast<std::ptrdiff_t>(p) * h * w;
      const double* dy = self.grad.data() + static_cast<std::ptrdiff_t>(p) * out_h * out_w;
      for (int y = 0; y < out_h; ++y) {
        const Interp& iy = ty[y];
        for (int xx = 0; xx < out_w; ++xx) {
          const Interp& ix = tx[xx];
          const double d = dy[y * out_w + xx];
          dst[iy.i0 * w + ix.i0] += iy.w0 * ix.w0 * d;
          dst[iy.i0 * w + ix.i1] += iy.w0 * ix.w1 * d;
          dst[iy.i1 * w + ix.i0] += iy.w1 * ix.w0 * d;
          dst[iy.i1 * w + ix.i1] += iy.w1 * ix.w1 * d;
        }
      }
    }
  }, "upsample_bilinear");
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3)) {
    throw std::invalid_argument("concat_channels: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  const int batch = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const std::size_t hw = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
  Tensor out({batch, ca + cb, av.dim(2), av.dim(3)});
  for (int n = 0; n < batch; ++n) {
    std::copy_n(av.data() + n * ca * hw, ca * hw, out.data() + n * (ca + cb) * hw);
    std::copy_n(bv.data() + n * cb * hw, cb * hw, out.data() + (n * (ca + cb) + ca) * hw);
  }
  return make_result(std::move(out), {a, b}, [batch, ca, cb, hw](Node& self) {
    for (int n = 0; n < batch; ++n) {
      const double* g = self.grad.data() + n * (ca + cb) * hw;
      if (self.parents[0]->requires_grad) {
        double* d = self.parents[0]->grad_buffer().data() + n * ca * hw;
        for (std::size_t i = 0; i < ca * hw; ++i) d[i] += g[i];
      }
      if (self.parents[1]->requires_grad) {
        double* d = self.parents[1]->grad_buffer().data() + n * cb * hw;
        for (std::size_t i = 0; i < cb * hw; ++i) d[i] += g[ca * hw + i];
      }
    }
  }, "concat_channels");
}

Var global_avg_pool(const Var& x) {
  require_rank(x, 4, "global_avg_pool");
  const Tensor& xv = x.value();
  const int planes = xv.dim(0) * xv.dim(1);
  const int hw = xv.dim(2) * xv.dim(3);
  Tensor out({xv.dim(0), xv.dim(1)});
  for (int p = 0; p < planes; ++p) {
    double s = 0.0;
    for (int i = 0; i < hw; ++i) s += xv[static_cast<std::size_t>(p) * hw + i];
    out[p] = s / hw;
  }
  return make_result(std::move(out), {x}, [planes, hw](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (int p = 0; p < planes; ++p) {
      const double d = self.grad[p] / hw;
      for (int i = 0; i < hw; ++i) g[static_cast<std::size_t>(p) * hw + i] += d;
    }
  }, "global_avg_pool");
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const int in = wv.dim(1), outf = wv.dim(0);
  if (xv.shape().back() != in) {
    throw std::invalid_argument("linear: input " + shape_str(xv.shape()) + " vs weight " + shape_str(wv.shape()));
  }
  const int rows = static_cast<int>(xv.numel() / static_cast<std::size_t>(in));
  Shape os = xv.shape();
  os.back() = outf;
  Tensor out(os);
  MapMat om(out.data(), rows, outf);
  om.noalias() = ConstMapMat(xv.data(), rows, in) * ConstMapMat(wv.data(), outf, in).transpose();
  if (bias.defined()) {
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), outf);
  }
  const bool has_bias = bias.defined();
  std::vector<Var> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result(std::move(out), std::move(parents), [rows, in, outf, has_bias](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    ConstMapMat dy(self.grad.data(), rows, outf);
    if (xn.requires_grad) {
      MapMat(xn.grad_buffer().data(), rows, in).noalias() += dy * ConstMapMat(wn.value.data(), outf, in);
    }
    if (wn.requires_grad) {
      MapMat(wn.grad_buffer().data(), outf, in).noalias() += dy.transpose() * ConstMapMat(xn.value.data(), rows, in);
    }
    if (has_bias && self.parents[2]->requires_grad) {
      Eigen::Map<Eigen::RowVectorXd>(self.parents[2]->grad_buffer().data(), outf) += dy.colwise().sum();
    }
  }, "linear");
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = x.value();
  const int d = xv.shape().back();
  const int rows = static_cast<int>(xv.numel() / static_cast<std::size_t>(d));
  Tensor xhat(xv.shape());
  Tensor out(xv.shape());
  std::vector<double> inv_std(rows);
  for (int r = 0; r < rows; ++r) {
    const double* p = xv.data() + static_cast<std::ptrdiff_t>(r) * d;
    double m = 0.0;
    for (int i = 0; i < d; ++i) m += p[i];
    m /= d;
    double v = 0.0;
    for (int i = 0; i < d; ++i) v += (p[i] - m) * (p[i] - m);
    v /= d;
    inv_std[r] = 1.0 / std::sqrt(v + eps);
    for (int i = 0; i < d; ++i) {
      const std::size_t k = static_cast<std::size_t>(r) * d + i;
      xhat[k] = (p[i] - m) * inv_std[r];
      out[k] = gamma.value()[i] * xhat[k] + beta.value()[i];
    }
  }
  return make_result(std::move(out), {x, gamma, beta}, [xhat = std::move(xhat), inv_std, rows, d](Node& self) {
    Node& xn = *self.parents[0];
    Node& gn = *self.parents[1];
    Node& bn = *self.parents[2];
    for (int r = 0; r < rows; ++r) {
      double sdyg = 0.0, sdygx = 0.0;
      for (int i = 0; i < d; ++i) {
        const std::size_t k = static_cast<std::size_t>(r) * d + i;
        const double dyg = self.grad[k] * gn.value[i];
        sdyg += dyg;
        sdygx += dyg * xhat[k];
        if (gn.requires_grad) gn.grad_buffer()[i] += self.grad[k] * xhat[k];
        if (bn.requires_grad) bn.grad_buffer()[i] += self.grad[k];
      }
      if (!xn.requires_grad) continue;
      Tensor& dx = xn.grad_buffer();
      for (int i = 0; i < d; ++i) {
        const std::size_t k = static_cast<std::size_t>(r) * d + i;
        dx[k] += inv_std[r] / d * (d * self.grad[k] * gn.value[i] - sdyg - xhat[k] * sdygx);
      }
    }
  }, "layer_norm");
}

Var self_attention(const Var& qkv, int heads) {
  require_rank(qkv, 3, "self_attention");
  const Tensor& v3 = qkv.value();
  const int batch = v3.dim(0), n = v3.dim(1), d3 = v3.dim(2);
  if (d3 % 3 || (d3 / 3) % heads) throw std::invalid_argument("self_attention: bad width " + std::to_string(d3));
  const int d = d3 / 3, dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  using Stride = Eigen::OuterStride<>;
  using CStrided = Eigen::Map<const RowMat, 0, Stride>;
  using Strided = Eigen::Map<RowMat, 0, Stride>;

  Tensor out({batch, n, d});
  // Attention weights per (batch, head), kept for backward.
  std::vector<RowMat> probs(static_cast<std::size_t>(batch) * heads);
  for (int b = 0; b < batch; ++b) {
    const double* base = v3.data() + static_cast<std::ptrdiff_t>(b) * n * d3;
    for (int hd = 0; hd < heads; ++hd) {
      CStrided q(base + hd * dh, n, dh, Stride(d3));
      CStrided k(base + d + hd * dh, n, dh, Stride(d3));
      CStrided v(base + 2 * d + hd * dh, n, dh, Stride(d3));
      RowMat s = (q * k.transpose()) * sc;
      for (int r = 0; r < n; ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
      }
      Strided o(out.data() + static_cast<std::ptrdiff_t>(b) * n * d + hd * dh, n, dh, Stride(d));
      o.noalias() = s * v;
      probs[static_cast<std::size_t>(b) * heads + hd] = std::move(s);
    }
  }
  return make_result(std::move(out), {qkv}, [probs = std::move(probs), batch, n, d, d3, dh, heads, sc](Node& self) {
    Node& in = *self.parents[0];
    Tensor& g = in.grad_buffer();
    for (int b = 0; b < batch; ++b) {
      const double* base = in.value.data() + static_cast<std::ptrdiff_t>(b) * n * d3;
      double* gbase = g.data() + static_cast<std::ptrdiff_t>(b) * n * d3;
      for (int hd = 0; hd < heads; ++hd) {
        const RowMat& a = probs[static_cast<std::size_t>(b) * heads + hd];
        CStrided q(base + hd * dh, n, dh, Stride(d3));
        CStrided k(base + d + hd * dh, n, dh, Stride(d3));
        CStrided v(base + 2 * d + hd * dh, n, dh, Stride(d3));
        CStrided dout(self.grad.data() + static_cast<std::ptrdiff_t>(b) * n * d + hd * dh, n, dh, Stride(d));
        Strided dq(gbase + hd * dh, n, dh, Stride(d3));
        Strided dk(gbase + d + hd * dh, n, dh, Stride(d3));
        Strided dv(gbase + 2 * d + hd * dh, n, dh, Stride(d3));
        dv.noalias() += a.transpose() * dout;
        RowMat da = dout * v.transpose();
        RowMat ds = a.array() * (da.colwise() - (da.array() * a.array()).rowwise().sum().matrix()).array();
        ds *= sc;
        dq.noalias() += ds * k;
        dk.noalias() += ds.transpose() * q;
      }
    }
  }, "self_attention");
}

Var dropout(const Var& x, double p, Rng& rng, bool train) {
  if (!train || p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout probability must be < 1");
  const double keep = 1.0 / (1.0 - p);
  Tensor mask(x.shape());
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : keep;
    out[i] *= mask[i];
  }
  return make_result(std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * mask[i];
  }, "dropout");
}

Var map_to_tokens(const Var& x) {
  require_rank(x, 4, "map_to_tokens");
  const Tensor& xv = x.value();
  const int batch = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor out({batch, hw, c});
  for (int b = 0; b < batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      for (int i = 0; i < hw; ++i) {
        out[(static_cast<std::size_t>(b) * hw + i) * c + ch] = xv[(static_cast<std::size_t>(b) * c + ch) * hw + i];
      }
    }
  }
  return make_result(std::move(out), {x}, [batch, c, hw](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (int b = 0; b < batch; ++b) {
      for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < hw; ++i) {
          g[(static_cast<std::size_t>(b) * c + ch) * hw + i] += self.grad[(static_cast<std::size_t>(b) * hw + i) * c + ch];
        }
      }
    }
  }, "map_to_tokens");
}

Var tokens_to_map(const Var& x, int h, int w) {
  require_rank(x, 3, "tokens_to_map");
  const Tensor& xv = x.value();
  const int batch = xv.dim(0), hw = xv.dim(1), c = xv.dim(2);
  if (hw != h * w) throw std::invalid_argument("tokens_to_map: token count does not match grid");
  Tensor out({batch, c, h, w});
  for (int b = 0; b < batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      for (int i = 0; i < hw; ++i) {
        out[(static_cast<std::size_t>(b) * c + ch) * hw + i] = xv[(static_cast<std::size_t>(b) * hw + i) * c + ch];
      }
    }
  }
  return make_result(std::move(out), {x}, [batch, c, hw](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (int b = 0; b < batch; ++b) {
      for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < hw; ++i) {
          g[(static_cast<std::size_t>(b) * hw + i) * c + ch] += self.grad[(static_cast<std::size_t>(b) * c + ch) * hw + i];
        }
      }
    }
  }, "tokens_to_map");
}

Var softmax_channels(const Var& logits) {
  require_rank(logits, 4, "softmax_channels");
  const Tensor& lv = logits.value();
  const int batch = lv.dim(0), c = lv.dim(1);
  const std::size_t hw = static_cast<std::size_t>(lv.dim(2)) * lv.dim(3);
  Tensor out(lv.shape());
  for (int b = 0; b < batch; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * c * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      double mx = lv[base + i];
      for (int k = 1; k < c; ++k) mx = std::max(mx, lv[base + k * hw + i]);
      double s = 0.0;
      for (int k = 0; k < c; ++k) {
        const double e = std::exp(lv[base + k * hw + i] - mx);
        out[base + k * hw + i] = e;
        s += e;
      }
      for (int k = 0; k < c; ++k) out[base + k * hw + i] /= s;
    }
  }
  return make_result(std::move(out), {logits}, [batch, c, hw](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    const Tensor& y = self.value;
    for (int b = 0; b < batch; ++b) {
      const std::size_t base = static_cast<std::size_t>(b) * c * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        double dot = 0.0;
        for (int k = 0; k < c; ++k) dot += self.grad[base + k * hw + i] * y[base + k * hw + i];
        for (int k = 0; k < c; ++k) {
          const std::size_t j = base + k * hw + i;
          g[j] += y[j] * (self.grad[j] - dot);
        }
      }
    }
  }, "softmax_channels");
}

const Var& check_finite(const Var& x, const std::string& layer) {
  const int b = x.value().first_nonfinite_batch();
  if (b >= 0) {
    throw NonFiniteError("non-finite activation in layer '" + layer + "' (batch index " + std::to_string(b) + ")");
  }
  return x;
}

}  // namespace fmdacl::ag
