#pragma once

// Layer toolbox for the encoder-decoder backbones: 3x3/1x1 convolutions via
// im2col + GEMM, batch normalization, ReLU, 2x2 max pooling and 2x2 stride-2
// transpose convolution. Every layer carries an explicit backward pass.
//
// Determinism contract: forward/backward results are independent of the
// worker count. Each output element is written by exactly one loop iteration
// and every reduction (batch statistics, per-sample weight-gradient merge)
// runs in a fixed index order.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "siamcd/common.hpp"
#include "siamcd/tensor.hpp"

namespace siamcd::nn {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using ConstMapRM = Eigen::Map<const RowMat>;

// Trainable tensor plus its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  void init_shape(std::string n, int a, int b, int c, int d) {
    name = std::move(n);
    value = Tensor(a, b, c, d);
    grad = Tensor(a, b, c, d);
  }
  void zero_grad() { grad.zero(); }
};

// He fan-in initialization for conv kernels; biases stay zero.
inline void he_init(Tensor& t, int fan_in, Rng& rng) {
  double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<float>(rng.normal() * std);
  }
}

// ----------------------------------------------------------------------------
// im2col / col2im for 3x3 kernels with padding 1, stride 1
// ----------------------------------------------------------------------------

inline void im2col_3x3(const float* src, int c, int h, int w, float* col) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = src + static_cast<std::size_t>(ch) * hw;
    for (int ky = 0; ky < 3; ++ky) {
      const int dy = ky - 1;
      for (int kx = 0; kx < 3; ++kx) {
        const int dx = kx - 1;
        float* dst = col + (static_cast<std::size_t>(ch) * 9 + ky * 3 + kx) * hw;
        for (int y = 0; y < h; ++y) {
          float* drow = dst + static_cast<std::size_t>(y) * w;
          const int sy = y + dy;
          if (sy < 0 || sy >= h) {
            std::fill(drow, drow + w, 0.0f);
            continue;
          }
          const float* srow = plane + static_cast<std::size_t>(sy) * w;
          const int x0 = dx < 0 ? -dx : 0;
          const int x1 = dx > 0 ? w - dx : w;
          if (x0 > 0) drow[0] = 0.0f;
          std::memcpy(drow + x0, srow + x0 + dx, static_cast<std::size_t>(x1 - x0) * sizeof(float));
          if (x1 < w) drow[w - 1] = 0.0f;
        }
      }
    }
  }
}

inline void col2im_add_3x3(const float* col, int c, int h, int w, float* dst) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    float* plane = dst + static_cast<std::size_t>(ch) * hw;
    for (int ky = 0; ky < 3; ++ky) {
      const int dy = ky - 1;
      for (int kx = 0; kx < 3; ++kx) {
        const int dx = kx - 1;
        const float* src = col + (static_cast<std::size_t>(ch) * 9 + ky * 3 + kx) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const float* srow = src + static_cast<std::size_t>(y) * w;
          float* drow = plane + static_cast<std::size_t>(sy) * w;
          const int x0 = dx < 0 ? -dx : 0;
          const int x1 = dx > 0 ? w - dx : w;
          for (int x = x0; x < x1; ++x) drow[x + dx] += srow[x];
        }
      }
    }
  }
}

inline AlignedFloats& tls_buffer(int slot, std::size_t size) {
  static thread_local AlignedFloats bufs[4];
  auto& b = bufs[slot];
  if (b.size() < size) b.resize(size);
  return b;
}

// ----------------------------------------------------------------------------
// Convolution (kernel 1 or 3, stride 1, same padding)
// ----------------------------------------------------------------------------

struct Conv2d {
  int c_in = 0, c_out = 0, kernel = 3;
  Param w;  // (c_out, c_in, k, k)
  Param b;  // (c_out, 1, 1, 1)

  struct Cache {
    Tensor in;
  };

  void build(const std::string& name, int in, int out, int k, Rng& rng) {
    c_in = in;
    c_out = out;
    kernel = k;
    w.init_shape(name + ".weight", out, in, k, k);
    b.init_shape(name + ".bias", out, 1, 1, 1);
    he_init(w.value, in * k * k, rng);
  }

  Tensor forward(const Tensor& x, Cache* cache) const {
    if (x.c() != c_in) {
      throw ShapeError("conv " + w.name + ": expected " + std::to_string(c_in) +
                       " input channels, got " + std::to_string(x.c()));
    }
    const int n = x.n(), h = x.h(), wd = x.w();
    const std::size_t hw = static_cast<std::size_t>(h) * wd;
    const int krows = c_in * kernel * kernel;
    Tensor y(n, c_out, h, wd);
    parallel_for(n, [&](std::int64_t i) {
      const float* xin = x.sample_ptr(static_cast<int>(i));
      const float* cols = xin;
      if (kernel == 3) {
        auto& col = tls_buffer(0, static_cast<std::size_t>(krows) * hw);
        im2col_3x3(xin, c_in, h, wd, col.data());
        cols = col.data();
      }
      ConstMapRM cm(cols, krows, static_cast<Eigen::Index>(hw));
      ConstMapRM wm(w.value.data(), c_out, krows);
      MapRM ym(y.sample_ptr(static_cast<int>(i)), c_out, static_cast<Eigen::Index>(hw));
      ym.noalias() = wm * cm;
      for (int co = 0; co < c_out; ++co) ym.row(co).array() += b.value[co];
    });
    if (cache) cache->in = x;
    return y;
  }

  Tensor backward(const Tensor& dy, const Cache& cache) {
    const Tensor& x = cache.in;
    const int n = x.n(), h = x.h(), wd = x.w();
    const std::size_t hw = static_cast<std::size_t>(h) * wd;
    const int krows = c_in * kernel * kernel;
    Tensor dx(n, c_in, h, wd);
    // Per-sample weight grads land in private buffers and merge in sample
    // order, keeping accumulation independent of the thread schedule.
    std::vector<AlignedFloats> dws(n);
    std::vector<std::vector<float>> dbs(n);
    parallel_for(n, [&](std::int64_t i) {
      const float* xin = x.sample_ptr(static_cast<int>(i));
      const float* cols = xin;
      if (kernel == 3) {
        auto& col = tls_buffer(0, static_cast<std::size_t>(krows) * hw);
        im2col_3x3(xin, c_in, h, wd, col.data());
        cols = col.data();
      }
      ConstMapRM cm(cols, krows, static_cast<Eigen::Index>(hw));
      ConstMapRM dym(dy.sample_ptr(static_cast<int>(i)), c_out, static_cast<Eigen::Index>(hw));
      ConstMapRM wm(w.value.data(), c_out, krows);

      dws[i].assign(w.value.size(), 0.0f);
      MapRM dwm(dws[i].data(), c_out, krows);
      dwm.noalias() = dym * cm.transpose();

      dbs[i].resize(static_cast<std::size_t>(c_out));
      for (int co = 0; co < c_out; ++co) dbs[i][co] = dym.row(co).sum();

      if (kernel == 3) {
        auto& dcol = tls_buffer(1, static_cast<std::size_t>(krows) * hw);
        MapRM dcm(dcol.data(), krows, static_cast<Eigen::Index>(hw));
        dcm.noalias() = wm.transpose() * dym;
        col2im_add_3x3(dcol.data(), c_in, h, wd, dx.sample_ptr(static_cast<int>(i)));
      } else {
        MapRM dxm(dx.sample_ptr(static_cast<int>(i)), c_in, static_cast<Eigen::Index>(hw));
        dxm.noalias() = wm.transpose() * dym;
      }
    });
    for (int i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < w.grad.size(); ++j) w.grad[j] += dws[i][j];
      for (int co = 0; co < c_out; ++co) b.grad[co] += dbs[i][co];
    }
    return dx;
  }
};

// ----------------------------------------------------------------------------
// Batch normalization (per channel over N, H, W)
// ----------------------------------------------------------------------------

struct BatchNorm {
  int c = 0;
  double eps = 1e-5;
  double momentum = 0.1;
  Param gamma, beta;
  Tensor running_mean, running_var;  // buffers, not optimized

  struct Cache {
    Tensor xhat;
    std::vector<float> invstd;
  };

  void build(const std::string& name, int channels) {
    c = channels;
    gamma.init_shape(name + ".gamma", channels, 1, 1, 1);
    beta.init_shape(name + ".beta", channels, 1, 1, 1);
    gamma.value.fill(1.0f);
    running_mean = Tensor(channels, 1, 1, 1);
    running_var = Tensor(channels, 1, 1, 1);
    running_var.fill(1.0f);
  }

  Tensor forward(const Tensor& x, bool training, Cache* cache) {
    if (x.c() != c) throw ShapeError("batchnorm " + gamma.name + ": channel mismatch");
    const int n = x.n(), h = x.h(), wd = x.w();
    const std::size_t plane = static_cast<std::size_t>(h) * wd;
    const std::size_t m = static_cast<std::size_t>(n) * plane;
    Tensor y(n, c, h, wd);
    if (training) {
      if (cache) {
        cache->xhat = Tensor(n, c, h, wd);
        cache->invstd.assign(static_cast<std::size_t>(c), 0.0f);
      }
      parallel_for(c, [&](std::int64_t ch) {
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < n; ++i) {
          const float* p = x.plane_ptr(i, static_cast<int>(ch));
          for (std::size_t j = 0; j < plane; ++j) {
            sum += p[j];
            sumsq += static_cast<double>(p[j]) * p[j];
          }
        }
        const double mean = sum / static_cast<double>(m);
        const double var = std::max(0.0, sumsq / static_cast<double>(m) - mean * mean);
        const double invstd = 1.0 / std::sqrt(var + eps);
        const float g = gamma.value[static_cast<int>(ch)];
        const float bt = beta.value[static_cast<int>(ch)];
        for (int i = 0; i < n; ++i) {
          const float* p = x.plane_ptr(i, static_cast<int>(ch));
          float* q = y.plane_ptr(i, static_cast<int>(ch));
          float* xh = cache ? cache->xhat.plane_ptr(i, static_cast<int>(ch)) : nullptr;
          for (std::size_t j = 0; j < plane; ++j) {
            const float v = static_cast<float>((p[j] - mean) * invstd);
            if (xh) xh[j] = v;
            q[j] = g * v + bt;
          }
        }
        if (cache) cache->invstd[static_cast<std::size_t>(ch)] = static_cast<float>(invstd);
        const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
        running_mean[static_cast<int>(ch)] = static_cast<float>(
            (1.0 - momentum) * running_mean[static_cast<int>(ch)] + momentum * mean);
        running_var[static_cast<int>(ch)] = static_cast<float>(
            (1.0 - momentum) * running_var[static_cast<int>(ch)] + momentum * unbiased);
      });
    } else {
      parallel_for(c, [&](std::int64_t ch) {
        const double mean = running_mean[static_cast<int>(ch)];
        const double invstd = 1.0 / std::sqrt(static_cast<double>(running_var[static_cast<int>(ch)]) + eps);
        const float g = gamma.value[static_cast<int>(ch)];
        const float bt = beta.value[static_cast<int>(ch)];
        for (int i = 0; i < n; ++i) {
          const float* p = x.plane_ptr(i, static_cast<int>(ch));
          float* q = y.plane_ptr(i, static_cast<int>(ch));
          for (std::size_t j = 0; j < plane; ++j) {
            q[j] = static_cast<float>(g * ((p[j] - mean) * invstd) + bt);
          }
        }
      });
    }
    return y;
  }

  Tensor backward(const Tensor& dy, const Cache& cache) {
    const int n = dy.n(), h = dy.h(), wd = dy.w();
    const std::size_t plane = static_cast<std::size_t>(h) * wd;
    const double m = static_cast<double>(static_cast<std::size_t>(n) * plane);
    Tensor dx(n, c, h, wd);
    parallel_for(c, [&](std::int64_t ch) {
      double dbeta = 0.0, dgamma = 0.0;
      for (int i = 0; i < n; ++i) {
        const float* dyp = dy.plane_ptr(i, static_cast<int>(ch));
        const float* xh = cache.xhat.plane_ptr(i, static_cast<int>(ch));
        for (std::size_t j = 0; j < plane; ++j) {
          dbeta += dyp[j];
          dgamma += static_cast<double>(dyp[j]) * xh[j];
        }
      }
      const double g = gamma.value[static_cast<int>(ch)];
      const double invstd = cache.invstd[static_cast<std::size_t>(ch)];
      const double k = g * invstd / m;
      for (int i = 0; i < n; ++i) {
        const float* dyp = dy.plane_ptr(i, static_cast<int>(ch));
        const float* xh = cache.xhat.plane_ptr(i, static_cast<int>(ch));
        float* dxp = dx.plane_ptr(i, static_cast<int>(ch));
        for (std::size_t j = 0; j < plane; ++j) {
          dxp[j] = static_cast<float>(k * (m * dyp[j] - dbeta - xh[j] * dgamma));
        }
      }
      gamma.grad[static_cast<int>(ch)] += static_cast<float>(dgamma);
      beta.grad[static_cast<int>(ch)] += static_cast<float>(dbeta);
    });
    return dx;
  }
};

// ----------------------------------------------------------------------------
// ReLU
// ----------------------------------------------------------------------------

struct ReluCache {
  std::vector<std::uint8_t> mask;
};

inline Tensor relu_forward(const Tensor& x, ReluCache* cache) {
  Tensor y = x;
  if (cache) cache->mask.assign(x.size(), 0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] > 0.0f) {
      if (cache) cache->mask[i] = 1;
    } else {
      y[i] = 0.0f;
    }
  }
  return y;
}

inline Tensor relu_backward(const Tensor& dy, const ReluCache& cache) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!cache.mask[i]) dx[i] = 0.0f;
  }
  return dx;
}

// ----------------------------------------------------------------------------
// 2x2 max pooling, stride 2
// ----------------------------------------------------------------------------

struct PoolCache {
  std::vector<std::uint8_t> argmax;  // 0..3 = (dy*2 + dx) of the winner
  int in_h = 0, in_w = 0;
};

inline Tensor maxpool2_forward(const Tensor& x, PoolCache* cache) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) {
    throw ShapeError("maxpool2: spatial dims must be even, got " + x.shape_str());
  }
  const int n = x.n(), c = x.c(), oh = x.h() / 2, ow = x.w() / 2;
  Tensor y(n, c, oh, ow);
  if (cache) {
    cache->argmax.assign(y.size(), 0);
    cache->in_h = x.h();
    cache->in_w = x.w();
  }
  parallel_for(static_cast<std::int64_t>(n) * c, [&](std::int64_t nc) {
    const int i = static_cast<int>(nc / c), ch = static_cast<int>(nc % c);
    const float* src = x.plane_ptr(i, ch);
    float* dst = y.plane_ptr(i, ch);
    std::uint8_t* am = cache ? cache->argmax.data() + (static_cast<std::size_t>(i) * c + ch) *
                                                          (static_cast<std::size_t>(oh) * ow)
                             : nullptr;
    for (int yy = 0; yy < oh; ++yy) {
      for (int xx = 0; xx < ow; ++xx) {
        float best = src[(2 * yy) * x.w() + 2 * xx];
        std::uint8_t arg = 0;
        for (int k = 1; k < 4; ++k) {
          const float v = src[(2 * yy + k / 2) * x.w() + 2 * xx + k % 2];
          if (v > best) {
            best = v;
            arg = static_cast<std::uint8_t>(k);
          }
        }
        dst[yy * ow + xx] = best;
        if (am) am[yy * ow + xx] = arg;
      }
    }
  });
  return y;
}

inline Tensor maxpool2_backward(const Tensor& dy, const PoolCache& cache) {
  const int n = dy.n(), c = dy.c(), oh = dy.h(), ow = dy.w();
  Tensor dx(n, c, cache.in_h, cache.in_w);
  parallel_for(static_cast<std::int64_t>(n) * c, [&](std::int64_t nc) {
    const int i = static_cast<int>(nc / c), ch = static_cast<int>(nc % c);
    const float* g = dy.plane_ptr(i, ch);
    float* dst = dx.plane_ptr(i, ch);
    const std::uint8_t* am = cache.argmax.data() + (static_cast<std::size_t>(i) * c + ch) *
                                                       (static_cast<std::size_t>(oh) * ow);
    for (int yy = 0; yy < oh; ++yy) {
      for (int xx = 0; xx < ow; ++xx) {
        const std::uint8_t arg = am[yy * ow + xx];
        dst[(2 * yy + arg / 2) * cache.in_w + 2 * xx + arg % 2] += g[yy * ow + xx];
      }
    }
  });
  return dx;
}

// ----------------------------------------------------------------------------
// 2x2 transpose convolution, stride 2 (exact upsampling, no tap overlap)
// ----------------------------------------------------------------------------

struct ConvTranspose2x2 {
  int c_in = 0, c_out = 0;
  Param w;  // (c_in, c_out, 2, 2), viewed as (c_in) x (c_out*4)
  Param b;

  struct Cache {
    Tensor in;
  };

  void build(const std::string& name, int in, int out, Rng& rng) {
    c_in = in;
    c_out = out;
    w.init_shape(name + ".weight", in, out, 2, 2);
    b.init_shape(name + ".bias", out, 1, 1, 1);
    he_init(w.value, in, rng);
  }

  Tensor forward(const Tensor& x, Cache* cache) const {
    if (x.c() != c_in) throw ShapeError("upconv " + w.name + ": channel mismatch");
    const int n = x.n(), h = x.h(), wd = x.w();
    const std::size_t hw = static_cast<std::size_t>(h) * wd;
    Tensor y(n, c_out, 2 * h, 2 * wd);
    parallel_for(n, [&](std::int64_t i) {
      auto& colbuf = tls_buffer(2, static_cast<std::size_t>(c_out) * 4 * hw);
      ConstMapRM xm(x.sample_ptr(static_cast<int>(i)), c_in, static_cast<Eigen::Index>(hw));
      ConstMapRM wm(w.value.data(), c_in, c_out * 4);
      MapRM cm(colbuf.data(), c_out * 4, static_cast<Eigen::Index>(hw));
      cm.noalias() = wm.transpose() * xm;
      float* dst = y.sample_ptr(static_cast<int>(i));
      for (int co = 0; co < c_out; ++co) {
        const float bias = b.value[co];
        float* plane = dst + static_cast<std::size_t>(co) * 4 * hw;  // (2h)*(2w) = 4*hw
        for (int k = 0; k < 4; ++k) {
          const float* src = colbuf.data() + (static_cast<std::size_t>(co) * 4 + k) * hw;
          const int dy0 = k / 2, dx0 = k % 2;
          for (int yy = 0; yy < h; ++yy) {
            float* prow = plane + static_cast<std::size_t>(2 * yy + dy0) * (2 * wd) + dx0;
            const float* srow = src + static_cast<std::size_t>(yy) * wd;
            for (int xx = 0; xx < wd; ++xx) prow[2 * xx] = srow[xx] + bias;
          }
        }
      }
    });
    if (cache) cache->in = x;
    return y;
  }

  Tensor backward(const Tensor& dy, const Cache& cache) {
    const Tensor& x = cache.in;
    const int n = x.n(), h = x.h(), wd = x.w();
    const std::size_t hw = static_cast<std::size_t>(h) * wd;
    Tensor dx(n, c_in, h, wd);
    std::vector<AlignedFloats> dws(n);
    std::vector<std::vector<float>> dbs(n);
    parallel_for(n, [&](std::int64_t i) {
      // Gather dy back into (c_out*4) x hw column layout.
      auto& colbuf = tls_buffer(2, static_cast<std::size_t>(c_out) * 4 * hw);
      const float* g = dy.sample_ptr(static_cast<int>(i));
      dbs[i].assign(static_cast<std::size_t>(c_out), 0.0f);
      for (int co = 0; co < c_out; ++co) {
        const float* plane = g + static_cast<std::size_t>(co) * 4 * hw;
        double bsum = 0.0;
        for (int k = 0; k < 4; ++k) {
          float* dst = colbuf.data() + (static_cast<std::size_t>(co) * 4 + k) * hw;
          const int dy0 = k / 2, dx0 = k % 2;
          for (int yy = 0; yy < h; ++yy) {
            const float* prow = plane + static_cast<std::size_t>(2 * yy + dy0) * (2 * wd) + dx0;
            float* drow = dst + static_cast<std::size_t>(yy) * wd;
            for (int xx = 0; xx < wd; ++xx) {
              drow[xx] = prow[2 * xx];
              bsum += prow[2 * xx];
            }
          }
        }
        dbs[i][co] = static_cast<float>(bsum);
      }
      ConstMapRM cm(colbuf.data(), c_out * 4, static_cast<Eigen::Index>(hw));
      ConstMapRM wm(w.value.data(), c_in, c_out * 4);
      ConstMapRM xm(x.sample_ptr(static_cast<int>(i)), c_in, static_cast<Eigen::Index>(hw));
      MapRM dxm(dx.sample_ptr(static_cast<int>(i)), c_in, static_cast<Eigen::Index>(hw));
      dxm.noalias() = wm * cm;
      dws[i].assign(w.value.size(), 0.0f);
      MapRM dwm(dws[i].data(), c_in, c_out * 4);
      dwm.noalias() = xm * cm.transpose();
    });
    for (int i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < w.grad.size(); ++j) w.grad[j] += dws[i][j];
      for (int co = 0; co < c_out; ++co) b.grad[co] += dbs[i][co];
    }
    return dx;
  }
};

// ----------------------------------------------------------------------------
// Pointwise helpers
// ----------------------------------------------------------------------------

inline Tensor sigmoid_forward(const Tensor& x) {
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = 1.0f / (1.0f + std::exp(-y[i]));
  }
  return y;
}

// dy is the gradient w.r.t. the sigmoid output; y the stored output.
inline Tensor sigmoid_backward(const Tensor& dy, const Tensor& y) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    dx[i] *= y[i] * (1.0f - y[i]);
  }
  return dx;
}

struct DiffCache {
  std::vector<std::int8_t> sign;  // sign(a - b), 0 at ties
};

// Elementwise |a - b| (or signed a - b). The absolute form makes the change
// decoder invariant to swapping the temporal order of its inputs.
inline Tensor diff_forward(const Tensor& a, const Tensor& b, bool absolute, DiffCache* cache) {
  if (!a.same_shape(b)) {
    throw ShapeError("feature difference: shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  }
  Tensor y = a;
  if (cache && absolute) cache->sign.assign(a.size(), 0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const float d = a[i] - b[i];
    if (absolute) {
      y[i] = std::fabs(d);
      if (cache) cache->sign[i] = d > 0.0f ? 1 : (d < 0.0f ? -1 : 0);
    } else {
      y[i] = d;
    }
  }
  return y;
}

inline void diff_backward(const Tensor& dy, bool absolute, const DiffCache& cache, Tensor& da,
                          Tensor& db) {
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const float s = absolute ? static_cast<float>(cache.sign[i]) : 1.0f;
    da[i] += dy[i] * s;
    db[i] -= dy[i] * s;
  }
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw ShapeError("concat: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor y(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int i = 0; i < a.n(); ++i) {
    std::memcpy(y.sample_ptr(i), a.sample_ptr(i), a.sample_size() * sizeof(float));
    std::memcpy(y.sample_ptr(i) + a.sample_size(), b.sample_ptr(i),
                b.sample_size() * sizeof(float));
  }
  return y;
}

inline void split_channels_grad(const Tensor& d, int c_a, Tensor& da, Tensor& db) {
  const int c_b = d.c() - c_a;
  da = Tensor(d.n(), c_a, d.h(), d.w());
  db = Tensor(d.n(), c_b, d.h(), d.w());
  for (int i = 0; i < d.n(); ++i) {
    std::memcpy(da.sample_ptr(i), d.sample_ptr(i), da.sample_size() * sizeof(float));
    std::memcpy(db.sample_ptr(i), d.sample_ptr(i) + da.sample_size(),
                db.sample_size() * sizeof(float));
  }
}

}  // namespace siamcd::nn
