#include "ttnlab/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ttnlab/error.hpp"

namespace ttnlab::kernels {

namespace {

constexpr std::size_t kColumnBudget = std::size_t{1} << 20;  // floats per im2col buffer
constexpr std::size_t kTile = 512;

// c[m][n] += a[m][k] * b[k][n]
void gemm_accumulate(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
    const std::size_t j1 = std::min(n, j0 + kTile);
    for (std::size_t i = 0; i < m; ++i) {
      float* crow = c + i * n;
      const float* arow = a + i * k;
      for (std::size_t r = 0; r < k; ++r) {
        const float av = arow[r];
        const float* brow = b + r * n;
        for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

// c[k][n] += a[m][k]^T * b[m][n]
void gemm_at_b_accumulate(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
    const std::size_t j1 = std::min(n, j0 + kTile);
    for (std::size_t i = 0; i < m; ++i) {
      const float* arow = a + i * k;
      const float* brow = b + i * n;
      for (std::size_t r = 0; r < k; ++r) {
        const float av = arow[r];
        float* crow = c + r * n;
        for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

float dot(const float* a, const float* b, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[j + l] * b[j + l];
  float tail = 0.0f;
  for (; j < n; ++j) tail += a[j] * b[j];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, k, stride, pad, ho, wo;
  std::size_t patch() const { return cin * k * k; }
  std::size_t positions() const { return ho * wo; }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t padding) {
  require(x.rank() == 4, ErrorKind::shape_mismatch, "conv2d expects [N,C,H,W], got " + shape_string(x.shape()));
  require(weight.rank() == 4 && weight.dim(1) == x.dim(1) && weight.dim(2) == weight.dim(3), ErrorKind::shape_mismatch,
          "conv2d weight " + shape_string(weight.shape()) + " incompatible with input " + shape_string(x.shape()));
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), stride, padding, 0, 0};
  require(stride >= 1 && g.h + 2 * padding >= g.k && g.w + 2 * padding >= g.k, ErrorKind::shape_mismatch,
          "conv2d kernel larger than padded input");
  g.ho = (g.h + 2 * padding - g.k) / stride + 1;
  g.wo = (g.w + 2 * padding - g.k) / stride + 1;
  return g;
}

std::size_t chunk_size(const ConvGeometry& g) {
  return std::max<std::size_t>(1, kColumnBudget / std::max<std::size_t>(1, g.patch() * g.positions()));
}

// col[r][(i - n0) * P + p] for samples [n0, n1)
void im2col(const ConvGeometry& g, const float* x, std::size_t n0, std::size_t n1, std::vector<float>& col) {
  const std::size_t P = g.positions();
  const std::size_t width = (n1 - n0) * P;
  col.assign(g.patch() * width, 0.0f);
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t kh = 0; kh < g.k; ++kh)
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        float* row = col.data() + ((ci * g.k + kh) * g.k + kw) * width;
        for (std::size_t i = n0; i < n1; ++i) {
          const float* plane = x + (i * g.cin + ci) * g.h * g.w;
          float* dst = row + (i - n0) * P;
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - static_cast<std::ptrdiff_t>(g.pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t ow = 0; ow < g.wo; ++ow) {
              const std::ptrdiff_t iw =
                  static_cast<std::ptrdiff_t>(ow * g.stride + kw) - static_cast<std::ptrdiff_t>(g.pad);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) continue;
              dst[oh * g.wo + ow] = plane[static_cast<std::size_t>(ih) * g.w + static_cast<std::size_t>(iw)];
            }
          }
        }
      }
}

void col2im(const ConvGeometry& g, const std::vector<float>& col, std::size_t n0, std::size_t n1, float* dx) {
  const std::size_t P = g.positions();
  const std::size_t width = (n1 - n0) * P;
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t kh = 0; kh < g.k; ++kh)
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        const float* row = col.data() + ((ci * g.k + kh) * g.k + kw) * width;
        for (std::size_t i = n0; i < n1; ++i) {
          float* plane = dx + (i * g.cin + ci) * g.h * g.w;
          const float* src = row + (i - n0) * P;
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - static_cast<std::ptrdiff_t>(g.pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t ow = 0; ow < g.wo; ++ow) {
              const std::ptrdiff_t iw =
                  static_cast<std::ptrdiff_t>(ow * g.stride + kw) - static_cast<std::ptrdiff_t>(g.pad);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) continue;
              plane[static_cast<std::size_t>(ih) * g.w + static_cast<std::size_t>(iw)] += src[oh * g.wo + ow];
            }
          }
        }
      }
}

std::pair<std::size_t, std::size_t> rows_and_features(const Tensor& x) {
  require(x.rank() >= 1, ErrorKind::shape_mismatch, "expected a batched tensor");
  return {x.dim(0), x.numel() / x.dim(0)};
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
                      std::size_t padding) {
  const auto g = conv_geometry(x, weight, stride, padding);
  require(bias.numel() == g.cout, ErrorKind::shape_mismatch, "conv2d bias length mismatch");
  const std::size_t P = g.positions();
  Tensor out({g.n, g.cout, g.ho, g.wo});
  std::vector<float> col;
  std::vector<float> tmp;
  const std::size_t chunk = chunk_size(g);
  for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
    const std::size_t n1 = std::min(g.n, n0 + chunk);
    const std::size_t width = (n1 - n0) * P;
    im2col(g, x.data(), n0, n1, col);
    tmp.assign(g.cout * width, 0.0f);
    gemm_accumulate(weight.data(), col.data(), tmp.data(), g.cout, g.patch(), width);
    for (std::size_t i = n0; i < n1; ++i)
      for (std::size_t co = 0; co < g.cout; ++co) {
        const float b = bias[co];
        const float* src = tmp.data() + co * width + (i - n0) * P;
        float* dst = out.data() + (i * g.cout + co) * P;
        for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + b;
      }
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t padding,
                            const Tensor& dout) {
  const auto g = conv_geometry(x, weight, stride, padding);
  require(dout.shape() == Shape{g.n, g.cout, g.ho, g.wo}, ErrorKind::shape_mismatch, "conv2d gradient shape mismatch");
  const std::size_t P = g.positions();
  Conv2dGrads grads{Tensor(x.shape()), Tensor(weight.shape()), Tensor({g.cout})};
  std::vector<float> col;
  std::vector<float> dcol;
  std::vector<float> dtmp;
  const std::size_t chunk = chunk_size(g);
  for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
    const std::size_t n1 = std::min(g.n, n0 + chunk);
    const std::size_t width = (n1 - n0) * P;
    im2col(g, x.data(), n0, n1, col);
    dtmp.resize(g.cout * width);
    for (std::size_t i = n0; i < n1; ++i)
      for (std::size_t co = 0; co < g.cout; ++co)
        std::copy_n(dout.data() + (i * g.cout + co) * P, P, dtmp.data() + co * width + (i - n0) * P);

    for (std::size_t co = 0; co < g.cout; ++co) {
      const float* drow = dtmp.data() + co * width;
      float* dw = grads.dweight.data() + co * g.patch();
      for (std::size_t r = 0; r < g.patch(); ++r) dw[r] += dot(drow, col.data() + r * width, width);
      float s = 0.0f;
      for (std::size_t j = 0; j < width; ++j) s += drow[j];
      grads.dbias[co] += s;
    }
    dcol.assign(g.patch() * width, 0.0f);
    gemm_at_b_accumulate(weight.data(), dtmp.data(), dcol.data(), g.cout, g.patch(), width);
    col2im(g, dcol, n0, n1, grads.dx.data());
  }
  return grads;
}

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const auto [n, in] = rows_and_features(x);
  require(weight.rank() == 2 && weight.dim(1) == in && bias.numel() == weight.dim(0), ErrorKind::shape_mismatch,
          "linear weight " + shape_string(weight.shape()) + " incompatible with input " + shape_string(x.shape()));
  const std::size_t out_features = weight.dim(0);
  Tensor out({n, out_features});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out_features; ++o)
      out[i * out_features + o] = dot(x.data() + i * in, weight.data() + o * in, in) + bias[o];
  return out;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dout) {
  const auto [n, in] = rows_and_features(x);
  const std::size_t out_features = weight.dim(0);
  require(dout.shape() == Shape{n, out_features}, ErrorKind::shape_mismatch, "linear gradient shape mismatch");
  LinearGrads grads{Tensor(x.shape()), Tensor(weight.shape()), Tensor({out_features})};
  for (std::size_t i = 0; i < n; ++i) {
    const float* xi = x.data() + i * in;
    float* dxi = grads.dx.data() + i * in;
    for (std::size_t o = 0; o < out_features; ++o) {
      const float g = dout[i * out_features + o];
      float* dw = grads.dweight.data() + o * in;
      const float* w = weight.data() + o * in;
      for (std::size_t j = 0; j < in; ++j) {
        dw[j] += g * xi[j];
        dxi[j] += g * w[j];
      }
      grads.dbias[o] += g;
    }
  }
  return grads;
}

Tensor relu_forward(const Tensor& x) {
  Tensor out(x.shape());
  // Written so that NaN propagates instead of being clamped to zero.
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] < 0.0f ? 0.0f : x[i];
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& dout) {
  require(x.shape() == dout.shape(), ErrorKind::shape_mismatch, "relu gradient shape mismatch");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > 0.0f ? dout[i] : 0.0f;
  return dx;
}

Tensor maxpool2d_forward(const Tensor& x, std::size_t kernel, std::size_t stride, std::vector<std::uint32_t>* argmax) {
  require(x.rank() == 4, ErrorKind::shape_mismatch, "maxpool2d expects [N,C,H,W]");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(kernel >= 1 && stride >= 1 && h >= kernel && w >= kernel, ErrorKind::shape_mismatch,
          "maxpool2d window larger than input");
  const std::size_t ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  Tensor out({n, c, ho, wo});
  if (argmax) argmax->assign(out.numel(), 0);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oh = 0; oh < ho; ++oh)
      for (std::size_t ow = 0; ow < wo; ++ow, ++o) {
        float best = -std::numeric_limits<float>::infinity();
        std::size_t best_index = base + oh * stride * w + ow * stride;
        for (std::size_t kh = 0; kh < kernel; ++kh)
          for (std::size_t kw = 0; kw < kernel; ++kw) {
            const std::size_t idx = base + (oh * stride + kh) * w + ow * stride + kw;
            if (x[idx] > best) {
              best = x[idx];
              best_index = idx;
            }
          }
        out[o] = best;
        if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best_index);
      }
  }
  return out;
}

Tensor maxpool2d_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax, const Tensor& dout) {
  require(argmax.size() == dout.numel(), ErrorKind::shape_mismatch, "maxpool2d gradient shape mismatch");
  Tensor dx(input_shape);
  for (std::size_t o = 0; o < dout.numel(); ++o) dx[argmax[o]] += dout[o];
  return dx;
}

Tensor globalavgpool_forward(const Tensor& x) {
  require(x.rank() == 4, ErrorKind::shape_mismatch, "globalavgpool expects [N,C,H,W]");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  Tensor out({x.dim(0), x.dim(1), 1, 1});
  for (std::size_t p = 0; p < planes; ++p) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += x[p * hw + j];
    out[p] = static_cast<float>(s / static_cast<double>(hw));
  }
  return out;
}

Tensor globalavgpool_backward(const Shape& input_shape, const Tensor& dout) {
  require(input_shape.size() == 4, ErrorKind::shape_mismatch, "globalavgpool expects [N,C,H,W]");
  const std::size_t hw = input_shape[2] * input_shape[3];
  Tensor dx(input_shape);
  const float scale = 1.0f / static_cast<float>(hw);
  for (std::size_t p = 0; p < dout.numel(); ++p)
    for (std::size_t j = 0; j < hw; ++j) dx[p * hw + j] = dout[p] * scale;
  return dx;
}

Tensor batchnorm_train_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                               BatchNormCache& cache) {
  require(x.rank() >= 2, ErrorKind::shape_mismatch, "batchnorm expects [N,F,...]");
  const std::size_t n = x.dim(0), f = x.dim(1);
  const std::size_t spatial = x.numel() / (n * f);
  require(gamma.numel() == f && beta.numel() == f, ErrorKind::shape_mismatch, "batchnorm parameter length mismatch");
  require(n * spatial >= 2, ErrorKind::degenerate_batch, "batchnorm training needs at least 2 values per channel");
  const double count = static_cast<double>(n * spatial);

  cache.mean.assign(f, 0.0);
  cache.var.assign(f, 0.0);
  cache.inv_sigma.assign(f, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < f; ++c) {
      const float* p = x.data() + (i * f + c) * spatial;
      double s = 0.0;
      for (std::size_t j = 0; j < spatial; ++j) s += p[j];
      cache.mean[c] += s;
    }
  for (auto& m : cache.mean) m /= count;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < f; ++c) {
      const float* p = x.data() + (i * f + c) * spatial;
      double s = 0.0;
      for (std::size_t j = 0; j < spatial; ++j) {
        const double d = p[j] - cache.mean[c];
        s += d * d;
      }
      cache.var[c] += s;
    }
  for (std::size_t c = 0; c < f; ++c) {
    cache.var[c] /= count;
    cache.inv_sigma[c] = 1.0 / std::sqrt(cache.var[c] + eps);
  }

  cache.normalized = Tensor(x.shape());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < f; ++c) {
      const std::size_t base = (i * f + c) * spatial;
      const double m = cache.mean[c];
      const double is = cache.inv_sigma[c];
      for (std::size_t j = 0; j < spatial; ++j) {
        const float xh = static_cast<float>((x[base + j] - m) * is);
        cache.normalized[base + j] = xh;
        out[base + j] = gamma[c] * xh + beta[c];
      }
    }
  return out;
}

BatchNormGrads batchnorm_train_backward(const BatchNormCache& cache, const Tensor& gamma, const Tensor& dout) {
  const Tensor& xh = cache.normalized;
  require(xh.shape() == dout.shape(), ErrorKind::shape_mismatch, "batchnorm gradient shape mismatch");
  const std::size_t n = xh.dim(0), f = xh.dim(1);
  const std::size_t spatial = xh.numel() / (n * f);
  const double count = static_cast<double>(n * spatial);

  std::vector<double> sum_dy(f, 0.0), sum_dy_xh(f, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < f; ++c) {
      const std::size_t base = (i * f + c) * spatial;
      double a = 0.0, b = 0.0;
      for (std::size_t j = 0; j < spatial; ++j) {
        a += dout[base + j];
        b += static_cast<double>(dout[base + j]) * xh[base + j];
      }
      sum_dy[c] += a;
      sum_dy_xh[c] += b;
    }

  BatchNormGrads grads{Tensor(xh.shape()), Tensor({f}), Tensor({f})};
  for (std::size_t c = 0; c < f; ++c) {
    grads.dgamma[c] = static_cast<float>(sum_dy_xh[c]);
    grads.dbeta[c] = static_cast<float>(sum_dy[c]);
  }
  // dx = gamma * inv_sigma * (dy - mean(dy) - xh * mean(dy * xh))
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < f; ++c) {
      const std::size_t base = (i * f + c) * spatial;
      const double scale = gamma[c] * cache.inv_sigma[c];
      const double mdy = sum_dy[c] / count;
      const double mdyxh = sum_dy_xh[c] / count;
      for (std::size_t j = 0; j < spatial; ++j)
        grads.dx[base + j] = static_cast<float>(scale * (dout[base + j] - mdy - xh[base + j] * mdyxh));
    }
  return grads;
}

}  // namespace ttnlab::kernels
