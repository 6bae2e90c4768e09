#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "ttnlab/layers.hpp"

namespace ttnlab::testkit {
namespace {

using Vec = std::vector<double>;

struct Problem {
  std::string instance;
  std::vector<Tensor> inputs;  // x first, then parameters
  std::function<Tensor(const std::vector<Tensor>&)> forward;
  std::function<std::vector<Tensor>(const std::vector<Tensor>&, const Tensor&)> backward;
  std::function<Vec(const std::vector<Vec>&)> reference;
  double h32 = 1e-3;
};

Tensor uniform_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(u(rng));
  return t;
}

// Values bounded away from zero, so a small perturbation never crosses the
// ReLU kink.
Tensor away_from_zero(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(sign(rng) ? u(rng) : -u(rng));
  return t;
}

// Distinct values at least 0.05 apart, so max-pool winners are stable under
// perturbation.
Tensor spaced_values(const Shape& shape, std::mt19937_64& rng) {
  Tensor t(shape);
  std::vector<std::size_t> order(t.numel());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(0.05 * (double(order[i]) - t.numel() / 2.0));
  return t;
}

Vec to_vec(const Tensor& t) { return Vec(t.data(), t.data() + t.numel()); }

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// ---- double-precision reference forwards --------------------------------

Vec ref_conv(const Vec& x, const Vec& w, const Vec& b, std::size_t n, std::size_t cin, std::size_t h, std::size_t wd,
             std::size_t cout, std::size_t k, std::size_t stride, std::size_t pad) {
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Vec out(n * cout * oh * ow);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          double acc = b[o];
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = long(y * stride + ky) - long(pad), ix = long(xo * stride + kx) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
                acc += w[((o * cin + c) * k + ky) * k + kx] * x[((i * cin + c) * h + iy) * wd + ix];
              }
          out[((i * cout + o) * oh + y) * ow + xo] = acc;
        }
  return out;
}

Vec ref_linear(const Vec& x, const Vec& w, const Vec& b, std::size_t n, std::size_t in, std::size_t out_f) {
  Vec out(n * out_f);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out_f; ++o) {
      double acc = b[o];
      for (std::size_t j = 0; j < in; ++j) acc += w[o * in + j] * x[i * in + j];
      out[i * out_f + o] = acc;
    }
  return out;
}

Vec ref_maxpool(const Vec& x, std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                std::size_t s) {
  const std::size_t oh = (h - k) / s + 1, ow = (w - k) / s + 1;
  Vec out(n * c * oh * ow);
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        double best = -INFINITY;
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) best = std::max(best, x[(p * h + y * s + ky) * w + xo * s + kx]);
        out[(p * oh + y) * ow + xo] = best;
      }
  return out;
}

Vec ref_gap(const Vec& x, std::size_t n, std::size_t c, std::size_t hw) {
  Vec out(n * c, 0.0);
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t i = 0; i < hw; ++i) out[p] += x[p * hw + i];
    out[p] /= double(hw);
  }
  return out;
}

Vec ref_batchnorm(const Vec& x, const Vec& g, const Vec& b, std::size_t n, std::size_t c, std::size_t hw, double eps) {
  Vec out(x.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < hw; ++j) mean += x[(i * c + ch) * hw + j];
    mean /= double(n * hw);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < hw; ++j) var += std::pow(x[(i * c + ch) * hw + j] - mean, 2);
    var /= double(n * hw);
    const double sigma = std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < hw; ++j) {
        const std::size_t at = (i * c + ch) * hw + j;
        out[at] = g[ch] * (x[at] - mean) / sigma + b[ch];
      }
  }
  return out;
}

// ---- problem construction ------------------------------------------------

Problem make_problem(LayerKind kind, std::mt19937_64& rng) {
  using namespace kernels;
  Problem p;
  switch (kind) {
    case LayerKind::conv2d: {
      const std::size_t n = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3), h = pick(rng, 4, 6),
                        w = pick(rng, 4, 6), k = pick(rng, 0, 1) ? 3 : 1, stride = pick(rng, 1, 2),
                        pad = k == 3 ? pick(rng, 0, 1) : 0;
      p.instance = "x[" + std::to_string(n) + "," + std::to_string(cin) + "," + std::to_string(h) + "," +
                   std::to_string(w) + "] k" + std::to_string(k) + " s" + std::to_string(stride) + " p" +
                   std::to_string(pad) + " out" + std::to_string(cout);
      p.inputs = {uniform_tensor({n, cin, h, w}, rng, -1, 1), uniform_tensor({cout, cin, k, k}, rng, -0.5, 0.5),
                  uniform_tensor({cout}, rng, -0.5, 0.5)};
      p.forward = [=](const std::vector<Tensor>& in) { return conv2d_forward(in[0], in[1], in[2], stride, pad); };
      p.backward = [=](const std::vector<Tensor>& in, const Tensor& dout) {
        auto g = conv2d_backward(in[0], in[1], stride, pad, dout);
        return std::vector<Tensor>{g.dx, g.dweight, g.dbias};
      };
      p.reference = [=](const std::vector<Vec>& in) {
        return ref_conv(in[0], in[1], in[2], n, cin, h, w, cout, k, stride, pad);
      };
      break;
    }
    case LayerKind::linear: {
      const std::size_t n = pick(rng, 1, 4), c = pick(rng, 1, 3), s = pick(rng, 1, 2), out = pick(rng, 2, 5);
      const std::size_t in_f = c * s * s;
      p.instance = "x[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(s) + "," +
                   std::to_string(s) + "] out" + std::to_string(out);
      p.inputs = {uniform_tensor({n, c, s, s}, rng, -1, 1), uniform_tensor({out, in_f}, rng, -0.5, 0.5),
                  uniform_tensor({out}, rng, -0.5, 0.5)};
      p.forward = [](const std::vector<Tensor>& in) { return linear_forward(in[0], in[1], in[2]); };
      p.backward = [](const std::vector<Tensor>& in, const Tensor& dout) {
        auto g = linear_backward(in[0], in[1], dout);
        return std::vector<Tensor>{g.dx, g.dweight, g.dbias};
      };
      p.reference = [=](const std::vector<Vec>& in) { return ref_linear(in[0], in[1], in[2], n, in_f, out); };
      break;
    }
    case LayerKind::relu: {
      const Shape shape{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 2, 4), pick(rng, 2, 4)};
      p.instance = "x" + shape_string(shape);
      p.inputs = {away_from_zero(shape, rng)};
      p.forward = [](const std::vector<Tensor>& in) { return relu_forward(in[0]); };
      p.backward = [](const std::vector<Tensor>& in, const Tensor& dout) {
        return std::vector<Tensor>{relu_backward(in[0], dout)};
      };
      p.reference = [](const std::vector<Vec>& in) {
        Vec out(in[0]);
        for (double& v : out) v = std::max(v, 0.0);
        return out;
      };
      break;
    }
    case LayerKind::maxpool2d: {
      const std::size_t k = pick(rng, 2, 3), s = pick(rng, 1, k);
      const Shape shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, k, 6), pick(rng, k, 6)};
      p.instance = "x" + shape_string(shape) + " k" + std::to_string(k) + " s" + std::to_string(s);
      p.inputs = {spaced_values(shape, rng)};
      p.forward = [=](const std::vector<Tensor>& in) { return maxpool2d_forward(in[0], k, s, nullptr); };
      p.backward = [=](const std::vector<Tensor>& in, const Tensor& dout) {
        std::vector<std::uint32_t> argmax;
        maxpool2d_forward(in[0], k, s, &argmax);
        return std::vector<Tensor>{maxpool2d_backward(in[0].shape(), argmax, dout)};
      };
      p.reference = [=](const std::vector<Vec>& in) {
        return ref_maxpool(in[0], shape[0], shape[1], shape[2], shape[3], k, s);
      };
      break;
    }
    case LayerKind::globalavgpool: {
      const Shape shape{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4)};
      p.instance = "x" + shape_string(shape);
      p.inputs = {uniform_tensor(shape, rng, -1, 1)};
      p.forward = [](const std::vector<Tensor>& in) { return globalavgpool_forward(in[0]); };
      p.backward = [](const std::vector<Tensor>& in, const Tensor& dout) {
        return std::vector<Tensor>{globalavgpool_backward(in[0].shape(), dout)};
      };
      p.reference = [=](const std::vector<Vec>& in) { return ref_gap(in[0], shape[0], shape[1], shape[2] * shape[3]); };
      break;
    }
    case LayerKind::batchnorm2d: {
      const Shape shape{pick(rng, 2, 4), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
      const std::size_t c = shape[1], hw = shape[2] * shape[3];
      const double eps = 1e-5;
      p.instance = "x" + shape_string(shape);
      p.inputs = {uniform_tensor(shape, rng, -1, 1), uniform_tensor({c}, rng, 0.5, 1.5),
                  uniform_tensor({c}, rng, -0.5, 0.5)};
      p.forward = [=](const std::vector<Tensor>& in) {
        BatchNormCache cache;
        return batchnorm_train_forward(in[0], in[1], in[2], eps, cache);
      };
      p.backward = [=](const std::vector<Tensor>& in, const Tensor& dout) {
        BatchNormCache cache;
        batchnorm_train_forward(in[0], in[1], in[2], eps, cache);
        auto g = batchnorm_train_backward(cache, in[1], dout);
        return std::vector<Tensor>{g.dx, g.dgamma, g.dbeta};
      };
      p.reference = [=](const std::vector<Vec>& in) {
        return ref_batchnorm(in[0], in[1], in[2], shape[0], c, hw, eps);
      };
      break;
    }
  }
  return p;
}

double dot(const Vec& a, const Vec& b) { return std::inner_product(a.begin(), a.end(), b.begin(), 0.0); }

double rel_error(const Vec& analytic, const Vec& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += std::pow(analytic[i] - numeric[i], 2);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

}  // namespace

GradCheck check_layer_gradient(LayerKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Problem p = make_problem(kind, rng);

  // Scalar objective L = sum(out * r) so dL/dout = r.
  const Tensor out = p.forward(p.inputs);
  const Tensor r = uniform_tensor(out.shape(), rng, -1, 1);
  const Vec rv = to_vec(r);
  const auto grads = p.backward(p.inputs, r);

  std::vector<Vec> ref_inputs;
  for (const auto& t : p.inputs) ref_inputs.push_back(to_vec(t));

  GradCheck result;
  result.kind = kind;
  result.instance = p.instance;
  const Vec ref_out = p.reference(ref_inputs);
  result.forward_mismatch = rel_error(to_vec(out), ref_out);

  for (std::size_t t = 0; t < p.inputs.size(); ++t) {
    const Vec analytic = to_vec(grads.at(t));
    Vec numeric32(analytic.size()), numeric64(analytic.size());
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      std::vector<Tensor> plus = p.inputs, minus = p.inputs;
      plus[t][i] += static_cast<float>(p.h32);
      minus[t][i] -= static_cast<float>(p.h32);
      // The float step actually taken, not the requested one.
      const double step = double(plus[t][i]) - double(minus[t][i]);
      numeric32[i] = (dot(to_vec(p.forward(plus)), rv) - dot(to_vec(p.forward(minus)), rv)) / step;

      const double h64 = 1e-6;
      std::vector<Vec> rp = ref_inputs, rm = ref_inputs;
      rp[t][i] += h64;
      rm[t][i] -= h64;
      numeric64[i] = (dot(p.reference(rp), rv) - dot(p.reference(rm), rv)) / (2.0 * h64);
    }
    result.rel_error_32 = std::max(result.rel_error_32, rel_error(analytic, numeric32));
    result.rel_error_64 = std::max(result.rel_error_64, rel_error(analytic, numeric64));
  }
  return result;
}

}  // namespace ttnlab::testkit
