#pragma once

#include <cstdint>
#include <vector>

#include "ttnlab/tensor.hpp"

// Forward/backward kernels for each layer kind. Inputs are batched: conv,
// pooling and BN take [N, C, H, W]; linear takes [N, ...] and flattens.
namespace ttnlab::kernels {

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
                      std::size_t padding);

struct Conv2dGrads {
  Tensor dx;
  Tensor dweight;
  Tensor dbias;
};
Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t padding,
                            const Tensor& dout);

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct LinearGrads {
  Tensor dx;
  Tensor dweight;
  Tensor dbias;
};
LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dout);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dout);

/// `argmax` receives, per output element, the flat input index it came from.
Tensor maxpool2d_forward(const Tensor& x, std::size_t kernel, std::size_t stride, std::vector<std::uint32_t>* argmax);
Tensor maxpool2d_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax, const Tensor& dout);

Tensor globalavgpool_forward(const Tensor& x);
Tensor globalavgpool_backward(const Shape& input_shape, const Tensor& dout);

/// Training-mode BatchNorm: normalizes with the statistics of `x` itself.
struct BatchNormCache {
  Tensor normalized;              // (x - mean) / sigma
  std::vector<double> mean;       // biased batch mean
  std::vector<double> var;        // biased batch variance
  std::vector<double> inv_sigma;  // 1 / sqrt(var + eps)
};
Tensor batchnorm_train_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                               BatchNormCache& cache);

struct BatchNormGrads {
  Tensor dx;
  Tensor dgamma;
  Tensor dbeta;
};
BatchNormGrads batchnorm_train_backward(const BatchNormCache& cache, const Tensor& gamma, const Tensor& dout);

}  // namespace ttnlab::kernels
