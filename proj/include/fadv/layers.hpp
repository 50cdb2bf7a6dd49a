#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "fadv/tensor.hpp"

namespace fadv {

enum class LayerKind { conv2d, relu, maxpool, crossnorm, fullyconnected };

std::string to_string(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

/// One differentiable building block and its hyperparameters. Only the
/// fields belonging to `kind` are meaningful.
struct LayerPrimitive {
  LayerKind kind = LayerKind::relu;

  // conv2d: cross-correlation, square kernel, symmetric zero padding.
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;

  // maxpool
  std::size_t window = 2;
  std::size_t pool_stride = 2;

  // crossnorm: y_c = x_c (k + alpha/size * sum_{window} x^2)^-beta
  double norm_k = 2.0;
  double norm_alpha = 1e-4;
  double norm_beta = 0.75;
  std::size_t norm_size = 5;

  // fullyconnected
  std::size_t out_features = 0;

  static LayerPrimitive conv2d(std::size_t out_channels, std::size_t kernel,
                               std::size_t stride = 1, std::size_t pad = 0);
  static LayerPrimitive relu();
  static LayerPrimitive maxpool(std::size_t window, std::size_t stride);
  static LayerPrimitive crossnorm(double k = 2.0, double alpha = 1e-4, double beta = 0.75,
                                  std::size_t size = 5);
  static LayerPrimitive fully_connected(std::size_t out_features);

  friend bool operator==(const LayerPrimitive&, const LayerPrimitive&) = default;
};

/// Weight and bias of a conv2d/fullyconnected layer.
struct LayerParams {
  Tensor weight;  // conv: [out, in, k, k]; fc: [out, fan_in]
  Tensor bias;    // [out]

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

bool has_params(const LayerPrimitive& layer);

/// Throws ShapeError when the input does not fit the hyperparameters or a
/// window would not tile the input exactly.
Shape output_shape(const LayerPrimitive& layer, const Shape& input);
Shape weight_shape(const LayerPrimitive& layer, const Shape& input);

Tensor layer_forward(const LayerPrimitive& layer, const Tensor& input, const LayerParams* params);

/// d<cotangent, forward(input)>/d input, params held constant.
Tensor layer_vjp(const LayerPrimitive& layer, const Tensor& input, const LayerParams* params,
                 const Tensor& cotangent);

/// Directional derivative of forward at input along tangent. ReLU and
/// max-pool use the branch the forward pass selects.
Tensor layer_jvp(const LayerPrimitive& layer, const Tensor& input, const LayerParams* params,
                 const Tensor& tangent);

using ScalarFunction = std::function<double(const Tensor&)>;

/// Central differences, one evaluation pair per coordinate.
Tensor finite_difference_gradient(const ScalarFunction& f, const Tensor& x, double step);

}  // namespace fadv
