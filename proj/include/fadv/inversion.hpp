#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fadv/network.hpp"

namespace fadv {

struct InversionConfig {
  std::string layer = "fc2";
  double lambda_alpha = 1e-8;
  double lambda_tv = 1e-6;
  double alpha_exp = 6.0;
  double beta_exp = 2.0;
  std::optional<double> sigma;  // default 255 * sqrt(element count)
  std::size_t iterations = 2000;
  double step_size = 0.1;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
  double sigma_for(const Shape& input_shape) const;
};

struct InversionResult {
  Tensor image;  // sigma * I clamped to the pixel range
  Tensor raw;    // sigma * I
  double data_term_initial = 0.0;
  double data_term = 0.0;  // ||phi(sigma I) - t||^2 / ||t||^2 at the result
  std::vector<double> objective;  // accepted iterates, starting point first
  std::size_t accepted_steps = 0;
};

/// sum |x_i|^a, with gradient when requested.
double alpha_norm_regularizer(const Tensor& x, double a, Tensor* grad = nullptr);

/// sum over channels and pixels of (dx^2 + dy^2)^(b/2), forward differences
/// with the difference taken as 0 past the last row and column.
double tv_regularizer(const Tensor& x, double b, Tensor* grad = nullptr);

/// Momentum gradient descent on the normalized data term plus regularizers,
/// halving the step (and dropping momentum) on any increase.
InversionResult invert_representation(const Network& net, const Tensor& target_rep,
                                      const InversionConfig& config);

}  // namespace fadv
