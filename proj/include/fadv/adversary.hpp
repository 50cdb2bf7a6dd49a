#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fadv/network.hpp"
#include "fadv/optimizer.hpp"

namespace fadv {

struct AdvConfig {
  double delta = 10.0;  // L-infinity budget in pixel units
  std::string layer = "fc2";
  std::size_t max_iterations = 500;
  std::size_t history_size = 10;
  double grad_tol = 1e-6;
  double ftol = 1e-9;
  std::uint64_t seed = 0;

  void validate() const;
  OptimizerOptions optimizer() const;
};

struct TrajectoryPoint {
  std::size_t iteration;
  double objective;
  /// d(alpha, g) / d(s, g) on the true representation. For label-opt, the
  /// targeted cross-entropy relative to its value at the source.
  double ratio;
};

struct AdvResult {
  Tensor adversarial_image;
  Tensor perturbation;  // adversarial_image - source
  std::vector<TrajectoryPoint> trajectory;
  Termination termination = Termination::max_iterations;
  double final_ratio = 1.0;
  double final_objective = 0.0;
  std::size_t iterations = 0;
};

/// arg min ||phi(I) - phi(guide)||^2 over the delta-box around source.
AdvResult feature_opt(const Network& net, const Tensor& source, const Tensor& guide,
                      const AdvConfig& config);

/// Same box, but phi is replaced by its first-order expansion at the source.
/// Ratios in the result are measured on the true representation.
AdvResult feature_linear(const Network& net, const Tensor& source, const Tensor& guide,
                         const AdvConfig& config);

/// One signed descent step of size delta on the feature distance.
Tensor feat_fgrad(const Network& net, const Tensor& source, const Tensor& guide,
                  const std::string& layer, double delta);

/// One signed descent step of size delta on the cross-entropy toward
/// target_label.
Tensor label_fgrad(const Network& net, const Tensor& source, std::size_t target_label, double delta);

struct LabelOptResult {
  AdvResult adv;
  double penalty = 0.0;        // the c that produced adv
  std::size_t runs = 0;        // penalized problems solved
  std::size_t successes = 0;   // runs that reached the target label
};

/// Penalized misclassification: min CE(f(I), target) + c ||I - source||^2
/// over the pixel range for c on a geometric grid plus one bisection step;
/// keeps the successful run with the smallest ||eps||_2. Throws
/// NoAdversaryError when no c reaches the target label.
LabelOptResult label_opt(const Network& net, const Tensor& source, std::size_t target_label,
                         const AdvConfig& config);

/// The c grid: 1e-3 * 10^i, i = 0..6.
std::vector<double> label_penalty_grid();

}  // namespace fadv
