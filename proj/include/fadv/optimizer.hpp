#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "fadv/tensor.hpp"

namespace fadv {

/// Elementwise bounds; lower <= upper.
struct BoxConstraint {
  Tensor lower;
  Tensor upper;

  /// [max(0, source - delta), min(255, source + delta)].
  static BoxConstraint around(const Tensor& source, double delta);
  /// The full pixel range [0, 255].
  static BoxConstraint pixel_range(const Shape& shape);

  bool contains(const Tensor& x) const;
  Tensor project(const Tensor& x) const;
};

/// Clamp of image into the delta-box around source intersected with [0, 255].
Tensor project_box(const Tensor& image, const Tensor& source, double delta);

enum class Termination { converged_grad, converged_ftol, max_iterations };
std::string to_string(Termination t);

struct OptimizerOptions {
  std::size_t max_iterations = 500;
  std::size_t history_size = 10;
  double grad_tol = 1e-6;  // on the projected-gradient infinity norm
  double ftol = 1e-9;      // relative objective decrease
  double armijo = 1e-4;
  double backtrack = 0.5;
  std::size_t max_backtracks = 30;
};

/// Returns f(x) and writes df/dx into grad.
using ObjectiveFn = std::function<double(const Tensor& x, Tensor& grad)>;
/// Called with every accepted iterate, starting with iteration 0.
using IterateObserver = std::function<void(std::size_t iteration, const Tensor& x, double objective)>;

struct OptimizerStep {
  std::size_t iteration;
  double objective;
};

struct MinimizeResult {
  Tensor point;
  double objective = 0.0;
  std::size_t iterations = 0;
  Termination termination = Termination::max_iterations;
  std::vector<OptimizerStep> trajectory;
};

/// Projected limited-memory BFGS on a box. Directions come from the two-loop
/// recursion restricted to the free variables; trial points are projected
/// onto the box and accepted under an Armijo condition with backtracking.
/// Throws NumericError when the objective is non-finite and
/// PreconditionError when start is infeasible.
MinimizeResult lbfgsb_minimize(const ObjectiveFn& objective, const Tensor& start,
                               const BoxConstraint& box, const OptimizerOptions& options,
                               const IterateObserver& observer = {});

}  // namespace fadv
