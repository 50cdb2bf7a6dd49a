#include "fadv/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "fadv/error.hpp"

namespace fadv {

BoxConstraint BoxConstraint::around(const Tensor& source, double delta) {
  if (!(delta >= 0.0)) throw PreconditionError("box half-width must be non-negative");
  BoxConstraint b{source, source};
  for (std::size_t i = 0; i < source.size(); ++i) {
    b.lower[i] = std::max(0.0, source[i] - delta);
    b.upper[i] = std::min(255.0, source[i] + delta);
    // A source pixel outside the range still yields a non-empty box.
    if (b.lower[i] > b.upper[i]) b.lower[i] = b.upper[i] = std::clamp(source[i], 0.0, 255.0);
  }
  return b;
}

BoxConstraint BoxConstraint::pixel_range(const Shape& shape) {
  return {Tensor(shape, 0.0), Tensor(shape, 255.0)};
}

bool BoxConstraint::contains(const Tensor& x) const {
  if (x.shape() != lower.shape()) return false;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(x[i] >= lower[i] && x[i] <= upper[i])) return false;
  return true;
}

Tensor BoxConstraint::project(const Tensor& x) const {
  require_same_shape(x, lower, "box projection");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], lower[i], upper[i]);
  return out;
}

Tensor project_box(const Tensor& image, const Tensor& source, double delta) {
  require_same_shape(image, source, "project_box");
  return BoxConstraint::around(source, delta).project(image);
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::converged_grad: return "converged_grad";
    case Termination::converged_ftol: return "converged_ftol";
    case Termination::max_iterations: return "max_iterations";
  }
  return "unknown";
}

namespace {

struct CurvaturePair {
  std::vector<double> s, y;
  double rho;
};

double evaluate(const ObjectiveFn& f, const Tensor& x, Tensor& grad, std::size_t iteration) {
  const double v = f(x, grad);
  if (!std::isfinite(v))
    throw NumericError("objective is non-finite at iterate " + std::to_string(iteration));
  if (grad.shape() != x.shape()) throw ShapeError("objective gradient has wrong shape");
  if (!grad.all_finite())
    throw NumericError("objective gradient is non-finite at iterate " + std::to_string(iteration));
  return v;
}

}  // namespace

MinimizeResult lbfgsb_minimize(const ObjectiveFn& objective, const Tensor& start,
                               const BoxConstraint& box, const OptimizerOptions& options,
                               const IterateObserver& observer) {
  require_same_shape(start, box.lower, "lbfgsb start");
  require_same_shape(box.lower, box.upper, "lbfgsb box");
  if (!box.contains(start)) throw PreconditionError("lbfgsb: start point is not feasible");
  if (options.history_size == 0 || options.max_iterations == 0)
    throw PreconditionError("lbfgsb: history size and iteration limit must be positive");

  const std::size_t n = start.size();
  const auto& lo = box.lower;
  const auto& hi = box.upper;

  MinimizeResult res;
  Tensor x = start;
  Tensor g;
  double f = evaluate(objective, x, g, 0);
  res.trajectory.push_back({0, f});
  if (observer) observer(0, x, f);

  std::deque<CurvaturePair> history;
  std::vector<double> d(n), q(n), alpha;
  std::vector<char> free_var(n);
  res.termination = Termination::max_iterations;

  std::size_t iter = 0;
  while (iter < options.max_iterations) {
    double pg_inf = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      pg_inf = std::max(pg_inf, std::abs(std::clamp(x[i] - g[i], lo[i], hi[i]) - x[i]));
    if (pg_inf <= options.grad_tol) {
      res.termination = Termination::converged_grad;
      break;
    }

    // Variables pinned at a bound by the gradient stay fixed this iteration.
    for (std::size_t i = 0; i < n; ++i)
      free_var[i] = !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0));

    bool accepted = false;
    bool retry = true;
    for (int attempt = 0; attempt < 2 && !accepted && retry; ++attempt) {
      retry = !history.empty();
      for (std::size_t i = 0; i < n; ++i) q[i] = free_var[i] ? g[i] : 0.0;
      if (history.empty()) {
        double qn = 0.0;
        for (double v : q) qn += v * v;
        qn = std::sqrt(qn);
        for (std::size_t i = 0; i < n; ++i) d[i] = -q[i] / qn;
      } else {
        alpha.assign(history.size(), 0.0);
        for (std::size_t k = history.size(); k-- > 0;) {
          const auto& h = history[k];
          double a = 0.0;
          for (std::size_t i = 0; i < n; ++i) a += h.s[i] * q[i];
          a *= h.rho;
          alpha[k] = a;
          for (std::size_t i = 0; i < n; ++i) q[i] -= a * h.y[i];
        }
        const auto& last = history.back();
        double yy = 0.0;
        for (double v : last.y) yy += v * v;
        const double gamma = 1.0 / (last.rho * yy);
        for (std::size_t i = 0; i < n; ++i) q[i] *= gamma;
        for (std::size_t k = 0; k < history.size(); ++k) {
          const auto& h = history[k];
          double b = 0.0;
          for (std::size_t i = 0; i < n; ++i) b += h.y[i] * q[i];
          b *= h.rho;
          for (std::size_t i = 0; i < n; ++i) q[i] += h.s[i] * (alpha[k] - b);
        }
        for (std::size_t i = 0; i < n; ++i) d[i] = -q[i];
      }
      // Drop fixed variables and components that would leave the box at once.
      double gd = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!free_var[i] || (x[i] <= lo[i] && d[i] < 0.0) || (x[i] >= hi[i] && d[i] > 0.0)) d[i] = 0.0;
        gd += g[i] * d[i];
      }
      if (!(gd < 0.0)) {
        history.clear();
        retry = true;
        continue;
      }

      double t = 1.0;
      for (std::size_t b = 0; b <= options.max_backtracks; ++b, t *= options.backtrack) {
        Tensor xt = x;
        for (std::size_t i = 0; i < n; ++i) xt[i] = std::clamp(x[i] + t * d[i], lo[i], hi[i]);
        double decrease = 0.0;
        for (std::size_t i = 0; i < n; ++i) decrease += g[i] * (xt[i] - x[i]);
        Tensor gt;
        const double ft = evaluate(objective, xt, gt, iter + 1);
        if (ft <= f + options.armijo * std::min(0.0, decrease)) {
          CurvaturePair p;
          p.s.resize(n);
          p.y.resize(n);
          double sy = 0.0, yy = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            p.s[i] = xt[i] - x[i];
            p.y[i] = gt[i] - g[i];
            sy += p.s[i] * p.y[i];
            yy += p.y[i] * p.y[i];
          }
          if (sy > 1e-12 * yy && sy > 0.0) {
            p.rho = 1.0 / sy;
            history.push_back(std::move(p));
            if (history.size() > options.history_size) history.pop_front();
          } else {
            history.clear();
          }
          const double f_old = f;
          x = std::move(xt);
          g = std::move(gt);
          f = ft;
          accepted = true;
          ++iter;
          if (!box.contains(x)) throw std::logic_error("lbfgsb: iterate left the box");
          res.trajectory.push_back({iter, f});
          if (observer) observer(iter, x, f);
          if (f_old - f <= options.ftol * std::max(std::abs(f_old), std::abs(f)))
            res.termination = Termination::converged_ftol;
          break;
        }
      }
      if (!accepted) history.clear();
    }
    if (!accepted) {
      // Neither the quasi-Newton nor the steepest-descent direction yields a
      // sufficient decrease: the iterate is stationary to working precision.
      res.termination = Termination::converged_ftol;
      break;
    }
    if (res.termination == Termination::converged_ftol) break;
  }

  res.point = std::move(x);
  res.objective = f;
  res.iterations = iter;
  return res;
}

}  // namespace fadv
