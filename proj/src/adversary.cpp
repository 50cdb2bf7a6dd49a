#include "fadv/adversary.hpp"

#include <algorithm>
#include <cmath>

#include "fadv/error.hpp"

namespace fadv {

void AdvConfig::validate() const {
  if (!(delta >= 0.0 && delta <= 255.0)) throw PreconditionError("delta must lie in [0, 255]");
  if (max_iterations == 0 || history_size == 0)
    throw PreconditionError("iteration limit and history size must be positive");
  if (!(grad_tol > 0.0) || !(ftol > 0.0)) throw PreconditionError("tolerances must be positive");
}

OptimizerOptions AdvConfig::optimizer() const {
  OptimizerOptions o;
  o.max_iterations = max_iterations;
  o.history_size = history_size;
  o.grad_tol = grad_tol;
  o.ftol = ftol;
  return o;
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

struct PairSetup {
  Tensor guide_rep;
  double source_guide_distance;
};

PairSetup prepare_pair(const Network& net, const Tensor& source, const Tensor& guide,
                       const AdvConfig& config) {
  config.validate();
  validate_image(net, source);
  validate_image(net, guide);
  if (source == guide) throw DegenerateError("source and guide images are identical");
  PairSetup p{representation(net, guide, config.layer), 0.0};
  p.source_guide_distance =
      distance(representation(net, source, config.layer).data(), p.guide_rep.data());
  if (p.source_guide_distance == 0.0)
    throw DegenerateError("source and guide share the same representation at " + config.layer);
  return p;
}

AdvResult finish(const Tensor& source, MinimizeResult&& m, std::vector<TrajectoryPoint>&& traj) {
  AdvResult r;
  r.perturbation = m.point - source;
  r.adversarial_image = std::move(m.point);
  r.trajectory = std::move(traj);
  r.termination = m.termination;
  r.final_objective = m.objective;
  r.iterations = m.iterations;
  r.final_ratio = r.trajectory.back().ratio;
  return r;
}

}  // namespace

AdvResult feature_opt(const Network& net, const Tensor& source, const Tensor& guide,
                      const AdvConfig& config) {
  const PairSetup pair = prepare_pair(net, source, guide, config);
  const auto objective = [&](const Tensor& x, Tensor& grad) {
    const Linearization lin(net, x, config.layer);
    Tensor residual = lin.value() - pair.guide_rep;
    grad = lin.vjp(2.0 * residual);
    return squared_norm(residual.data());
  };
  std::vector<TrajectoryPoint> traj;
  const auto observe = [&](std::size_t it, const Tensor&, double f) {
    traj.push_back({it, f, std::sqrt(f) / pair.source_guide_distance});
  };
  MinimizeResult m = lbfgsb_minimize(objective, source, BoxConstraint::around(source, config.delta),
                                     config.optimizer(), observe);
  return finish(source, std::move(m), std::move(traj));
}

AdvResult feature_linear(const Network& net, const Tensor& source, const Tensor& guide,
                         const AdvConfig& config) {
  const PairSetup pair = prepare_pair(net, source, guide, config);
  const Linearization at_source(net, source, config.layer);
  const Tensor offset = at_source.value() - pair.guide_rep;
  const auto objective = [&](const Tensor& x, Tensor& grad) {
    Tensor residual = offset + at_source.jvp(x - source);
    grad = at_source.vjp(2.0 * residual);
    return squared_norm(residual.data());
  };
  std::vector<TrajectoryPoint> traj;
  const auto observe = [&](std::size_t it, const Tensor& x, double f) {
    const Tensor rep = representation(net, x, config.layer);
    traj.push_back({it, f, distance(rep.data(), pair.guide_rep.data()) / pair.source_guide_distance});
  };
  MinimizeResult m = lbfgsb_minimize(objective, source, BoxConstraint::around(source, config.delta),
                                     config.optimizer(), observe);
  return finish(source, std::move(m), std::move(traj));
}

Tensor feat_fgrad(const Network& net, const Tensor& source, const Tensor& guide,
                  const std::string& layer, double delta) {
  validate_image(net, source);
  validate_image(net, guide);
  if (!(delta >= 0.0)) throw PreconditionError("delta must be non-negative");
  const Tensor guide_rep = representation(net, guide, layer);
  const Linearization lin(net, source, layer);
  const Tensor grad = lin.vjp(2.0 * (lin.value() - guide_rep));
  Tensor step = source;
  for (std::size_t i = 0; i < step.size(); ++i) step[i] -= delta * sign(grad[i]);
  return project_box(step, source, delta);
}

Tensor label_fgrad(const Network& net, const Tensor& source, std::size_t target_label, double delta) {
  const auto& spec = net.spec();
  if (!spec.head_classes) throw SpecError("label adversaries need a classification head");
  if (target_label >= *spec.head_classes) throw PreconditionError("target label out of range");
  if (!(delta >= 0.0)) throw PreconditionError("delta must be non-negative");
  validate_image(net, source);
  const Linearization lin(net, source, spec.layers.back().name);
  Tensor dscores;
  cross_entropy(lin.value(), target_label, &dscores);
  const Tensor grad = lin.vjp(dscores);
  Tensor step = source;
  for (std::size_t i = 0; i < step.size(); ++i) step[i] -= delta * sign(grad[i]);
  return project_box(step, source, delta);
}

std::vector<double> label_penalty_grid() {
  std::vector<double> grid;
  double c = 1e-3;
  for (int i = 0; i < 7; ++i, c *= 10.0) grid.push_back(c);
  return grid;
}

LabelOptResult label_opt(const Network& net, const Tensor& source, std::size_t target_label,
                         const AdvConfig& config) {
  const auto& spec = net.spec();
  if (!spec.head_classes) throw SpecError("label adversaries need a classification head");
  if (target_label >= *spec.head_classes) throw PreconditionError("target label out of range");
  config.validate();
  validate_image(net, source);
  const std::string& scores_layer = spec.layers.back().name;
  const Classification start = classify(net, source);
  if (start.label == target_label)
    throw PreconditionError("source is already classified as the target label");
  const double start_ce = cross_entropy(start.scores, target_label);

  const BoxConstraint box = BoxConstraint::pixel_range(source.shape());
  double best_margin = -INFINITY;

  struct Run {
    double c;
    bool success;
    double eps_norm;
    AdvResult adv;
  };

  const auto solve = [&](double c) {
    const auto objective = [&](const Tensor& x, Tensor& grad) {
      const Linearization lin(net, x, scores_layer);
      Tensor dscores;
      const double ce = cross_entropy(lin.value(), target_label, &dscores);
      const Tensor eps = x - source;
      grad = lin.vjp(dscores) + (2.0 * c) * eps;
      return ce + c * squared_norm(eps.data());
    };
    std::vector<TrajectoryPoint> traj;
    const auto observe = [&](std::size_t it, const Tensor& x, double f) {
      const double ce = cross_entropy(representation(net, x, scores_layer), target_label);
      traj.push_back({it, f, start_ce > 0.0 ? ce / start_ce : 0.0});
    };
    MinimizeResult m = lbfgsb_minimize(objective, source, box, config.optimizer(), observe);
    Run run{c, false, 0.0, finish(source, std::move(m), std::move(traj))};
    const Classification cls = classify(net, run.adv.adversarial_image);
    double other = -INFINITY;
    for (std::size_t i = 0; i < cls.scores.size(); ++i)
      if (i != target_label) other = std::max(other, cls.scores[i]);
    best_margin = std::max(best_margin, cls.scores[target_label] - other);
    run.success = cls.label == target_label;
    run.eps_norm = norm2(run.adv.perturbation);
    return run;
  };

  std::vector<Run> runs;
  for (double c : label_penalty_grid()) runs.push_back(solve(c));
  // Refine between the largest successful c and the failing c above it.
  for (std::size_t i = 0; i + 1 < runs.size(); ++i) {
    if (runs[i].success && !runs[i + 1].success) {
      runs.push_back(solve(std::sqrt(runs[i].c * runs[i + 1].c)));
      break;
    }
  }

  const Run* best = nullptr;
  std::size_t successes = 0;
  for (const auto& r : runs) {
    if (!r.success) continue;
    ++successes;
    if (!best || r.eps_norm < best->eps_norm) best = &r;
  }
  if (!best)
    throw NoAdversaryError("label-opt: no penalty weight reached label " + std::to_string(target_label),
                           best_margin);
  return LabelOptResult{best->adv, best->c, runs.size(), successes};
}

}  // namespace fadv
