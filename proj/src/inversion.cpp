#include "fadv/inversion.hpp"

#include <algorithm>
#include <cmath>

#include "fadv/error.hpp"
#include "fadv/rng.hpp"

namespace fadv {

void InversionConfig::validate() const {
  if (!(lambda_alpha >= 0.0) || !(lambda_tv >= 0.0))
    throw PreconditionError("regularizer weights must be non-negative");
  if (!(alpha_exp > 1.0)) throw PreconditionError("alpha exponent must exceed 1");
  if (!(beta_exp >= 1.0)) throw PreconditionError("beta exponent must be at least 1");
  if (sigma && !(*sigma > 0.0)) throw PreconditionError("sigma must be positive");
  if (iterations == 0) throw PreconditionError("iterations must be positive");
  if (!(step_size > 0.0)) throw PreconditionError("step size must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw PreconditionError("momentum must lie in [0, 1)");
}

double InversionConfig::sigma_for(const Shape& input_shape) const {
  return sigma ? *sigma : 255.0 * std::sqrt(static_cast<double>(shape_size(input_shape)));
}

double alpha_norm_regularizer(const Tensor& x, double a, Tensor* grad) {
  double r = 0.0;
  if (grad) *grad = Tensor(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double ax = std::abs(x[i]);
    r += std::pow(ax, a);
    if (grad && ax > 0.0) (*grad)[i] = a * std::pow(ax, a - 1.0) * (x[i] > 0.0 ? 1.0 : -1.0);
  }
  return r;
}

double tv_regularizer(const Tensor& x, double b, Tensor* grad) {
  if (x.rank() != 3) throw ShapeError("tv_regularizer expects a C x H x W image, got " + shape_string(x.shape()));
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (grad) *grad = Tensor(x.shape());
  double r = 0.0;
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        const double v = x.at(k, y, xx);
        const double dx = xx + 1 < w ? x.at(k, y, xx + 1) - v : 0.0;
        const double dy = y + 1 < h ? x.at(k, y + 1, xx) - v : 0.0;
        const double m = dx * dx + dy * dy;
        if (m == 0.0) continue;
        r += std::pow(m, 0.5 * b);
        if (!grad) continue;
        const double s = b * std::pow(m, 0.5 * b - 1.0);  // d/dm(m^(b/2)) * 2
        const std::size_t base = (k * h + y) * w + xx;
        (*grad)[base] -= s * (dx + dy);
        if (xx + 1 < w) (*grad)[base + 1] += s * dx;
        if (y + 1 < h) (*grad)[base + w] += s * dy;
      }
  return r;
}

namespace {

struct Evaluation {
  double objective;
  double data;
  Tensor grad;
};

}  // namespace

InversionResult invert_representation(const Network& net, const Tensor& target_rep,
                                      const InversionConfig& config) {
  config.validate();
  const auto& spec = net.spec();
  const std::size_t want = net.representation_size(config.layer);
  if (target_rep.size() != want)
    throw ShapeError("target representation has " + std::to_string(target_rep.size()) +
                     " values, layer " + config.layer + " has " + std::to_string(want));
  require_finite(target_rep, "inversion target");
  const Tensor target = target_rep.flattened();
  const double tnorm2 = squared_norm(target.data());
  if (tnorm2 == 0.0) throw DegenerateError("inversion target has zero norm");

  const Shape& shape = spec.input_shape;
  const double sigma = config.sigma_for(shape);
  const double n = static_cast<double>(shape_size(shape));

  const auto evaluate = [&](const Tensor& img) {
    const Tensor scaled = sigma * img;
    const Linearization lin(net, scaled, config.layer);
    const Tensor resid = lin.value() - target;
    Evaluation e;
    e.data = squared_norm(resid.data()) / tnorm2;
    e.grad = sigma * lin.vjp((2.0 / tnorm2) * resid);
    e.objective = e.data;
    Tensor g;
    if (config.lambda_alpha > 0.0) {
      e.objective += config.lambda_alpha * alpha_norm_regularizer(img, config.alpha_exp, &g);
      e.grad = e.grad + config.lambda_alpha * g;
    }
    if (config.lambda_tv > 0.0) {
      e.objective += config.lambda_tv * tv_regularizer(img, config.beta_exp, &g);
      e.grad = e.grad + config.lambda_tv * g;
    }
    if (!std::isfinite(e.objective) || !e.grad.all_finite())
      throw NumericError("inversion objective became non-finite");
    return e;
  };

  Rng rng(config.seed);
  Tensor img(shape);
  for (auto& v : img.data()) v = 0.05 * rng.normal() / std::sqrt(n);

  InversionResult res;
  Evaluation cur = evaluate(img);
  res.data_term_initial = cur.data;
  res.objective.push_back(cur.objective);
  Tensor velocity(shape);
  double step = config.step_size;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const Tensor v = config.momentum * velocity - step * cur.grad;
    const Tensor trial = img + v;
    Evaluation next = evaluate(trial);
    if (next.objective > cur.objective) {
      step *= 0.5;
      velocity = Tensor(shape);
      continue;
    }
    img = trial;
    velocity = v;
    cur = std::move(next);
    res.objective.push_back(cur.objective);
    ++res.accepted_steps;
    step = std::min(step * 1.1, config.step_size);
  }
  res.raw = sigma * img;
  res.image = res.raw;
  for (auto& p : res.image.data()) p = std::clamp(p, 0.0, 255.0);
  res.data_term = cur.data;
  return res;
}

}  // namespace fadv
