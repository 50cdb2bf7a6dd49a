#include "fadv/layers.hpp"

#include <algorithm>
#include <cmath>

#include "fadv/error.hpp"

namespace fadv {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::crossnorm: return "crossnorm";
    case LayerKind::fullyconnected: return "fullyconnected";
  }
  return "unknown";
}

LayerKind parse_layer_kind(const std::string& name) {
  if (name == "conv2d") return LayerKind::conv2d;
  if (name == "relu") return LayerKind::relu;
  if (name == "maxpool") return LayerKind::maxpool;
  if (name == "crossnorm") return LayerKind::crossnorm;
  if (name == "fullyconnected") return LayerKind::fullyconnected;
  throw SpecError("unknown layer kind '" + name + "'");
}

LayerPrimitive LayerPrimitive::conv2d(std::size_t out_channels, std::size_t kernel,
                                      std::size_t stride, std::size_t pad) {
  LayerPrimitive l;
  l.kind = LayerKind::conv2d;
  l.out_channels = out_channels;
  l.kernel = kernel;
  l.stride = stride;
  l.pad = pad;
  return l;
}

LayerPrimitive LayerPrimitive::relu() { return LayerPrimitive{}; }

LayerPrimitive LayerPrimitive::maxpool(std::size_t window, std::size_t stride) {
  LayerPrimitive l;
  l.kind = LayerKind::maxpool;
  l.window = window;
  l.pool_stride = stride;
  return l;
}

LayerPrimitive LayerPrimitive::crossnorm(double k, double alpha, double beta, std::size_t size) {
  LayerPrimitive l;
  l.kind = LayerKind::crossnorm;
  l.norm_k = k;
  l.norm_alpha = alpha;
  l.norm_beta = beta;
  l.norm_size = size;
  return l;
}

LayerPrimitive LayerPrimitive::fully_connected(std::size_t out_features) {
  LayerPrimitive l;
  l.kind = LayerKind::fullyconnected;
  l.out_features = out_features;
  return l;
}

bool has_params(const LayerPrimitive& layer) {
  return layer.kind == LayerKind::conv2d || layer.kind == LayerKind::fullyconnected;
}

namespace {

void require_chw(const Shape& s, const LayerPrimitive& layer) {
  if (s.size() != 3)
    throw ShapeError(to_string(layer.kind) + " expects a CxHxW input, got " + shape_string(s));
}

std::size_t tiled_extent(std::size_t extent, std::size_t window, std::size_t stride,
                         std::size_t pad, const char* what) {
  const std::size_t padded = extent + 2 * pad;
  if (stride == 0 || window == 0) throw ShapeError(std::string(what) + ": zero window or stride");
  if (window > padded)
    throw ShapeError(std::string(what) + ": window " + std::to_string(window) +
                     " exceeds padded extent " + std::to_string(padded));
  if ((padded - window) % stride != 0)
    throw ShapeError(std::string(what) + ": window " + std::to_string(window) + " stride " +
                     std::to_string(stride) + " does not tile extent " + std::to_string(padded));
  return (padded - window) / stride + 1;
}

// Output positions o with 0 <= o*stride - pad + k < extent.
struct Range {
  std::size_t begin, end;
};

Range valid_outputs(std::size_t out_extent, std::size_t in_extent, std::size_t stride,
                    std::size_t pad, std::size_t k) {
  // o*stride >= pad - k  and  o*stride <= in_extent - 1 + pad - k
  std::size_t begin = 0;
  if (pad > k) begin = (pad - k + stride - 1) / stride;
  const long long hi = static_cast<long long>(in_extent) - 1 + static_cast<long long>(pad) -
                       static_cast<long long>(k);
  if (hi < 0) return {0, 0};
  std::size_t end = std::min(out_extent, static_cast<std::size_t>(hi) / stride + 1);
  if (begin > end) begin = end;
  return {begin, end};
}

void check_params(const LayerPrimitive& layer, const Shape& input, const LayerParams* params) {
  if (!has_params(layer)) {
    if (params != nullptr)
      throw ShapeError(to_string(layer.kind) + " takes no weights");
    return;
  }
  if (params == nullptr) throw ShapeError(to_string(layer.kind) + " requires weights");
  const Shape ws = weight_shape(layer, input);
  if (params->weight.shape() != ws)
    throw ShapeError(to_string(layer.kind) + " weight shape " +
                     shape_string(params->weight.shape()) + " expected " + shape_string(ws));
  if (params->bias.shape() != Shape{ws[0]})
    throw ShapeError(to_string(layer.kind) + " bias shape " + shape_string(params->bias.shape()) +
                     " expected [" + std::to_string(ws[0]) + "]");
}

// Cross-correlation without bias; the linear part of conv2d.
Tensor conv_linear(const LayerPrimitive& l, const Tensor& in, const Tensor& w) {
  const auto& s = in.shape();
  const std::size_t C = s[0], H = s[1], W = s[2];
  const Shape os = output_shape(l, s);
  const std::size_t O = os[0], OH = os[1], OW = os[2], K = l.kernel;
  Tensor out(os);
  auto od = out.data();
  auto id = in.data();
  auto wd = w.data();
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t ky = 0; ky < K; ++ky) {
        const Range ry = valid_outputs(OH, H, l.stride, l.pad, ky);
        for (std::size_t kx = 0; kx < K; ++kx) {
          const Range rx = valid_outputs(OW, W, l.stride, l.pad, kx);
          const double wv = wd[((o * C + c) * K + ky) * K + kx];
          for (std::size_t oy = ry.begin; oy < ry.end; ++oy) {
            const std::size_t iy = oy * l.stride + ky - l.pad;
            double* orow = &od[(o * OH + oy) * OW];
            const double* irow = &id[(c * H + iy) * W];
            for (std::size_t ox = rx.begin; ox < rx.end; ++ox)
              orow[ox] += wv * irow[ox * l.stride + kx - l.pad];
          }
        }
      }
  return out;
}

Tensor conv_transpose(const LayerPrimitive& l, const Shape& in_shape, const Tensor& w,
                      const Tensor& g) {
  const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
  const auto& os = g.shape();
  const std::size_t O = os[0], OH = os[1], OW = os[2], K = l.kernel;
  Tensor out(in_shape);
  auto xd = out.data();
  auto gd = g.data();
  auto wd = w.data();
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t ky = 0; ky < K; ++ky) {
        const Range ry = valid_outputs(OH, H, l.stride, l.pad, ky);
        for (std::size_t kx = 0; kx < K; ++kx) {
          const Range rx = valid_outputs(OW, W, l.stride, l.pad, kx);
          const double wv = wd[((o * C + c) * K + ky) * K + kx];
          for (std::size_t oy = ry.begin; oy < ry.end; ++oy) {
            const std::size_t iy = oy * l.stride + ky - l.pad;
            const double* grow = &gd[(o * OH + oy) * OW];
            double* xrow = &xd[(c * H + iy) * W];
            for (std::size_t ox = rx.begin; ox < rx.end; ++ox)
              xrow[ox * l.stride + kx - l.pad] += wv * grow[ox];
          }
        }
      }
  return out;
}

Tensor fc_linear(const LayerPrimitive& l, const Tensor& in, const Tensor& w) {
  const std::size_t n = in.size();
  Tensor out(Shape{l.out_features});
  auto wd = w.data();
  auto id = in.data();
  for (std::size_t o = 0; o < l.out_features; ++o) {
    const double* row = &wd[o * n];
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += row[i] * id[i];
    out[o] = s;
  }
  return out;
}

Tensor fc_transpose(const LayerPrimitive& l, const Shape& in_shape, const Tensor& w,
                    const Tensor& g) {
  Tensor out(in_shape);
  const std::size_t n = out.size();
  auto wd = w.data();
  auto od = out.data();
  for (std::size_t o = 0; o < l.out_features; ++o) {
    const double go = g[o];
    if (go == 0.0) continue;
    const double* row = &wd[o * n];
    for (std::size_t i = 0; i < n; ++i) od[i] += go * row[i];
  }
  return out;
}

// Flat input index of the maximum in every pool window; ties to lowest index.
std::vector<std::size_t> pool_argmax(const LayerPrimitive& l, const Tensor& in) {
  const auto& s = in.shape();
  const std::size_t C = s[0], H = s[1], W = s[2];
  const Shape os = output_shape(l, s);
  const std::size_t OH = os[1], OW = os[2];
  std::vector<std::size_t> arg(shape_size(os));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        std::size_t best = (c * H + oy * l.pool_stride) * W + ox * l.pool_stride;
        for (std::size_t wy = 0; wy < l.window; ++wy)
          for (std::size_t wx = 0; wx < l.window; ++wx) {
            const std::size_t idx =
                (c * H + oy * l.pool_stride + wy) * W + ox * l.pool_stride + wx;
            if (in[idx] > in[best] || (in[idx] == in[best] && idx < best)) best = idx;
          }
        arg[(c * OH + oy) * OW + ox] = best;
      }
  return arg;
}

struct NormWindow {
  std::size_t lo, hi;  // channel range [lo, hi)
};

NormWindow norm_window(const LayerPrimitive& l, std::size_t c, std::size_t channels) {
  const std::size_t half = l.norm_size / 2;
  const std::size_t lo = c >= half ? c - half : 0;
  const std::size_t hi = std::min(channels, c + (l.norm_size - half));
  return {lo, hi};
}

// Denominator base D = k + alpha/size * sum of squares over the channel window.
Tensor norm_denominator(const LayerPrimitive& l, const Tensor& in) {
  const auto& s = in.shape();
  const std::size_t C = s[0], plane = s[1] * s[2];
  Tensor d(s);
  const double scale = l.norm_alpha / static_cast<double>(l.norm_size);
  for (std::size_t c = 0; c < C; ++c) {
    const NormWindow win = norm_window(l, c, C);
    for (std::size_t p = 0; p < plane; ++p) {
      double sq = 0.0;
      for (std::size_t j = win.lo; j < win.hi; ++j) {
        const double v = in[j * plane + p];
        sq += v * v;
      }
      d[c * plane + p] = l.norm_k + scale * sq;
    }
  }
  return d;
}

}  // namespace

Shape output_shape(const LayerPrimitive& layer, const Shape& input) {
  if (input.empty() || shape_size(input) == 0)
    throw ShapeError("empty input shape " + shape_string(input));
  switch (layer.kind) {
    case LayerKind::relu:
      return input;
    case LayerKind::crossnorm:
      require_chw(input, layer);
      if (layer.norm_size % 2 == 0) throw ShapeError("crossnorm: window size must be odd");
      return input;
    case LayerKind::conv2d: {
      require_chw(input, layer);
      if (layer.out_channels == 0) throw ShapeError("conv2d: zero output channels");
      const std::size_t oh = tiled_extent(input[1], layer.kernel, layer.stride, layer.pad, "conv2d");
      const std::size_t ow = tiled_extent(input[2], layer.kernel, layer.stride, layer.pad, "conv2d");
      return {layer.out_channels, oh, ow};
    }
    case LayerKind::maxpool: {
      require_chw(input, layer);
      const std::size_t oh = tiled_extent(input[1], layer.window, layer.pool_stride, 0, "maxpool");
      const std::size_t ow = tiled_extent(input[2], layer.window, layer.pool_stride, 0, "maxpool");
      return {input[0], oh, ow};
    }
    case LayerKind::fullyconnected:
      if (layer.out_features == 0) throw ShapeError("fullyconnected: zero width");
      return {layer.out_features};
  }
  throw ShapeError("unknown layer kind");
}

Shape weight_shape(const LayerPrimitive& layer, const Shape& input) {
  switch (layer.kind) {
    case LayerKind::conv2d:
      require_chw(input, layer);
      return {layer.out_channels, input[0], layer.kernel, layer.kernel};
    case LayerKind::fullyconnected:
      return {layer.out_features, shape_size(input)};
    default:
      return {};
  }
}

Tensor layer_forward(const LayerPrimitive& layer, const Tensor& input, const LayerParams* params) {
  const Shape os = output_shape(layer, input.shape());
  check_params(layer, input.shape(), params);
  require_finite(input, "layer_forward input");
  switch (layer.kind) {
    case LayerKind::relu: {
      Tensor out = input;
      for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case LayerKind::conv2d: {
      Tensor out = conv_linear(layer, input, params->weight);
      const std::size_t plane = os[1] * os[2];
      for (std::size_t o = 0; o < os[0]; ++o)
        for (std::size_t p = 0; p < plane; ++p) out[o * plane + p] += params->bias[o];
      return out;
    }
    case LayerKind::fullyconnected: {
      Tensor out = fc_linear(layer, input, params->weight);
      for (std::size_t o = 0; o < os[0]; ++o) out[o] += params->bias[o];
      return out;
    }
    case LayerKind::maxpool: {
      const auto arg = pool_argmax(layer, input);
      Tensor out(os);
      for (std::size_t i = 0; i < arg.size(); ++i) out[i] = input[arg[i]];
      return out;
    }
    case LayerKind::crossnorm: {
      const Tensor d = norm_denominator(layer, input);
      Tensor out = input;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] *= std::pow(d[i], -layer.norm_beta);
      return out;
    }
  }
  throw ShapeError("unknown layer kind");
}

Tensor layer_vjp(const LayerPrimitive& layer, const Tensor& input, const LayerParams* params,
                 const Tensor& cotangent) {
  const Shape os = output_shape(layer, input.shape());
  check_params(layer, input.shape(), params);
  if (cotangent.shape() != os)
    throw ShapeError(to_string(layer.kind) + " vjp: cotangent shape " +
                     shape_string(cotangent.shape()) + " expected " + shape_string(os));
  switch (layer.kind) {
    case LayerKind::relu: {
      Tensor out(input.shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = input[i] > 0.0 ? cotangent[i] : 0.0;
      return out;
    }
    case LayerKind::conv2d:
      return conv_transpose(layer, input.shape(), params->weight, cotangent);
    case LayerKind::fullyconnected:
      return fc_transpose(layer, input.shape(), params->weight, cotangent);
    case LayerKind::maxpool: {
      const auto arg = pool_argmax(layer, input);
      Tensor out(input.shape());
      for (std::size_t i = 0; i < arg.size(); ++i) out[arg[i]] += cotangent[i];
      return out;
    }
    case LayerKind::crossnorm: {
      const auto& s = input.shape();
      const std::size_t C = s[0], plane = s[1] * s[2];
      const Tensor d = norm_denominator(layer, input);
      const double beta = layer.norm_beta;
      const double coef = 2.0 * layer.norm_alpha * beta / static_cast<double>(layer.norm_size);
      // t_c = g_c x_c D_c^(-beta-1)
      Tensor t(s);
      for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = cotangent[i] * input[i] * std::pow(d[i], -beta - 1.0);
      Tensor out(s);
      for (std::size_t c = 0; c < C; ++c) {
        const NormWindow win = norm_window(layer, c, C);
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t i = c * plane + p;
          double acc = 0.0;
          for (std::size_t j = win.lo; j < win.hi; ++j) acc += t[j * plane + p];
          out[i] = cotangent[i] * std::pow(d[i], -beta) - coef * input[i] * acc;
        }
      }
      return out;
    }
  }
  throw ShapeError("unknown layer kind");
}

Tensor layer_jvp(const LayerPrimitive& layer, const Tensor& input, const LayerParams* params,
                 const Tensor& tangent) {
  const Shape os = output_shape(layer, input.shape());
  check_params(layer, input.shape(), params);
  if (tangent.shape() != input.shape())
    throw ShapeError(to_string(layer.kind) + " jvp: tangent shape " +
                     shape_string(tangent.shape()) + " expected " + shape_string(input.shape()));
  switch (layer.kind) {
    case LayerKind::relu: {
      Tensor out(input.shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = input[i] > 0.0 ? tangent[i] : 0.0;
      return out;
    }
    case LayerKind::conv2d:
      return conv_linear(layer, tangent, params->weight);
    case LayerKind::fullyconnected:
      return fc_linear(layer, tangent, params->weight);
    case LayerKind::maxpool: {
      const auto arg = pool_argmax(layer, input);
      Tensor out(os);
      for (std::size_t i = 0; i < arg.size(); ++i) out[i] = tangent[arg[i]];
      return out;
    }
    case LayerKind::crossnorm: {
      const auto& s = input.shape();
      const std::size_t C = s[0], plane = s[1] * s[2];
      const Tensor d = norm_denominator(layer, input);
      const double beta = layer.norm_beta;
      const double coef = 2.0 * layer.norm_alpha * beta / static_cast<double>(layer.norm_size);
      Tensor out(s);
      for (std::size_t c = 0; c < C; ++c) {
        const NormWindow win = norm_window(layer, c, C);
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t i = c * plane + p;
          double acc = 0.0;
          for (std::size_t j = win.lo; j < win.hi; ++j) acc += input[j * plane + p] * tangent[j * plane + p];
          out[i] = tangent[i] * std::pow(d[i], -beta) -
                   coef * input[i] * std::pow(d[i], -beta - 1.0) * acc;
        }
      }
      return out;
    }
  }
  throw ShapeError("unknown layer kind");
}

Tensor finite_difference_gradient(const ScalarFunction& f, const Tensor& x, double step) {
  if (!(step > 0.0)) throw PreconditionError("finite_difference_gradient: step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double fp = f(probe);
    probe[i] = orig - step;
    const double fm = f(probe);
    probe[i] = orig;
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

}  // namespace fadv
