#include "fadv/network.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "binary.hpp"
#include "fadv/error.hpp"
#include "fadv/rng.hpp"

namespace fadv {

namespace {

bool reserved_name(const std::string& n) { return n == "input" || n == "init" || n == "head"; }

bool valid_name(const std::string& n) {
  if (n.empty()) return false;
  return std::all_of(n.begin(), n.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

}  // namespace

void NetworkSpec::validate() const {
  if (input_shape.size() != 3 || shape_size(input_shape) == 0)
    throw SpecError("input shape must be channels x height x width, got " + shape_string(input_shape));
  if (layers.empty()) throw SpecError("network has no layers");
  std::set<std::string> seen;
  for (const auto& l : layers) {
    if (!valid_name(l.name) || reserved_name(l.name))
      throw SpecError("invalid layer name '" + l.name + "'");
    if (!seen.insert(l.name).second) throw SpecError("duplicate layer name '" + l.name + "'");
  }
  const auto shapes = layer_shapes();
  if (head_classes) {
    if (*head_classes == 0) throw SpecError("head class count must be positive");
    const Shape& last = shapes.back();
    if (last.size() != 1 || last[0] != *head_classes)
      throw SpecError("head expects last layer to output " + std::to_string(*head_classes) +
                      " scores, got " + shape_string(last));
  }
}

std::vector<Shape> NetworkSpec::layer_shapes() const {
  std::vector<Shape> out;
  Shape cur = input_shape;
  for (const auto& l : layers) {
    try {
      cur = output_shape(l.layer, cur);
    } catch (const ShapeError& e) {
      throw SpecError("layer '" + l.name + "': " + e.what());
    }
    out.push_back(cur);
  }
  return out;
}

std::size_t NetworkSpec::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == name) return i;
  throw SpecError("unknown layer '" + name + "'");
}

NetworkSpec refnet32_spec(std::optional<std::size_t> head_classes) {
  NetworkSpec s;
  s.input_shape = {3, 32, 32};
  s.layers = {
      {"conv1_pre", LayerPrimitive::conv2d(8, 5, 1, 2)},
      {"conv1", LayerPrimitive::relu()},
      {"pool1", LayerPrimitive::maxpool(2, 2)},
      {"norm1", LayerPrimitive::crossnorm()},
      {"conv2_pre", LayerPrimitive::conv2d(16, 5, 1, 2)},
      {"conv2", LayerPrimitive::relu()},
      {"pool2", LayerPrimitive::maxpool(2, 2)},
      {"fc1_pre", LayerPrimitive::fully_connected(128)},
      {"fc1", LayerPrimitive::relu()},
      {"fc2_pre", LayerPrimitive::fully_connected(64)},
      {"fc2", LayerPrimitive::relu()},
  };
  if (head_classes) {
    s.layers.push_back({"fc3", LayerPrimitive::fully_connected(*head_classes)});
    s.head_classes = head_classes;
  }
  return s;
}

std::string to_string(InitScheme scheme) {
  return scheme == InitScheme::gaussian ? "gaussian" : "orthonormal";
}

InitScheme parse_init_scheme(const std::string& name) {
  if (name == "gaussian") return InitScheme::gaussian;
  if (name == "orthonormal") return InitScheme::orthonormal;
  throw SpecError("unknown init scheme '" + name + "'");
}

void ActivationTrace::add(std::string name, Tensor activation) {
  names_.push_back(std::move(name));
  activations_.push_back(std::move(activation));
}

const Tensor& ActivationTrace::at(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return activations_[i];
  throw SpecError("trace has no layer '" + name + "'");
}

bool ActivationTrace::contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

Network::Network(NetworkSpec spec, std::map<std::string, LayerParams> params, InitRecord init)
    : spec_(std::move(spec)), params_(std::move(params)), init_(init) {
  spec_.validate();
  Shape cur = spec_.input_shape;
  std::size_t expected = 0;
  for (const auto& l : spec_.layers) {
    if (has_params(l.layer)) {
      ++expected;
      auto it = params_.find(l.name);
      if (it == params_.end()) throw SpecError("missing weights for layer '" + l.name + "'");
      const Shape ws = weight_shape(l.layer, cur);
      if (it->second.weight.shape() != ws || it->second.bias.shape() != Shape{ws[0]})
        throw SpecError("weights for layer '" + l.name + "' have wrong shape");
    }
    cur = output_shape(l.layer, cur);
  }
  if (params_.size() != expected) throw SpecError("weights given for unknown layers");
}

const LayerParams* Network::params(const std::string& layer) const {
  auto it = params_.find(layer);
  return it == params_.end() ? nullptr : &it->second;
}

std::size_t Network::representation_size(const std::string& layer) const {
  return shape_size(spec_.layer_shapes()[spec_.index_of(layer)]);
}

namespace {

// Rows x cols matrix with orthonormal rows (rows <= cols) or columns.
void orthonormalize(std::vector<double>& w, std::size_t rows, std::size_t cols) {
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      w.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  Eigen::MatrixXd a = m;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  // Singular values replaced by ones.
  m = svd.matrixU() * svd.matrixV().transpose();
}

}  // namespace

Network init_network(const NetworkSpec& spec, std::uint64_t seed, InitScheme scheme) {
  spec.validate();
  const Rng root(seed);
  std::map<std::string, LayerParams> params;
  Shape cur = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (has_params(l.layer)) {
      const Shape ws = weight_shape(l.layer, cur);
      const std::size_t rows = ws[0];
      const std::size_t fan_in = shape_size(ws) / rows;
      Rng rng = root.split(i);
      std::vector<double> w(rows * fan_in);
      const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : w) v = rng.normal() * scale;
      if (scheme == InitScheme::orthonormal) orthonormalize(w, rows, fan_in);
      params.emplace(l.name, LayerParams{Tensor(ws, std::move(w)), Tensor(Shape{rows})});
    }
    cur = output_shape(l.layer, cur);
  }
  return Network(spec, std::move(params), InitRecord{seed, scheme});
}

void validate_image(const Network& net, const Tensor& image) {
  if (image.shape() != net.spec().input_shape)
    throw ShapeError("image shape " + shape_string(image.shape()) + " expected " +
                     shape_string(net.spec().input_shape));
  require_finite(image, "image");
  for (double v : image.data())
    if (v < 0.0 || v > 255.0) throw PreconditionError("image pixel outside [0, 255]");
}

ActivationTrace forward_trace(const Network& net, const Tensor& image) {
  validate_image(net, image);
  ActivationTrace trace;
  Tensor cur = image;
  for (const auto& l : net.spec().layers) {
    cur = layer_forward(l.layer, cur, net.params(l.name));
    trace.add(l.name, cur);
  }
  if (net.spec().head_classes) trace.scores = cur;
  return trace;
}

Tensor representation(const Network& net, const Tensor& image, const std::string& layer) {
  validate_image(net, image);
  const std::size_t last = net.spec().index_of(layer);
  Tensor cur = image;
  for (std::size_t i = 0; i <= last; ++i) {
    const auto& l = net.spec().layers[i];
    cur = layer_forward(l.layer, cur, net.params(l.name));
  }
  return cur.flattened();
}

Linearization::Linearization(const Network& net, const Tensor& image, const std::string& layer)
    : net_(&net), last_(net.spec().index_of(layer)) {
  if (image.shape() != net.spec().input_shape)
    throw ShapeError("image shape " + shape_string(image.shape()) + " expected " +
                     shape_string(net.spec().input_shape));
  inputs_.reserve(last_ + 1);
  Tensor cur = image;
  for (std::size_t i = 0; i <= last_; ++i) {
    const auto& l = net.spec().layers[i];
    Tensor next = layer_forward(l.layer, cur, net.params(l.name));
    inputs_.push_back(std::move(cur));
    cur = std::move(next);
  }
  value_ = cur.flattened();
}

Tensor Linearization::vjp(const Tensor& cotangent) const {
  if (cotangent.size() != value_.size())
    throw ShapeError("representation vjp: cotangent length " + std::to_string(cotangent.size()) +
                     " expected " + std::to_string(value_.size()));
  const auto& layers = net_->spec().layers;
  const Shape out_shape = output_shape(layers[last_].layer, inputs_[last_].shape());
  Tensor g = cotangent.reshaped(out_shape);
  for (std::size_t i = last_ + 1; i-- > 0;) {
    const auto& l = layers[i];
    g = layer_vjp(l.layer, inputs_[i], net_->params(l.name), g);
  }
  return g;
}

Tensor Linearization::jvp(const Tensor& tangent) const {
  if (tangent.shape() != inputs_.front().shape())
    throw ShapeError("representation jvp: tangent shape " + shape_string(tangent.shape()) +
                     " expected " + shape_string(inputs_.front().shape()));
  const auto& layers = net_->spec().layers;
  Tensor t = tangent;
  for (std::size_t i = 0; i <= last_; ++i) {
    const auto& l = layers[i];
    t = layer_jvp(l.layer, inputs_[i], net_->params(l.name), t);
  }
  return t.flattened();
}

Tensor representation_vjp(const Network& net, const Tensor& image, const std::string& layer,
                          const Tensor& cotangent) {
  validate_image(net, image);
  return Linearization(net, image, layer).vjp(cotangent);
}

Tensor representation_jvp(const Network& net, const Tensor& image, const std::string& layer,
                          const Tensor& tangent) {
  validate_image(net, image);
  return Linearization(net, image, layer).jvp(tangent);
}

std::size_t argmax(std::span<const double> scores) {
  if (scores.empty()) throw ShapeError("argmax of empty scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

Classification classify(const Network& net, const Tensor& image) {
  if (!net.spec().head_classes) throw SpecError("network has no classification head");
  const auto& last = net.spec().layers.back().name;
  Tensor scores = representation(net, image, last);
  const std::size_t label = argmax(scores.data());
  return {label, std::move(scores)};
}

double cross_entropy(const Tensor& scores, std::size_t label, Tensor* grad) {
  if (label >= scores.size()) throw PreconditionError("label out of range");
  double m = scores[0];
  for (double v : scores.data()) m = std::max(m, v);
  double z = 0.0;
  for (double v : scores.data()) z += std::exp(v - m);
  const double lse = m + std::log(z);
  if (grad) {
    *grad = Tensor(scores.shape());
    for (std::size_t i = 0; i < scores.size(); ++i) (*grad)[i] = std::exp(scores[i] - lse);
    (*grad)[label] -= 1.0;
  }
  return lse - scores[label];
}

// --- canonical text spec -------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw SpecError("bad number '" + s + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw SpecError("bad integer '" + s + "'");
  return v;
}

std::map<std::string, std::string> parse_kv(std::istringstream& is, const std::string& line) {
  std::map<std::string, std::string> kv;
  std::string tok;
  while (is >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) throw SpecError("expected key=value in line '" + line + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

const std::string& need(const std::map<std::string, std::string>& kv, const std::string& key,
                        const std::string& line) {
  auto it = kv.find(key);
  if (it == kv.end()) throw SpecError("missing '" + key + "' in line '" + line + "'");
  return it->second;
}

}  // namespace

std::string spec_text(const NetworkSpec& spec, const InitRecord& init) {
  std::ostringstream os;
  os << "input";
  for (auto d : spec.input_shape) os << ' ' << d;
  os << '\n';
  os << "init seed=" << init.seed << " scheme=" << to_string(init.scheme) << " rng=" << Rng::kName
     << '\n';
  if (spec.head_classes) os << "head classes=" << *spec.head_classes << '\n';
  for (const auto& nl : spec.layers) {
    const auto& l = nl.layer;
    os << nl.name << ' ' << to_string(l.kind);
    switch (l.kind) {
      case LayerKind::conv2d:
        os << " out=" << l.out_channels << " kernel=" << l.kernel << " stride=" << l.stride
           << " pad=" << l.pad;
        break;
      case LayerKind::maxpool:
        os << " window=" << l.window << " stride=" << l.pool_stride;
        break;
      case LayerKind::crossnorm:
        os << " k=" << fmt_double(l.norm_k) << " alpha=" << fmt_double(l.norm_alpha)
           << " beta=" << fmt_double(l.norm_beta) << " size=" << l.norm_size;
        break;
      case LayerKind::fullyconnected:
        os << " out=" << l.out_features;
        break;
      case LayerKind::relu:
        break;
    }
    os << '\n';
  }
  return os.str();
}

NetworkSpec parse_spec_text(const std::string& text, InitRecord* init) {
  NetworkSpec spec;
  std::istringstream lines(text);
  std::string line;
  bool have_input = false;
  while (std::getline(lines, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string name;
    is >> name;
    if (name.empty()) continue;
    if (name == "input") {
      std::string tok;
      while (is >> tok) spec.input_shape.push_back(parse_uint(tok));
      have_input = true;
      continue;
    }
    if (name == "init") {
      auto kv = parse_kv(is, line);
      if (init) {
        init->seed = parse_uint(need(kv, "seed", line));
        init->scheme = parse_init_scheme(need(kv, "scheme", line));
      }
      if (auto it = kv.find("rng"); it != kv.end() && it->second != Rng::kName)
        throw SpecError("unsupported random generator '" + it->second + "'");
      continue;
    }
    if (name == "head") {
      auto kv = parse_kv(is, line);
      spec.head_classes = parse_uint(need(kv, "classes", line));
      continue;
    }
    std::string kind_name;
    if (!(is >> kind_name)) throw SpecError("missing layer kind in line '" + line + "'");
    const LayerKind kind = parse_layer_kind(kind_name);
    auto kv = parse_kv(is, line);
    LayerPrimitive l;
    switch (kind) {
      case LayerKind::conv2d:
        l = LayerPrimitive::conv2d(parse_uint(need(kv, "out", line)),
                                   parse_uint(need(kv, "kernel", line)),
                                   kv.count("stride") ? parse_uint(kv["stride"]) : 1,
                                   kv.count("pad") ? parse_uint(kv["pad"]) : 0);
        break;
      case LayerKind::relu:
        l = LayerPrimitive::relu();
        break;
      case LayerKind::maxpool: {
        const auto window = parse_uint(need(kv, "window", line));
        l = LayerPrimitive::maxpool(window, kv.count("stride") ? parse_uint(kv["stride"]) : window);
        break;
      }
      case LayerKind::crossnorm:
        l = LayerPrimitive::crossnorm(kv.count("k") ? parse_double(kv["k"]) : 2.0,
                                      kv.count("alpha") ? parse_double(kv["alpha"]) : 1e-4,
                                      kv.count("beta") ? parse_double(kv["beta"]) : 0.75,
                                      kv.count("size") ? parse_uint(kv["size"]) : 5);
        break;
      case LayerKind::fullyconnected:
        l = LayerPrimitive::fully_connected(parse_uint(need(kv, "out", line)));
        break;
    }
    spec.layers.push_back({name, l});
  }
  if (!have_input) throw SpecError("spec has no input line");
  spec.validate();
  return spec;
}

// --- FADVNET binary format -------------------------------------------------

namespace {
constexpr std::string_view kNetMagic = "FADVNET";
constexpr char kNetVersion = '1';
}  // namespace

std::string encode_network(const Network& net) {
  detail::ByteWriter w;
  w.raw(kNetMagic);
  w.raw(std::string_view(&kNetVersion, 1));
  const std::string text = spec_text(net.spec(), net.init_record());
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.raw(text);
  std::vector<std::pair<std::string, const Tensor*>> blobs;
  for (const auto& l : net.spec().layers) {
    if (const LayerParams* p = net.params(l.name)) {
      blobs.emplace_back(l.name + "/weight", &p->weight);
      blobs.emplace_back(l.name + "/bias", &p->bias);
    }
  }
  w.u32(static_cast<std::uint32_t>(blobs.size()));
  for (const auto& [name, t] : blobs) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    detail::write_tensor_body(w, *t);
  }
  w.append_crc();
  return std::move(w.bytes());
}

Network decode_network(const std::string& bytes) {
  if (bytes.size() < 8 || std::string_view(bytes).substr(0, 7) != kNetMagic)
    throw FormatError("not a FADVNET file (bad magic)");
  if (bytes[7] != kNetVersion) {
    const int found = static_cast<unsigned char>(bytes[7]) - '0';
    throw VersionError("unsupported FADVNET version " + std::to_string(found) + " (expected " +
                           std::string(1, kNetVersion) + ")",
                       found, kNetVersion - '0');
  }
  const auto payload = detail::verify_crc(bytes, "FADVNET");
  detail::ByteReader r(payload, "FADVNET");
  r.raw(8);
  const std::uint32_t text_len = r.u32();
  const std::string text(r.raw(text_len));
  InitRecord init;
  NetworkSpec spec = parse_spec_text(text, &init);
  const std::uint32_t count = r.u32();
  std::map<std::string, LayerParams> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    const std::string name(r.raw(name_len));
    Tensor t = detail::read_tensor_body(r);
    const auto slash = name.rfind('/');
    if (slash == std::string::npos) throw CorruptFileError("FADVNET: bad blob name '" + name + "'");
    const std::string layer = name.substr(0, slash);
    const std::string part = name.substr(slash + 1);
    if (part == "weight")
      params[layer].weight = std::move(t);
    else if (part == "bias")
      params[layer].bias = std::move(t);
    else
      throw CorruptFileError("FADVNET: bad blob name '" + name + "'");
  }
  if (r.remaining() != 0) throw CorruptFileError("FADVNET: trailing bytes");
  return Network(std::move(spec), std::move(params), init);
}

void save_network(const Network& net, const std::filesystem::path& path) {
  detail::write_file(path, encode_network(net));
}

Network load_network(const std::filesystem::path& path) {
  return decode_network(detail::read_file(path));
}

}  // namespace fadv
