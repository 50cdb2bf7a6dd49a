#include "fadv/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "binary.hpp"
#include "fadv/error.hpp"
#include "fadv/formats.hpp"
#include "fadv/rng.hpp"

namespace fadv {

std::vector<std::size_t> Corpus::members(std::size_t label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) out.push_back(i);
  return out;
}

const std::vector<std::string>& family_names() {
  static const std::vector<std::string> names{
      "grating", "radial", "blobs", "checker", "noise-texture",
      "rings",   "ramp",   "dots",  "bars",    "plaid"};
  return names;
}

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;
using Color = std::array<double, 3>;

Color random_color(Rng& rng) { return {rng.uniform(30, 225), rng.uniform(30, 225), rng.uniform(30, 225)}; }

Color jitter(const Color& c, Rng& rng, double s) {
  return {c[0] + s * rng.normal(), c[1] + s * rng.normal(), c[2] + s * rng.normal()};
}

// Class prototype: palette plus a handful of family parameters.
struct Prototype {
  std::size_t family;
  Color a, b;
  double angle, freq, scale;
};

Prototype make_prototype(std::size_t label, Rng rng) {
  Prototype p;
  p.family = label % family_names().size();
  p.a = random_color(rng);
  p.b = random_color(rng);
  p.angle = rng.uniform(0.0, std::numbers::pi);
  p.freq = rng.uniform(2.0, 5.0);
  p.scale = rng.uniform(0.6, 1.4);
  return p;
}

// Scalar pattern in [0, 1] over normalized coordinates.
class Pattern {
 public:
  Pattern(const Prototype& p, Rng& rng) : p_(p) {
    angle_ = p.angle + 0.15 * rng.normal();
    freq_ = p.freq * (1.0 + 0.1 * rng.normal());
    phase_ = rng.uniform(0.0, kTau);
    cx_ = 0.5 + 0.1 * rng.normal();
    cy_ = 0.5 + 0.1 * rng.normal();
    scale_ = p.scale * (1.0 + 0.1 * rng.normal());
    const std::size_t nblobs = 3 + rng.below(4);
    for (std::size_t i = 0; i < nblobs; ++i)
      blobs_.push_back({rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), 0.06 + 0.04 * rng.uniform()});
    for (int i = 0; i < 6; ++i)
      waves_.push_back({rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(0.0, kTau)});
    for (int i = 0; i < 12; ++i) bars_.push_back(rng.uniform());
  }

  double operator()(double u, double v) const {
    const double ca = std::cos(angle_), sa = std::sin(angle_);
    const double along = u * ca + v * sa;
    const double across = -u * sa + v * ca;
    const double r = std::hypot(u - cx_, v - cy_);
    switch (p_.family) {
      case 0:  // oriented grating
        return 0.5 + 0.5 * std::sin(kTau * freq_ * along + phase_);
      case 1:  // radial gradient
        return std::clamp(r / (0.6 * scale_), 0.0, 1.0);
      case 2: {  // blob constellation
        double s = 0.0;
        for (const auto& b : blobs_) {
          const double d2 = (u - b[0]) * (u - b[0]) + (v - b[1]) * (v - b[1]);
          s += std::exp(-d2 / (2.0 * b[2] * b[2]));
        }
        return std::min(1.0, s);
      }
      case 3: {  // checkerboard, softened edges
        const double f = freq_ / 1.5;
        return 0.5 + 0.5 * std::tanh(4.0 * std::sin(kTau * f * along + phase_) *
                                     std::sin(kTau * f * across + phase_));
      }
      case 4: {  // band-limited noise
        double s = 0.0;
        for (const auto& w : waves_) s += std::cos(kTau * (w[0] * u + w[1] * v) + w[2]);
        return std::clamp(0.5 + s / 6.0, 0.0, 1.0);
      }
      case 5:  // concentric rings
        return 0.5 + 0.5 * std::cos(kTau * freq_ * r / scale_ + phase_);
      case 6:  // linear ramp
        return std::clamp(0.5 + (along - 0.5 * (ca + sa)) * scale_, 0.0, 1.0);
      case 7: {  // dot lattice
        const double f = freq_ * 1.2;
        const double du = std::fmod(f * along + phase_ / kTau, 1.0) - 0.5;
        const double dv = std::fmod(f * across + 10.0, 1.0) - 0.5;
        return std::exp(-(du * du + dv * dv) / 0.03);
      }
      case 8: {  // bars of uneven width
        const double pos = std::fmod(along * 3.0 + 10.0 + phase_ / kTau, 1.0);
        const std::size_t k = static_cast<std::size_t>(pos * bars_.size()) % bars_.size();
        return bars_[k];
      }
      default: {  // plaid
        return 0.25 * (2.0 + std::sin(kTau * freq_ * along + phase_) +
                       std::sin(kTau * freq_ * across + 0.5 * phase_));
      }
    }
  }

 private:
  const Prototype& p_;
  double angle_, freq_, phase_, cx_, cy_, scale_;
  std::vector<std::array<double, 3>> blobs_, waves_;
  std::vector<double> bars_;
};

Tensor render(const Prototype& proto, Rng rng, const Shape& shape) {
  const Color a = jitter(proto.a, rng, 8.0);
  const Color b = jitter(proto.b, rng, 8.0);
  const Pattern pattern(proto, rng);
  const std::size_t C = shape[0], H = shape[1], W = shape[2];
  Tensor img(shape);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double t = pattern((x + 0.5) / static_cast<double>(W), (y + 0.5) / static_cast<double>(H));
      for (std::size_t c = 0; c < C; ++c) {
        const double v = a[c % 3] + (b[c % 3] - a[c % 3]) * t + 4.0 * rng.normal();
        img.at(c, y, x) = std::clamp(v, 0.0, 255.0);
      }
    }
  return img;
}

}  // namespace

Corpus generate_corpus(std::uint64_t seed, std::size_t classes, std::size_t per_class,
                       const Shape& shape) {
  if (classes == 0 || per_class == 0) throw PreconditionError("corpus needs classes and members");
  if (shape.size() != 3 || shape_size(shape) == 0)
    throw ShapeError("corpus image shape must be CxHxW, got " + shape_string(shape));
  const Rng root(seed);
  Corpus corpus;
  corpus.image_shape = shape;
  corpus.provenance = {seed, classes, per_class};
  for (std::size_t c = 0; c < classes; ++c) {
    const Rng class_rng = root.split(c);
    const Prototype proto = make_prototype(c, class_rng.split(0));
    for (std::size_t i = 0; i < per_class; ++i) {
      corpus.images.push_back(render(proto, class_rng.split(i + 1), shape));
      corpus.labels.push_back(c);
    }
  }
  return corpus;
}

namespace {
constexpr std::string_view kCorpusMagic = "FCRP1";
}

std::string encode_corpus(const Corpus& corpus) {
  detail::ByteWriter w;
  w.raw(kCorpusMagic);
  w.u32(static_cast<std::uint32_t>(corpus.provenance.classes));
  w.u32(static_cast<std::uint32_t>(corpus.provenance.per_class));
  w.u32(static_cast<std::uint32_t>(corpus.image_shape.size()));
  for (auto d : corpus.image_shape) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(corpus.provenance.seed & 0xffffffffu));
  w.u32(static_cast<std::uint32_t>(corpus.provenance.seed >> 32));
  w.u32(static_cast<std::uint32_t>(corpus.size()));
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(corpus.labels[i]));
    const std::string blob = encode_tensor(corpus.images[i]);
    w.u32(static_cast<std::uint32_t>(blob.size()));
    w.raw(blob);
  }
  w.append_crc();
  return std::move(w.bytes());
}

Corpus decode_corpus(const std::string& bytes) {
  if (bytes.size() < 5 || std::string_view(bytes).substr(0, 4) != kCorpusMagic.substr(0, 4))
    throw FormatError("not an FCRP file (bad magic)");
  if (bytes[4] != kCorpusMagic[4])
    throw VersionError(std::string("unsupported FCRP version ") + bytes[4] + " (expected 1)",
                       bytes[4] - '0', 1);
  const auto payload = detail::verify_crc(bytes, "FCRP1");
  detail::ByteReader r(payload, "FCRP1");
  r.raw(kCorpusMagic.size());
  Corpus c;
  c.provenance.classes = r.u32();
  c.provenance.per_class = r.u32();
  const std::uint32_t rank = r.u32();
  if (rank != 3) throw CorruptFileError("FCRP1: image rank must be 3");
  for (std::uint32_t i = 0; i < rank; ++i) c.image_shape.push_back(r.u32());
  const std::uint64_t lo = r.u32(), hi = r.u32();
  c.provenance.seed = lo | (hi << 32);
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t label = r.u32();
    if (label >= c.provenance.classes) throw CorruptFileError("FCRP1: class id out of range");
    const std::uint32_t len = r.u32();
    Tensor img = decode_tensor(std::string(r.raw(len)));
    if (img.shape() != c.image_shape) throw CorruptFileError("FCRP1: image shape mismatch");
    c.images.push_back(std::move(img));
    c.labels.push_back(label);
  }
  if (r.remaining() != 0) throw CorruptFileError("FCRP1: trailing bytes");
  return c;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  detail::write_file(path, encode_corpus(corpus));
}

Corpus load_corpus(const std::filesystem::path& path) { return decode_corpus(detail::read_file(path)); }

}  // namespace fadv
