#include "fadv/formats.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "binary.hpp"
#include "fadv/error.hpp"

namespace fadv {

namespace {
constexpr std::string_view kTensorMagic = "FTNS1";
}

std::string encode_tensor(const Tensor& t) {
  detail::ByteWriter w;
  w.raw(kTensorMagic);
  detail::write_tensor_body(w, t);
  w.append_crc();
  return std::move(w.bytes());
}

Tensor decode_tensor(const std::string& bytes) {
  if (bytes.size() < 5 || std::string_view(bytes).substr(0, 4) != kTensorMagic.substr(0, 4))
    throw FormatError("not an FTNS file (bad magic)");
  if (bytes[4] != kTensorMagic[4])
    throw VersionError(std::string("unsupported FTNS version ") + bytes[4] + " (expected 1)",
                       bytes[4] - '0', 1);
  const auto payload = detail::verify_crc(bytes, "FTNS1");
  detail::ByteReader r(payload, "FTNS1");
  r.raw(kTensorMagic.size());
  Tensor t = detail::read_tensor_body(r);
  if (r.remaining() != 0) throw CorruptFileError("FTNS1: trailing bytes");
  return t;
}

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  detail::write_file(path, encode_tensor(t));
}

Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(detail::read_file(path)); }

std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.shape()[0] != 3)
    throw ShapeError("PPM needs a 3xHxW tensor, got " + shape_string(image.shape()));
  require_finite(image, "PPM image");
  const std::size_t h = image.shape()[1], w = image.shape()[2];
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + 3 * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        // std::round rounds halves away from zero.
        const double v = std::clamp(std::round(image.at(c, y, x)), 0.0, 255.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
      }
  return out;
}

namespace {

std::size_t ppm_header_field(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t v = 0, digits = 0;
  while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
    if (++digits > 9) throw FormatError("PPM: header field too large");
  }
  if (digits == 0) throw FormatError("PPM: malformed header");
  return v;
}

}  // namespace

Tensor decode_ppm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw FormatError("not a PPM file (bad magic)");
  if (bytes[1] != '6') throw FormatError("unsupported PPM variant P" + std::string(1, bytes[1]));
  std::size_t pos = 2;
  const std::size_t w = ppm_header_field(bytes, pos);
  const std::size_t h = ppm_header_field(bytes, pos);
  const std::size_t maxval = ppm_header_field(bytes, pos);
  if (w == 0 || h == 0) throw FormatError("PPM: zero image size");
  if (maxval != 255) throw FormatError("PPM: only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw FormatError("PPM: malformed header");
  ++pos;
  if (bytes.size() - pos != 3 * w * h) throw CorruptFileError("PPM: pixel data has wrong length");
  Tensor t(Shape{3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) t.at(c, y, x) = static_cast<unsigned char>(bytes[pos++]);
  return t;
}

void write_ppm(const Tensor& image, const std::filesystem::path& path) {
  detail::write_file(path, encode_ppm(image));
}

Tensor read_ppm(const std::filesystem::path& path) { return decode_ppm(detail::read_file(path)); }

Tensor read_image(const std::filesystem::path& path) {
  return path.extension() == ".ppm" ? read_ppm(path) : read_tensor(path);
}

void write_image(const Tensor& image, const std::filesystem::path& path) {
  if (path.extension() == ".ppm")
    write_ppm(image, path);
  else
    write_tensor(image, path);
}

}  // namespace fadv
