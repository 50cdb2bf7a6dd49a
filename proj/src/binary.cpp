#include "binary.hpp"

#include <zlib.h>

#include <fstream>
#include <iterator>

namespace fadv::detail {

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string_view verify_crc(std::string_view bytes, const std::string& what) {
  if (bytes.size() < 4) throw CorruptFileError(what + ": truncated data");
  const auto payload = bytes.substr(0, bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + payload.size(), 4);
  if (crc32_of(payload) != stored) throw CorruptFileError(what + ": CRC mismatch");
  return payload;
}

void write_tensor_body(ByteWriter& w, const Tensor& t) {
  if (t.rank() == 0 || t.rank() > 8)
    throw ShapeError("tensor files hold rank 1 to 8, got " + shape_string(t.shape()));
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.data()) w.f64(v);
}

Tensor read_tensor_body(ByteReader& r) {
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw CorruptFileError("tensor: bad dimension count " + std::to_string(rank));
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = r.u32();
    if (d == 0) throw CorruptFileError("tensor: zero dimension");
    n *= d;
  }
  if (n > r.remaining() / 8) throw CorruptFileError("tensor: truncated data");
  std::vector<double> data(n);
  for (auto& v : data) v = r.f64();
  return Tensor(std::move(shape), std::move(data));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace fadv::detail
