#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "fadv/error.hpp"
#include "fadv/tensor.hpp"

namespace fadv::detail {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

std::uint32_t crc32_of(std::string_view bytes);

class ByteWriter {
 public:
  void raw(std::string_view s) { out_.append(s); }
  void u32(std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out_.append(b, 4);
  }
  void f64(double v) {
    char b[8];
    std::memcpy(b, &v, 8);
    out_.append(b, 8);
  }
  void append_crc() { u32(crc32_of(out_)); }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string what) : in_(bytes), what_(std::move(what)) {}

  std::string_view raw(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, in_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    double v;
    std::memcpy(&v, in_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw CorruptFileError(what_ + ": truncated data");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
  std::string what_;
};

/// Checks the trailing CRC32 and returns the payload before it.
std::string_view verify_crc(std::string_view bytes, const std::string& what);

void write_tensor_body(ByteWriter& w, const Tensor& t);
Tensor read_tensor_body(ByteReader& r);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace fadv::detail
