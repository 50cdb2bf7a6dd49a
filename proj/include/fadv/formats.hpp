#pragma once

#include <filesystem>
#include <string>

#include "fadv/tensor.hpp"

namespace fadv {

/// Lossless tensor file: "FTNS1", dimension count, dimensions (u32 LE),
/// float64 LE payload, CRC32 of everything before it.
std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::string& bytes);
void write_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor read_tensor(const std::filesystem::path& path);

/// Binary PPM (P6) of a 3xHxW tensor; values are rounded half away from zero
/// and clamped to [0, 255].
std::string encode_ppm(const Tensor& image);
Tensor decode_ppm(const std::string& bytes);
void write_ppm(const Tensor& image, const std::filesystem::path& path);
Tensor read_ppm(const std::filesystem::path& path);

/// Dispatches on the file extension: .ppm is PPM, anything else FTNS1.
Tensor read_image(const std::filesystem::path& path);
void write_image(const Tensor& image, const std::filesystem::path& path);

}  // namespace fadv
