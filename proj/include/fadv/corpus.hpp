#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fadv/tensor.hpp"

namespace fadv {

struct CorpusProvenance {
  std::uint64_t seed = 0;
  std::size_t classes = 0;
  std::size_t per_class = 0;

  friend bool operator==(const CorpusProvenance&, const CorpusProvenance&) = default;
};

/// Labeled image set; images are stored class by class.
struct Corpus {
  Shape image_shape;
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  CorpusProvenance provenance;

  std::size_t size() const { return images.size(); }
  /// Indices of all images with the given label, ascending.
  std::vector<std::size_t> members(std::size_t label) const;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

/// Names of the parametric image families; class c uses family c % 10.
const std::vector<std::string>& family_names();

/// Deterministic synthetic corpus. Each class is one parametric family
/// (gratings, radial gradients, blob constellations, ...) with a class
/// palette and prototype parameters; members jitter around the prototype.
Corpus generate_corpus(std::uint64_t seed, std::size_t classes = 10, std::size_t per_class = 40,
                       const Shape& shape = {3, 32, 32});

/// "FCRP1", class count, per-class count, shape, seed, then per image
/// (class id, FTNS1 blob), then CRC32.
std::string encode_corpus(const Corpus& corpus);
Corpus decode_corpus(const std::string& bytes);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace fadv
