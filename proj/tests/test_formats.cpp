#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fadv/corpus.hpp"
#include "fadv/error.hpp"
#include "fadv/formats.hpp"
#include "test_util.hpp"

using namespace fadv;
using fadv::test::bit_equal;
using fadv::test::random_tensor;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("fadv_test_formats_" + name);
}

}  // namespace

TEST_CASE("FTNS1") {
  Rng rng(1);
  for (const Shape& s : {Shape{7}, Shape{3, 4, 5}, Shape{2, 1, 1, 3}}) {
    const Tensor t = random_tensor(rng, s, -1e6, 1e6);
    const std::string bytes = encode_tensor(t);
    CHECK(bytes.substr(0, 5) == "FTNS1");
    CHECK(bit_equal(decode_tensor(bytes), t));
  }
  CHECK_THROWS_AS(encode_tensor(Tensor(Shape{})), ShapeError);
  const Tensor t = random_tensor(rng, {3, 8, 8});
  const auto path = temp_path("t.ftns");
  write_tensor(t, path);
  CHECK(bit_equal(read_tensor(path), t));
  CHECK(bit_equal(read_image(path), t));

  std::string bytes = encode_tensor(t);
  SUBCASE("flipped payload bit") {
    bytes[40] ^= 0x10;
    CHECK_THROWS_AS(decode_tensor(bytes), CorruptFileError);
  }
  SUBCASE("truncated") { CHECK_THROWS_AS(decode_tensor(bytes.substr(0, bytes.size() - 9)), CorruptFileError); }
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    CHECK_THROWS_AS(decode_tensor(bytes), FormatError);
  }
  SUBCASE("other version") {
    bytes[4] = '2';
    CHECK_THROWS_AS(decode_tensor(bytes), VersionError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_tensor(temp_path("does-not-exist")), IoError); }
}

TEST_CASE("PPM") {
  Tensor img({3, 2, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>((i * 37) % 256);
  const std::string bytes = encode_ppm(img);
  CHECK(bytes.rfind("P6\n3 2\n255\n", 0) == 0);
  CHECK(decode_ppm(bytes) == img);

  Tensor one({3, 1, 1}, {3.6, 2.5, -7.0});
  const std::string b1 = encode_ppm(one);
  const std::string px = b1.substr(b1.size() - 3);
  CHECK(static_cast<unsigned char>(px[0]) == 4);
  CHECK(static_cast<unsigned char>(px[1]) == 3);
  CHECK(static_cast<unsigned char>(px[2]) == 0);
  CHECK(decode_ppm(encode_ppm(Tensor({3, 1, 1}, {300.0, 254.5, 0.49}))) == Tensor({3, 1, 1}, {255, 255, 0}));

  // Interleaved RGB on disk.
  Tensor rgb({3, 1, 2}, {1, 2, 10, 20, 100, 200});
  const std::string b2 = encode_ppm(rgb);
  CHECK(b2.substr(b2.size() - 6) == std::string("\x01\x0a\x64\x02\x14\xc8"));

  CHECK(decode_ppm("P6\n# comment\n1 1\n255\n\x05\x06\x07") == Tensor({3, 1, 1}, {5, 6, 7}));
  CHECK_THROWS_AS(decode_ppm("P5\n1 1\n255\n\x05"), FormatError);
  CHECK_THROWS_AS(decode_ppm("P6\n2 1\n255\n\x05\x06\x07"), FormatError);
  CHECK_THROWS_AS(decode_ppm("P6\n1 1\n65535\n\x05\x06\x07"), FormatError);
  CHECK_THROWS_AS(encode_ppm(Tensor({1, 2, 2})), ShapeError);

  const auto path = temp_path("i.ppm");
  write_image(img, path);
  CHECK(read_image(path) == img);
}

TEST_CASE("FCRP1 corpus files") {
  const Corpus c = generate_corpus(4, 3, 5, {3, 8, 8});
  CHECK(c.size() == 15);
  CHECK(c.provenance == CorpusProvenance{4, 3, 5});
  const std::string bytes = encode_corpus(c);
  CHECK(bytes.substr(0, 5) == "FCRP1");
  const Corpus back = decode_corpus(bytes);
  CHECK(back == c);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(bit_equal(back.images[i], c.images[i]));

  const auto path = temp_path("c.fcrp");
  save_corpus(c, path);
  CHECK(load_corpus(path) == c);

  std::string bad = bytes;
  bad[bad.size() / 2] ^= 0x01;
  CHECK_THROWS_AS(decode_corpus(bad), CorruptFileError);
  CHECK_THROWS_AS(decode_corpus(bytes.substr(0, 30)), CorruptFileError);
  bad = bytes;
  bad[4] = '9';
  CHECK_THROWS_AS(decode_corpus(bad), VersionError);
}

TEST_CASE("corpus generation") {
  SUBCASE("deterministic, byte-identical") {
    CHECK(encode_corpus(generate_corpus(11)) == encode_corpus(generate_corpus(11)));
    CHECK(encode_corpus(generate_corpus(11)) != encode_corpus(generate_corpus(12)));
  }
  SUBCASE("counts, labels and pixel range") {
    const Corpus c = generate_corpus(11);
    CHECK(c.size() == 400);
    CHECK(c.image_shape == Shape{3, 32, 32});
    for (std::size_t k = 0; k < 10; ++k) CHECK(c.members(k).size() == 40);
    for (const auto& img : c.images)
      for (double v : img.data()) CHECK((v >= 0.0 && v <= 255.0));
    CHECK(family_names().size() == 10);
  }
  SUBCASE("within-class distances are smaller than between-class distances") {
    const Corpus c = generate_corpus(1);
    double within = 0, between = 0;
    std::size_t nw = 0, nb = 0;
    for (std::size_t i = 0; i < c.size(); ++i)
      for (std::size_t j = i + 1; j < c.size(); ++j) {
        const double d = distance(c.images[i].data(), c.images[j].data());
        if (c.labels[i] == c.labels[j]) within += d, ++nw;
        else between += d, ++nb;
      }
    within /= static_cast<double>(nw);
    between /= static_cast<double>(nb);
    MESSAGE("mean within-class " << within << ", between-class " << between);
    CHECK(within < between);
  }
  SUBCASE("invalid requests") {
    CHECK_THROWS_AS(generate_corpus(1, 0, 5), PreconditionError);
    CHECK_THROWS_AS(generate_corpus(1, 2, 0), PreconditionError);
  }
}
