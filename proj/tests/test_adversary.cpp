#include "doctest.h"
#include "fadv/adversary.hpp"
#include "fadv/corpus.hpp"
#include "fadv/error.hpp"
#include "test_util.hpp"

using namespace fadv;
using fadv::test::bit_equal;
using fadv::test::random_image;
using fadv::test::random_tensor;
using fadv::test::rel_error;

namespace {

const Network& refnet() {
  static const Network net = init_network(refnet32_spec(), 7, InitScheme::orthonormal);
  return net;
}

const Corpus& corpus() {
  static const Corpus c = generate_corpus(1);
  return c;
}

// Seeded (source, guide) index pairs from different classes.
std::vector<std::pair<std::size_t, std::size_t>> pairs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const auto& c = corpus();
  while (out.size() < n) {
    const std::size_t s = rng.below(c.size()), g = rng.below(c.size());
    if (c.labels[s] != c.labels[g]) out.emplace_back(s, g);
  }
  return out;
}

Network single_fc(std::size_t width, InitScheme scheme = InitScheme::orthonormal) {
  NetworkSpec s;
  s.input_shape = {1, 4, 4};
  s.layers = {{"fc", LayerPrimitive::fully_connected(width)}};
  return init_network(s, 3, scheme);
}

void check_result_invariants(const AdvResult& r, const Tensor& source, double delta) {
  CHECK(norm_inf(r.perturbation) <= delta + 1e-9);
  for (double v : r.adversarial_image.data()) CHECK((v >= 0.0 && v <= 255.0));
  CHECK(bit_equal(r.perturbation, r.adversarial_image - source));
  for (std::size_t i = 1; i < r.trajectory.size(); ++i)
    CHECK(r.trajectory[i].objective <= r.trajectory[i - 1].objective);
  CHECK(r.final_ratio >= 0.0);
  CHECK(r.trajectory.size() == r.iterations + 1);
}

}  // namespace

TEST_CASE("config validation") {
  AdvConfig c;
  c.delta = -1;
  CHECK_THROWS_AS(c.validate(), PreconditionError);
  c.delta = 300;
  CHECK_THROWS_AS(c.validate(), PreconditionError);
  c = AdvConfig{};
  c.max_iterations = 0;
  CHECK_THROWS_AS(c.validate(), PreconditionError);
  CHECK_NOTHROW(AdvConfig{}.validate());
  CHECK(AdvConfig{}.delta == 10.0);
  CHECK(AdvConfig{}.max_iterations == 500);
}

TEST_CASE("feature_opt degenerate inputs") {
  const auto& img = corpus().images[0];
  CHECK_THROWS_AS(feature_opt(refnet(), img, img, AdvConfig{}), DegenerateError);
  AdvConfig zero;
  zero.delta = 0.0;
  const AdvResult r = feature_opt(refnet(), img, corpus().images[200], zero);
  CHECK(r.adversarial_image == img);
  CHECK(r.final_ratio == 1.0);
  CHECK(r.iterations == 0);
  CHECK(r.termination == Termination::converged_grad);
}

TEST_CASE("feature_opt reaches a guide inside the box") {
  Rng rng(1);
  SUBCASE("injective linear map: the optimum is the guide") {
    const Network net = single_fc(20);  // 16 inputs -> 20 outputs
    const Tensor src = random_image(rng, {1, 4, 4});
    Tensor guide = src;
    for (auto& v : guide.data()) v += rng.uniform(-0.5, 0.5);
    AdvConfig cfg;
    cfg.layer = "fc";
    const AdvResult r = feature_opt(net, src, guide, cfg);
    CHECK(r.final_objective < 1e-12);
    CHECK(norm_inf(r.adversarial_image - guide) < 1e-6);
  }
  SUBCASE("refnet-32") {
    const Tensor src = corpus().images[17];
    Tensor guide = src;
    for (auto& v : guide.data()) v = std::clamp(v + rng.uniform(-0.5, 0.5), 0.0, 255.0);
    AdvConfig cfg;
    cfg.layer = "fc2";
    cfg.grad_tol = 1e-12;
    const AdvResult r = feature_opt(refnet(), src, guide, cfg);
    CHECK(r.final_objective < 1e-12);
    check_result_invariants(r, src, cfg.delta);
  }
}

TEST_CASE("feature_opt on corpus pairs") {
  AdvConfig cfg;
  for (const auto& [s, g] : pairs(3, 7)) {
    const Tensor& src = corpus().images[s];
    const AdvResult r = feature_opt(refnet(), src, corpus().images[g], cfg);
    check_result_invariants(r, src, cfg.delta);
    CHECK(r.final_ratio < 0.5);
    const AdvResult again = feature_opt(refnet(), src, corpus().images[g], cfg);
    CHECK(bit_equal(again.adversarial_image, r.adversarial_image));
    CHECK(again.final_ratio == r.final_ratio);
    CHECK(again.trajectory.size() == r.trajectory.size());
    // The ratio reported matches the representation of the returned image.
    const Tensor ra = representation(refnet(), r.adversarial_image, cfg.layer);
    const Tensor rg = representation(refnet(), corpus().images[g], cfg.layer);
    const Tensor rs = representation(refnet(), src, cfg.layer);
    CHECK(r.final_ratio == doctest::Approx(distance(ra.data(), rg.data()) / distance(rs.data(), rg.data())));
  }
}

TEST_CASE("feature_linear") {
  SUBCASE("zero displacement gives the true objective") {
    const auto& src = corpus().images[5];
    const auto& guide = corpus().images[305];
    AdvConfig cfg;
    cfg.max_iterations = 5;
    const AdvResult r = feature_linear(refnet(), src, guide, cfg);
    const double d2 = squared_distance(representation(refnet(), src, "fc2").data(),
                                       representation(refnet(), guide, "fc2").data());
    CHECK(r.trajectory[0].objective == d2);
    CHECK(r.trajectory[0].ratio == 1.0);
    check_result_invariants(r, src, cfg.delta);
  }
  SUBCASE("matches feature_opt on an exactly linear network") {
    const Network net = single_fc(6, InitScheme::gaussian);
    Rng rng(2);
    const Tensor src = random_image(rng, {1, 4, 4});
    const Tensor guide = random_image(rng, {1, 4, 4});
    AdvConfig cfg;
    cfg.layer = "fc";
    const AdvResult a = feature_opt(net, src, guide, cfg);
    const AdvResult b = feature_linear(net, src, guide, cfg);
    REQUIRE(a.trajectory.size() == b.trajectory.size());
    for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
      CHECK(rel_error(a.trajectory[i].objective, b.trajectory[i].objective) < 1e-10);
      CHECK(std::abs(a.trajectory[i].ratio - b.trajectory[i].ratio) < 1e-10);
    }
    CHECK(norm_inf(a.adversarial_image - b.adversarial_image) < 1e-10);
  }
}

TEST_CASE("feat_fgrad") {
  SUBCASE("zero gradient returns the source") {
    NetworkSpec s;
    s.input_shape = {1, 4, 4};
    s.layers = {{"fc", LayerPrimitive::fully_connected(3)}};
    const Network net(s, {{"fc", LayerParams{Tensor(Shape{3, 16}), Tensor(Shape{3})}}}, {});
    Rng rng(3);
    const Tensor src = random_image(rng, {1, 4, 4});
    CHECK(feat_fgrad(net, src, random_image(rng, {1, 4, 4}), "fc", 10.0) == src);
  }
  SUBCASE("sign-step structure and descent") {
    std::size_t decreased = 0;
    const auto ps = pairs(100, 11);
    for (const auto& [s, g] : ps) {
      const Tensor& src = corpus().images[s];
      const Tensor& guide = corpus().images[g];
      const Tensor adv = feat_fgrad(refnet(), src, guide, "fc2", 10.0);
      for (std::size_t i = 0; i < adv.size(); ++i) {
        const double e = std::abs(adv[i] - src[i]);
        CHECK((std::abs(e - 10.0) < 1e-9 || adv[i] == 0.0 || adv[i] == 255.0 || e == 0.0));
      }
      const Tensor rg = representation(refnet(), guide, "fc2");
      const double before = distance(representation(refnet(), src, "fc2").data(), rg.data());
      const double after = distance(representation(refnet(), adv, "fc2").data(), rg.data());
      decreased += after < before;
    }
    MESSAGE("feat-fgrad decreased the feature distance on " << decreased << "/100 pairs");
    CHECK(decreased >= 95);
  }
}

TEST_CASE("label_fgrad") {
  const auto& src = corpus().images[42];
  CHECK(label_fgrad(refnet(), src, 3, 0.0) == src);
  CHECK_THROWS_AS(label_fgrad(refnet(), src, 10, 5.0), PreconditionError);
  NetworkSpec headless = refnet32_spec(std::nullopt);
  CHECK_THROWS_AS(label_fgrad(init_network(headless, 1, InitScheme::gaussian), src, 1, 5.0), SpecError);

  Rng rng(5);
  std::size_t decreased = 0;
  for (int k = 0; k < 100; ++k) {
    const Tensor& img = corpus().images[rng.below(corpus().size())];
    const std::size_t label = rng.below(10);
    const Tensor adv = label_fgrad(refnet(), img, label, 10.0);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      const double e = std::abs(adv[i] - img[i]);
      CHECK((std::abs(e - 10.0) < 1e-9 || adv[i] == 0.0 || adv[i] == 255.0 || e == 0.0));
    }
    const double before = cross_entropy(classify(refnet(), img).scores, label);
    const double after = cross_entropy(classify(refnet(), adv).scores, label);
    decreased += after < before;
  }
  MESSAGE("label-fgrad decreased the targeted loss on " << decreased << "/100 pairs");
  CHECK(decreased >= 90);
}

TEST_CASE("label_opt") {
  const auto& src = corpus().images[9];
  const std::size_t own = classify(refnet(), src).label;
  CHECK_THROWS_AS(label_opt(refnet(), src, own, AdvConfig{}), PreconditionError);
  CHECK_THROWS_AS(label_opt(refnet(), src, 10, AdvConfig{}), PreconditionError);
  CHECK(label_penalty_grid() == std::vector<double>{1e-3, 1e-2, 1e-1, 1, 10, 100, 1000});

  Rng rng(6);
  std::size_t success = 0;
  AdvConfig cfg;
  for (int k = 0; k < 12; ++k) {
    const Tensor& img = corpus().images[rng.below(corpus().size())];
    const std::size_t label0 = classify(refnet(), img).label;
    std::size_t target = rng.below(9);
    if (target >= label0) ++target;
    try {
      const LabelOptResult r = label_opt(refnet(), img, target, cfg);
      ++success;
      CHECK(classify(refnet(), r.adv.adversarial_image).label == target);
      CHECK(cross_entropy(classify(refnet(), r.adv.adversarial_image).scores, target) <
            cross_entropy(classify(refnet(), img).scores, target));
      CHECK(r.successes >= 1);
      CHECK(r.runs >= 7);
      CHECK(r.runs <= 8);
      for (double v : r.adv.adversarial_image.data()) CHECK((v >= 0.0 && v <= 255.0));
    } catch (const NoAdversaryError& e) {
      CHECK(e.best_margin() <= 0.0);
    }
  }
  MESSAGE("label-opt succeeded on " << success << "/12 pairs");
  CHECK(success >= 1);
}
