#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ctok/errors.hpp"
#include "ctok/rng.hpp"
#include "ctok/semantic.hpp"
#include "fixtures.hpp"

using namespace ctok;

namespace {

const SyntheticGenerator& generator() {
    static const SyntheticGenerator gen;
    return gen;
}

const SyntheticSemanticScorer& scorer() {
    static const SyntheticSemanticScorer s;
    return s;
}

ImageTensor tinted_image(const SyntheticGenerator& gen, const std::array<double, 3>& color) {
    auto scene = fixtures::scene_with(gen, fixtures::separated_slots(gen, 4, 30.0));
    scene.color = color;
    return gen.render(scene);
}

std::array<double, 3> scaled(const std::array<double, 3>& c, double k) {
    return {c[0] * k, c[1] * k, c[2] * k};
}

}  // namespace

TEST_CASE("image tinted with the class colour matches its prompt") {
    const auto& gen = generator();
    for (const std::string cls : {"apples", "zebras", "crows", "beads"}) {
        const auto anchor = scorer().anchor(class_prompt(cls));
        const auto img = tinted_image(gen, scaled(anchor, 0.5));
        CHECK(semantic_score(scorer(), img, class_prompt(cls)).cosine >= 0.9);
    }
}

TEST_CASE("orthogonal anchor scores near zero") {
    const auto& gen = generator();
    const auto img = tinted_image(gen, {0.6, 0.3, 0.2});
    const auto s = SyntheticSemanticScorer::signature(img);
    const std::array<double, 3> ortho{s[1], -s[0], 0.0};
    CHECK(std::abs(SyntheticSemanticScorer::score_against(img, ortho).cosine) <= 0.1);
}

TEST_CASE("blank image scores zero") {
    CHECK(semantic_score(scorer(), ImageTensor(16, 16, 3), "A photo of apples").cosine == 0.0);
}

TEST_CASE("score depends only on pixels") {
    const auto& gen = generator();
    auto scene = fixtures::scene_with(gen, fixtures::separated_slots(gen, 5, 20.0));
    scene.color = {0.4, 0.5, 0.6};
    const auto img = gen.render(scene);
    const auto copy = img;
    CHECK(scorer().score(img, "A photo of apples").cosine == scorer().score(copy, "A photo of apples").cosine);

    // Moving pixels around keeps the channel sums, so the score is unchanged.
    ImageTensor flipped(img.height(), img.width(), 3);
    for (int r = 0; r < img.height(); ++r) {
        for (int c = 0; c < img.width(); ++c) {
            for (int ch = 0; ch < 3; ++ch) flipped.at(img.height() - 1 - r, c, ch) = img.at(r, c, ch);
        }
    }
    CHECK(scorer().score(flipped, "A photo of apples").cosine ==
          doctest::Approx(scorer().score(img, "A photo of apples").cosine).epsilon(1e-12));
}

TEST_CASE("penalty examples") {
    CHECK(semantic_penalty(SemanticScore{1.0}) == 0.0);
    CHECK(semantic_penalty(SemanticScore{0.8}) == doctest::Approx(0.2));
    CHECK(semantic_penalty(SemanticScore{-1.0}) == doctest::Approx(2.0));
}

TEST_CASE("penalty falls as the class colour takes over the image") {
    const auto& gen = generator();
    const auto anchor = scorer().anchor(class_prompt("oranges"));
    const std::array<double, 3> other{0.1, 0.2, 0.9};
    double prev = 10.0;
    for (double t = 0.0; t <= 1.0 + 1e-12; t += 0.1) {
        std::array<double, 3> color;
        for (int c = 0; c < 3; ++c) color[c] = 0.4 * ((1 - t) * other[c] + t * anchor[c]);
        const double p = semantic_penalty(scorer(), tinted_image(gen, color), "oranges");
        CHECK(p <= prev + 1e-12);
        prev = p;
    }
    CHECK(prev <= 1e-9);
}

TEST_CASE("clip score examples") {
    CHECK(clip_s(SemanticScore{0.5}, 2.5) == 1.25);
    CHECK(clip_s(SemanticScore{0.0}) == 0.0);
    CHECK(clip_s(SemanticScore{-0.4}) == 0.0);
    CHECK(clip_s(SemanticScore{1.0}) == 2.5);
    CHECK_THROWS_AS(clip_s(SemanticScore{0.5}, -1.0), InvalidInput);
}

TEST_CASE("clip score stays within zero and the weight") {
    Sampler s(21);
    for (int i = 0; i < 1000; ++i) {
        const double w = s.uniform(0.0, 5.0);
        const double v = clip_s(SemanticScore{s.uniform(-1.0, 1.0)}, w);
        CHECK(v >= 0.0);
        CHECK(v <= w);
    }
}

TEST_CASE("semantic score rejects empty text") {
    CHECK_THROWS_AS(semantic_score(scorer(), ImageTensor(4, 4, 3), ""), InvalidInput);
}

TEST_CASE("class prompt") {
    CHECK(class_prompt("apples") == "A photo of apples");
}

TEST_CASE("score validation") {
    CHECK_FALSE(validate(SemanticScore{0.3}));
    CHECK(validate(SemanticScore{1.5}));
    CHECK(validate(SemanticScore{std::nan("")}));
}

TEST_CASE("penalty gradient matches central differences") {
    Sampler s(22);
    for (int trial = 0; trial < 5; ++trial) {
        ImageTensor img(16, 16, 3);
        for (auto& v : img.data()) v = s.uniform(0.1, 0.9);
        const std::string cls = trial % 2 ? "apples" : "zebras";
        const auto g = scorer().gradient(img, class_prompt(cls));  // d cos / d image
        std::vector<double> analytic, numeric;
        for (int k = 0; k < 30; ++k) {
            const std::size_t i = s.next() % img.size();
            auto plus = img, minus = img;
            plus.data()[i] += 1e-4;
            minus.data()[i] -= 1e-4;
            numeric.push_back((semantic_penalty(scorer(), plus, cls) - semantic_penalty(scorer(), minus, cls)) / 2e-4);
            analytic.push_back(-g.data()[i]);
        }
        CHECK(fixtures::relative_error(analytic, numeric) <= 1e-3);
    }
}
