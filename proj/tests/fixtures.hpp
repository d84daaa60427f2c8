#pragma once

// Scene and image builders shared by the unit tests.

#include <algorithm>
#include <cmath>
#include <vector>

#include "ctok/synthetic.hpp"

namespace fixtures {

// Activation used for "off" slots; logistic outputs are never exactly 0.
inline constexpr double kOff = 1e-9;
inline constexpr double kOn = 1.0 - 1e-9;

inline ctok::SyntheticSceneParams scene_with(const ctok::SyntheticGenerator& gen, const std::vector<int>& on,
                                             double on_value = kOn) {
    ctok::PromptEmbeddingSequence empty;
    empty.tokens.emplace_back(gen.embedding_dim());
    auto scene = gen.synthetic_scene(empty, 0);
    std::fill(scene.slot_activations.begin(), scene.slot_activations.end(), kOff);
    for (int j : on) scene.slot_activations[j] = on_value;
    scene.color = ctok::hue_to_color({0.0, 0.0, 0.0}, gen.params().luminance);
    return scene;
}

inline double distance(const std::pair<double, double>& a, const std::pair<double, double>& b) {
    return std::hypot(a.first - b.first, a.second - b.second);
}

inline double border_distance(const std::pair<double, double>& c, int h, int w) {
    return std::min({c.first, c.second, h - 1 - c.first, w - 1 - c.second});
}

// Greedy pick of up to `k` slots whose centers are pairwise at least
// `min_sep` apart and at least `margin` from the image border.
inline std::vector<int> separated_slots(const ctok::SyntheticGenerator& gen, int k, double min_sep,
                                        double margin = 0.0) {
    ctok::PromptEmbeddingSequence empty;
    empty.tokens.emplace_back(gen.embedding_dim());
    const auto centers = gen.synthetic_scene(empty, 0).slot_centers;
    std::vector<int> out;
    for (int j = 0; j < static_cast<int>(centers.size()) && static_cast<int>(out.size()) < k; ++j) {
        if (border_distance(centers[j], gen.params().height, gen.params().width) < margin) continue;
        bool ok = true;
        for (int i : out) ok = ok && distance(centers[i], centers[j]) >= min_sep;
        if (ok) out.push_back(j);
    }
    return out;
}

// Slot farthest from the image border.
inline int central_slot(const ctok::SyntheticGenerator& gen) {
    ctok::PromptEmbeddingSequence empty;
    empty.tokens.emplace_back(gen.embedding_dim());
    const auto centers = gen.synthetic_scene(empty, 0).slot_centers;
    int best = 0;
    for (int j = 1; j < static_cast<int>(centers.size()); ++j) {
        if (border_distance(centers[j], gen.params().height, gen.params().width) >
            border_distance(centers[best], gen.params().height, gen.params().width)) {
            best = j;
        }
    }
    return best;
}

// Relative error between two vectors, ||a - b|| / max(||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

}  // namespace fixtures
