#include "ctok/semantic.hpp"

#include <algorithm>
#include <cmath>

#include "ctok/errors.hpp"

namespace ctok {

std::optional<std::string> validate(const SemanticScore& score) {
    if (!std::isfinite(score.cosine)) return "cosine must be finite";
    if (score.cosine < -1.0 || score.cosine > 1.0) return "cosine must lie in [-1,1]";
    return std::nullopt;
}

SyntheticSemanticScorer::SyntheticSemanticScorer(SyntheticVocabulary vocab) : vocab_(std::move(vocab)) {}

std::array<double, 3> SyntheticSemanticScorer::anchor(const std::string& text) const {
    return hue_to_color(vocab_.text_hue_logits(text), 1.0);
}

std::array<double, 3> SyntheticSemanticScorer::signature(const ImageTensor& image) {
    if (image.channels() != kChannels) throw InvalidInput("semantic scorer expects a 3-channel image");
    std::array<double, 3> s{};
    const auto px = image.data();
    for (std::size_t i = 0; i < px.size(); i += kChannels) {
        for (int c = 0; c < kChannels; ++c) s[c] += px[i + c];
    }
    return s;
}

namespace {

double norm3(const std::array<double, 3>& v) {
    return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
}

}  // namespace

SemanticScore SyntheticSemanticScorer::score_against(const ImageTensor& image, const std::array<double, 3>& anchor) {
    const auto s = signature(image);
    const double ns = norm3(s), na = norm3(anchor);
    if (ns == 0.0 || na == 0.0) return {0.0};
    const double cos = (s[0] * anchor[0] + s[1] * anchor[1] + s[2] * anchor[2]) / (ns * na);
    return {std::clamp(cos, -1.0, 1.0)};
}

ImageTensor SyntheticSemanticScorer::gradient_against(const ImageTensor& image, const std::array<double, 3>& anchor) {
    ImageTensor grad(image.height(), image.width(), image.channels());
    const auto s = signature(image);
    const double ns = norm3(s), na = norm3(anchor);
    if (ns == 0.0 || na == 0.0) return grad;
    const double cos = (s[0] * anchor[0] + s[1] * anchor[1] + s[2] * anchor[2]) / (ns * na);
    std::array<double, 3> d;
    for (int c = 0; c < 3; ++c) d[c] = anchor[c] / (ns * na) - cos * s[c] / (ns * ns);
    auto g = grad.data();
    for (std::size_t i = 0; i < g.size(); i += kChannels) {
        for (int c = 0; c < kChannels; ++c) g[i + c] = d[c];
    }
    return grad;
}

SemanticScore SyntheticSemanticScorer::score(const ImageTensor& image, const std::string& text) const {
    return score_against(image, anchor(text));
}

ImageTensor SyntheticSemanticScorer::gradient(const ImageTensor& image, const std::string& text) const {
    return gradient_against(image, anchor(text));
}

std::string class_prompt(const std::string& class_name) {
    return "A photo of " + class_name;
}

SemanticScore semantic_score(const SemanticScorer& scorer, const ImageTensor& image, const std::string& text) {
    if (text.empty()) throw InvalidInput("semantic score needs non-empty text");
    if (auto err = validate(image)) throw InvalidInput(*err);
    return scorer.score(image, text);
}

double semantic_penalty(const SemanticScore& score) {
    return std::max(0.0, 1.0 - score.cosine);
}

double semantic_penalty(const SemanticScorer& scorer, const ImageTensor& image, const std::string& class_name) {
    return semantic_penalty(semantic_score(scorer, image, class_prompt(class_name)));
}

double clip_s(const SemanticScore& score, double weight) {
    if (!(weight >= 0.0)) throw InvalidInput("CLIP-S weight must be nonnegative");
    return weight * std::max(score.cosine, 0.0);
}

double clip_s(const SemanticScorer& scorer, const std::string& prompt, const ImageTensor& image, double weight) {
    return clip_s(semantic_score(scorer, image, prompt), weight);
}

}  // namespace ctok
