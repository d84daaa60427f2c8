#pragma once

#include <array>
#include <optional>
#include <string>

#include "ctok/core_types.hpp"
#include "ctok/synthetic.hpp"

namespace ctok {

inline constexpr double kDefaultClipSWeight = 2.5;

struct SemanticScore {
    double cosine = 0.0;
};

std::optional<std::string> validate(const SemanticScore& score);

// Image-text matcher. gradient() returns d cosine / d image.
class SemanticScorer {
public:
    virtual ~SemanticScorer() = default;

    virtual std::string name() const = 0;
    virtual bool differentiable() const = 0;
    virtual SemanticScore score(const ImageTensor& image, const std::string& text) const = 0;
    virtual ImageTensor gradient(const ImageTensor& image, const std::string& text) const = 0;
};

// Cosine between the per-channel pixel sums of the image and the colour the
// synthetic generator gives the text's content words. A blank image scores 0.
class SyntheticSemanticScorer final : public SemanticScorer {
public:
    explicit SyntheticSemanticScorer(SyntheticVocabulary vocab = SyntheticVocabulary());

    std::string name() const override { return "synthetic"; }
    bool differentiable() const override { return true; }
    SemanticScore score(const ImageTensor& image, const std::string& text) const override;
    ImageTensor gradient(const ImageTensor& image, const std::string& text) const override;

    std::array<double, 3> anchor(const std::string& text) const;

    static std::array<double, 3> signature(const ImageTensor& image);
    static SemanticScore score_against(const ImageTensor& image, const std::array<double, 3>& anchor);
    static ImageTensor gradient_against(const ImageTensor& image, const std::array<double, 3>& anchor);

private:
    SyntheticVocabulary vocab_;
};

// Text the semantic penalty compares against.
std::string class_prompt(const std::string& class_name);

SemanticScore semantic_score(const SemanticScorer& scorer, const ImageTensor& image, const std::string& text);

// 1 - cosine, so lower is a better match.
double semantic_penalty(const SemanticScore& score);
double semantic_penalty(const SemanticScorer& scorer, const ImageTensor& image, const std::string& class_name);

// w * max(cosine, 0)
double clip_s(const SemanticScore& score, double weight = kDefaultClipSWeight);
double clip_s(const SemanticScorer& scorer, const std::string& prompt, const ImageTensor& image,
              double weight = kDefaultClipSWeight);

}  // namespace ctok
