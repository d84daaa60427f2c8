#pragma once

// Desk-scale stand-in for a text-to-image model: a seeded linear map from the
// prompt embeddings to per-slot activations, rendered as gaussian blobs.
// Because every slot's on/off state is known, the rendered object count has
// an exact ground truth (oracle_count) to test the optimizer against.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ctok/generation.hpp"

namespace ctok {

struct SyntheticParams {
    int embedding_dim = 32;
    int context_length = 16;  // prompt tokens; the count token goes after them
    int slots = 40;
    int height = 128;
    int width = 128;
    double blob_radius = 6.0;  // visible radius in pixels; gaussian sigma is radius / 2
    double embedding_scale = 0.02;
    std::uint64_t scene_seed = 0;

    // Slot-logit map.
    double prompt_weight = 7.5;
    double token_weight = 2.5;
    double count_gain = 3.0;  // logit shift per unit along the count direction
    double bias_mean = 0.0;
    double bias_std = 1.0;
    double seed_noise = 0.5;  // per-seed logit noise, the stand-in for diffusion noise

    // Vocabulary.
    double class_amplitude = 2.0;
    double group_mix = 0.2;       // within-group class deviation
    double palette_std = 1.2;
    double palette_class_mix = 0.35;
    double nominal_logit_spread = 2.5;
    double number_overshoot_slope = 1.2;  // baseline count ~ slope * N + offset
    double number_overshoot_offset = 2.0;

    // Colour.
    double luminance = 0.5;  // mean channel value of a full-activation blob peak
    double token_hue_gain = 2.0;

    double blob_sigma() const { return blob_radius / 2.0; }
};

inline constexpr int kChannels = 3;

// Word-level encoder shared by the synthetic generator and the synthetic
// image-text matcher, so that both agree on what colour a class word means.
class SyntheticVocabulary {
public:
    explicit SyntheticVocabulary(SyntheticParams params = {},
                                 std::map<std::string, std::string> taxonomy = default_taxonomy());

    static std::map<std::string, std::string> default_taxonomy();

    // Lower-cases and splits on whitespace, dropping surrounding punctuation.
    static std::vector<std::string> tokenize(const std::string& text);
    static bool is_stop_word(const std::string& word);
    static bool is_number(const std::string& word);

    TokenEmbedding embed(const std::string& word) const;

    // Hue logits a content word contributes; zero for stop words and numbers.
    std::array<double, 3> palette_logits(const std::string& word) const;

    // Hue logits of a whole text (sum over its words).
    std::array<double, 3> text_hue_logits(const std::string& text) const;

    std::string group_of(const std::string& word) const;

    // Logit shift a number word applies to every slot.
    double number_shift(int n) const;

    const std::vector<double>& count_direction() const { return count_dir_; }
    const std::array<std::vector<double>, 3>& hue_basis() const { return hue_basis_; }

    // Removes the count and hue components from v.
    void project_out_structure(std::vector<double>& v) const;

    const SyntheticParams& params() const { return params_; }

private:
    SyntheticParams params_;
    std::map<std::string, std::string> taxonomy_;
    std::vector<double> count_dir_;
    std::array<std::vector<double>, 3> hue_basis_;
};

// Colour a set of hue logits renders as: logistic, then rescaled so the mean
// channel equals the target luminance.
std::array<double, 3> hue_to_color(const std::array<double, 3>& logits, double luminance);

struct SyntheticSceneParams {
    std::vector<double> slot_activations;
    std::vector<std::pair<double, double>> slot_centers;  // (row, col)
    double slot_radius = 0.0;
    std::array<double, 3> color{};  // per-channel blob colour
};

std::optional<std::string> validate(const SyntheticSceneParams& params, int height, int width);

// Number of slots whose activation exceeds 0.5.
int oracle_count(const SyntheticSceneParams& params);

class SyntheticGenerator final : public Generator {
public:
    explicit SyntheticGenerator(SyntheticParams params = {});
    SyntheticGenerator(SyntheticParams params, std::map<std::string, std::string> taxonomy);

    std::string name() const override { return "synthetic"; }
    std::size_t embedding_dim() const override { return static_cast<std::size_t>(params_.embedding_dim); }
    double embedding_scale() const override { return params_.embedding_scale; }
    bool differentiable() const override { return true; }

    PromptEmbeddingSequence encode_prompt(const PromptSpec& spec) const override;
    GenerationResult generate(const PromptEmbeddingSequence& seq, std::uint64_t seed) const override;
    std::vector<TokenEmbedding> backward(const PromptEmbeddingSequence& seq, std::uint64_t seed,
                                         const ImageTensor& upstream) const override;

    SyntheticSceneParams synthetic_scene(const PromptEmbeddingSequence& seq, std::uint64_t seed) const;
    ImageTensor render(const SyntheticSceneParams& scene) const;

    // Slot logits before the logistic; exposed for tests that construct
    // embeddings with a prescribed activation pattern.
    std::vector<double> slot_logits(const PromptEmbeddingSequence& seq, std::uint64_t seed) const;

    // Row j of the linear map, restricted to the count-token position.
    std::vector<double> token_weights(int slot) const;

    const SyntheticParams& params() const { return params_; }
    const SyntheticVocabulary& vocabulary() const { return vocab_; }
    const std::vector<double>& bias() const { return bias_; }

private:
    struct Blob {
        int row0 = 0, col0 = 0, rows = 0, cols = 0;
        std::vector<double> weights;  // rows x cols gaussian profile
    };

    std::vector<double> flatten(const PromptEmbeddingSequence& seq) const;
    std::vector<double> seed_noise(std::uint64_t seed) const;
    std::array<double, 3> hue_logits(const std::vector<double>& x) const;
    std::vector<double> intensity(const std::vector<double>& activations) const;

    SyntheticParams params_;
    SyntheticVocabulary vocab_;
    std::size_t flat_dim_ = 0;
    std::vector<double> weights_;  // slots x flat_dim_, row-major
    std::vector<double> hue_weights_;  // 3 x flat_dim_
    std::vector<double> bias_;
    std::vector<std::pair<double, double>> centers_;
    std::vector<Blob> blobs_;
};

}  // namespace ctok
