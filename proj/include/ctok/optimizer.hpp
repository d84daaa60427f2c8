#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctok/core_types.hpp"
#include "ctok/counting.hpp"
#include "ctok/detection.hpp"
#include "ctok/generation.hpp"
#include "ctok/semantic.hpp"

namespace ctok {

struct OptimizerConfig {
    double learning_rate = 0.05;
    double lambda_semantic = 5.0;
    ScaleMode scale_mode = ScaleMode::Dynamic;
    double static_scale = 1.0;
    LossNorm loss_norm = LossNorm::L1;
    double stop_threshold = 0.5;  // objects
    int max_iterations = 50;
    std::uint64_t seed = 0;  // token init and generation
    double grad_guard = 1e-8;
    bool ascent = false;  // step along +grad instead of -grad
    double conf_threshold = kDefaultConfThreshold;

    bool operator==(const OptimizerConfig&) const = default;
};

std::optional<std::string> validate(const OptimizerConfig& cfg);

void to_json(nlohmann::json& j, const OptimizerConfig& cfg);
void from_json(const nlohmann::json& j, OptimizerConfig& cfg);

// Backends one optimization run talks to.
struct Pipeline {
    std::shared_ptr<const Generator> generator;
    std::shared_ptr<const PotentialModel> potential;
    std::shared_ptr<const Detector> detector;
    std::shared_ptr<const SemanticScorer> semantic;

    static Pipeline synthetic(const SyntheticParams& params = {});
};

struct IterationRecord {
    int index = 0;
    CountEstimate count_estimate;
    int detector_count = 0;
    LossBreakdown loss;
    ScaleFactor scale;
    bool static_fallback = false;  // dynamic mode fell back to the static scale
    double semantic_cosine = 0.0;
    double counting_error = 0.0;  // |count - N|
    double embedding_norm = 0.0;
    std::vector<double> embedding;  // token the image was generated with
    std::string image_ref;
};

void to_json(nlohmann::json& j, const IterationRecord& rec);

// Returns the first violated clause across the trace.
std::optional<std::string> validate_trace(const std::vector<IterationRecord>& trace);

inline constexpr std::uint32_t kTokenFormatVersion = 1;

struct TokenRecord {
    TokenEmbedding embedding;
    std::string class_name;
    int target_count = 0;
    double final_counting_error = 0.0;
    int iterations_used = 0;
    OptimizerConfig config_snapshot;
    std::uint32_t format_version = kTokenFormatVersion;

    bool operator==(const TokenRecord&) const = default;
};

std::optional<std::string> validate(const TokenRecord& token);

// Everything derived from one generated image.
struct ImageEvaluation {
    LossBreakdown loss;
    CountEstimate count;
    ScaleFactor scale;
    int detector_count = 0;
    bool static_fallback = false;
    bool degenerate = false;  // potential sum under the guard
    SemanticScore semantic;
    ImageTensor image_grad;  // d loss.total / d image
};

// With frozen_scale set, the count uses that scale instead of recomputing it;
// this is how the loss looks to the gradient, which treats the scale as a
// constant.
ImageEvaluation evaluate_image(const Pipeline& pipeline, const ImageTensor& image, const PromptSpec& spec,
                               const OptimizerConfig& cfg, const std::optional<ScaleFactor>& frozen_scale = {});

LossBreakdown total_loss(const Pipeline& pipeline, const ImageTensor& image, const PromptSpec& spec,
                         const OptimizerConfig& cfg);

// Total loss of the image generated from prompt + e, and its gradient with
// respect to e.
struct TokenLoss {
    ImageEvaluation evaluation;
    ImageTensor image;
    TokenEmbedding grad;
};

TokenLoss token_loss_and_grad(const Pipeline& pipeline, const PromptEmbeddingSequence& prompt, const TokenEmbedding& e,
                              const PromptSpec& spec, const OptimizerConfig& cfg,
                              const std::optional<ScaleFactor>& frozen_scale = {});

// e - lr * grad / (loss^2 + guard), or + with cfg.ascent.
TokenEmbedding update_token(const TokenEmbedding& e, const TokenEmbedding& grad, double loss_value,
                            const OptimizerConfig& cfg);

TokenEmbedding initial_token(const Generator& generator, std::uint64_t seed);

enum class OptimizationStatus { Converged, MaxIterations, Failed };

const char* to_string(OptimizationStatus status);

struct OptimizationResult {
    TokenRecord token;
    std::vector<IterationRecord> trace;
    OptimizationStatus status = OptimizationStatus::Failed;
    int best_index = -1;
    std::string diagnostic;
};

// Called after each evaluated iteration with its record and image.
using IterationObserver = std::function<void(const IterationRecord&, const ImageTensor&)>;

OptimizationResult optimize(const Pipeline& pipeline, const PromptSpec& spec, const OptimizerConfig& cfg,
                            const IterationObserver& observer = {});

// One generation of the new prompt with the stored token appended.
ImageTensor reuse_token(const Pipeline& pipeline, const TokenRecord& token, const PromptSpec& spec,
                        std::uint64_t seed);

// Binary container, little-endian:
//   "CTOK" | u32 version | u32 d | u32 target_count | u32 iterations_used |
//   f64 final_error | u32 len + class name | u32 len + config json |
//   f64[d] embedding | u32 crc32 of everything before it
void save_token(const TokenRecord& token, const std::filesystem::path& path);
TokenRecord load_token(const std::filesystem::path& path);

// One JSON object per line.
void write_trace(const std::vector<IterationRecord>& trace, const std::filesystem::path& path);

// Binary PPM, 8 bits per channel.
void write_ppm(const ImageTensor& image, const std::filesystem::path& path);

}  // namespace ctok
