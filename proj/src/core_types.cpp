#include "ctok/core_types.hpp"

#include <cmath>
#include <numeric>

#include "ctok/errors.hpp"

namespace ctok {

double TokenEmbedding::norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return std::sqrt(s);
}

std::string PromptSpec::text() const {
    std::string out;
    out.reserve(prompt_template.size() + class_name.size() + 4);
    for (std::size_t i = 0; i < prompt_template.size(); ++i) {
        if (prompt_template.compare(i, 3, "{N}") == 0) {
            out += std::to_string(target_count);
            i += 2;
        } else if (prompt_template.compare(i, 3, "{c}") == 0) {
            out += class_name;
            i += 2;
        } else {
            out += prompt_template[i];
        }
    }
    return out;
}

ImageTensor::ImageTensor(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
    if (height <= 0 || width <= 0 || channels <= 0) {
        throw InvalidInput("image dimensions must be positive");
    }
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

double PotentialMap::sum() const {
    return std::accumulate(data_.begin(), data_.end(), 0.0);
}

const char* to_string(ScaleMode mode) {
    return mode == ScaleMode::Static ? "static" : "dynamic";
}

ScaleMode parse_scale_mode(const std::string& s) {
    if (s == "static") return ScaleMode::Static;
    if (s == "dynamic") return ScaleMode::Dynamic;
    throw InvalidInput("unknown scale mode '" + s + "' (expected static or dynamic)");
}

std::optional<std::string> validate(const TokenEmbedding& e) {
    if (e.dim() == 0) return "embedding dimension must be positive";
    for (double v : e.values()) {
        if (!std::isfinite(v)) return "embedding entries must be finite";
    }
    return std::nullopt;
}

std::optional<std::string> validate(const PromptSpec& spec) {
    if (spec.target_count < 1) return "target count N must be >= 1";
    if (spec.class_name.empty()) return "class name must be non-empty";
    return std::nullopt;
}

std::optional<std::string> validate(const ImageTensor& image) {
    if (image.height() <= 0 || image.width() <= 0 || image.channels() <= 0) {
        return "image dimensions must be positive";
    }
    for (double v : image.data()) {
        if (!std::isfinite(v)) return "image values must be finite";
        if (v < 0.0 || v > 1.0) return "image values must lie in [0,1]";
    }
    return std::nullopt;
}

std::optional<std::string> validate(const PotentialMap& phi) {
    for (double v : phi.data()) {
        if (!std::isfinite(v)) return "potential entries must be finite";
        if (v < 0.0) return "potential entries must be nonnegative";
    }
    return std::nullopt;
}

std::optional<std::string> validate(const LossBreakdown& loss) {
    if (!(loss.counting >= 0.0)) return "counting loss must be nonnegative";
    if (!(loss.lambda_semantic >= 0.0)) return "lambda must be nonnegative";
    if (loss.total != loss.counting + loss.lambda_semantic * loss.semantic) {
        return "total must equal counting + lambda * semantic";
    }
    return std::nullopt;
}

std::optional<std::string> validate(const CountEstimate& count) {
    if (!(count.value >= 0.0) || !std::isfinite(count.value)) return "count must be nonnegative and finite";
    if (count.mode == ScaleMode::Static && !(count.scale_used > 0.0)) return "static scale must be positive";
    if (count.scale_used < 0.0 || !std::isfinite(count.scale_used)) return "scale must be finite and nonnegative";
    const double expected = count.scale_used * count.potential_sum;
    const double tol = 1e-6 * std::max(1.0, std::abs(expected));
    if (std::abs(count.value - expected) > tol) return "count must equal scale * potential sum";
    return std::nullopt;
}

}  // namespace ctok
