#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ctok {

// Real-valued vector of fixed length d. The counting token and every prompt
// token are TokenEmbeddings of the backend's dimension.
class TokenEmbedding {
public:
    TokenEmbedding() = default;
    explicit TokenEmbedding(std::size_t dim) : values_(dim, 0.0) {}
    explicit TokenEmbedding(std::vector<double> values) : values_(std::move(values)) {}

    std::size_t dim() const { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

    double norm() const;

    bool operator==(const TokenEmbedding&) const = default;

private:
    std::vector<double> values_;
};

inline constexpr const char* kDefaultPromptTemplate = "A photo of {N} {c}";

struct PromptSpec {
    std::string class_name;
    int target_count = 1;
    std::string prompt_template = kDefaultPromptTemplate;

    // Template with {N} and {c} substituted.
    std::string text() const;

    bool operator==(const PromptSpec&) const = default;
};

// h x w x channels grid, row-major with channels innermost. Values in [0,1].
class ImageTensor {
public:
    ImageTensor() = default;
    ImageTensor(int height, int width, int channels, double fill = 0.0);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }

    double at(int row, int col, int ch) const { return data_[index(row, col, ch)]; }
    double& at(int row, int col, int ch) { return data_[index(row, col, ch)]; }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    std::size_t index(int row, int col, int ch) const {
        return (static_cast<std::size_t>(row) * width_ + col) * channels_ + ch;
    }

    bool operator==(const ImageTensor&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

// h x w nonnegative grid of per-location object potential.
class PotentialMap {
public:
    PotentialMap() = default;
    PotentialMap(int height, int width, double fill = 0.0)
        : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill) {}

    int height() const { return height_; }
    int width() const { return width_; }

    double at(int row, int col) const { return data_[static_cast<std::size_t>(row) * width_ + col]; }
    double& at(int row, int col) { return data_[static_cast<std::size_t>(row) * width_ + col]; }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    double sum() const;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

struct LossBreakdown {
    double counting = 0.0;
    double semantic = 0.0;
    double lambda_semantic = 0.0;
    double total = 0.0;

    static LossBreakdown compose(double counting, double semantic, double lambda_semantic) {
        return {counting, semantic, lambda_semantic, counting + lambda_semantic * semantic};
    }
};

enum class ScaleMode { Static, Dynamic };

const char* to_string(ScaleMode mode);
ScaleMode parse_scale_mode(const std::string& s);

struct CountEstimate {
    double value = 0.0;
    double scale_used = 1.0;
    ScaleMode mode = ScaleMode::Static;
    bool differentiable = true;
    // Sum of the potential map the estimate came from; kept for validation.
    double potential_sum = 0.0;
};

// Validators return the violated clause, or nullopt when the value is valid.
std::optional<std::string> validate(const TokenEmbedding& e);
std::optional<std::string> validate(const PromptSpec& spec);
std::optional<std::string> validate(const ImageTensor& image);
std::optional<std::string> validate(const PotentialMap& phi);
std::optional<std::string> validate(const LossBreakdown& loss);
std::optional<std::string> validate(const CountEstimate& count);

}  // namespace ctok
