#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ctok/core_types.hpp"
#include "ctok/synthetic.hpp"

namespace ctok {

inline constexpr double kDefaultConfThreshold = 0.3;

// Half-open pixel box: rows [row_min, row_max), cols [col_min, col_max).
struct Detection {
    int row_min = 0;
    int col_min = 0;
    int row_max = 0;
    int col_max = 0;
    double confidence = 0.0;
    std::string class_name;

    bool operator==(const Detection&) const = default;
};

std::optional<std::string> validate(const Detection& det, int height, int width);

class Detector {
public:
    virtual ~Detector() = default;

    virtual std::string name() const = 0;
    // Detections of class_name with confidence >= conf_threshold.
    virtual std::vector<Detection> detect(const ImageTensor& image, const std::string& class_name,
                                          double conf_threshold) const = 0;
};

// Thresholds the gray image at half the single-blob peak and reports each
// 8-connected component; touching blobs merge into one detection.
class SyntheticDetector final : public Detector {
public:
    // An empty class list accepts every class name.
    explicit SyntheticDetector(SyntheticParams params = {}, std::set<std::string> classes = {});

    std::string name() const override { return "synthetic"; }
    std::vector<Detection> detect(const ImageTensor& image, const std::string& class_name,
                                  double conf_threshold) const override;

private:
    SyntheticParams params_;
    std::set<std::string> classes_;
};

std::size_t detection_count(const std::vector<Detection>& dets);

}  // namespace ctok
