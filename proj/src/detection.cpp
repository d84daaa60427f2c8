#include "ctok/detection.hpp"

#include <algorithm>

#include "ctok/errors.hpp"

namespace ctok {

std::optional<std::string> validate(const Detection& det, int height, int width) {
    if (!(det.row_min < det.row_max) || !(det.col_min < det.col_max)) return "box must have positive extent";
    if (det.row_min < 0 || det.col_min < 0 || det.row_max > height || det.col_max > width) {
        return "box must lie inside the image";
    }
    if (!(det.confidence >= 0.0 && det.confidence <= 1.0)) return "confidence must lie in [0,1]";
    return std::nullopt;
}

SyntheticDetector::SyntheticDetector(SyntheticParams params, std::set<std::string> classes)
    : params_(params), classes_(std::move(classes)) {}

std::vector<Detection> SyntheticDetector::detect(const ImageTensor& image, const std::string& class_name,
                                                 double conf_threshold) const {
    if (!classes_.empty() && !classes_.count(class_name)) {
        throw UnsupportedClass("detector does not support class '" + class_name + "'");
    }
    if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0)) throw InvalidInput("confidence threshold must lie in [0,1]");
    if (auto err = validate(image)) throw InvalidInput(*err);

    const int h = image.height(), w = image.width(), ch = image.channels();
    const auto px = image.data();
    std::vector<double> gray(static_cast<std::size_t>(h) * w);
    for (std::size_t p = 0; p < gray.size(); ++p) {
        double s = 0.0;
        for (int c = 0; c < ch; ++c) s += px[p * ch + c];
        gray[p] = s / ch;
    }
    const double cut = 0.5 * params_.luminance;

    std::vector<Detection> out;
    std::vector<char> seen(gray.size(), 0);
    std::vector<int> stack;
    for (int start = 0; start < h * w; ++start) {
        if (seen[start] || !(gray[start] > cut)) continue;
        Detection det{h, w, -1, -1, 0.0, class_name};
        double peak = 0.0;
        stack.assign(1, start);
        seen[start] = 1;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            const int r = p / w, c = p % w;
            det.row_min = std::min(det.row_min, r);
            det.col_min = std::min(det.col_min, c);
            det.row_max = std::max(det.row_max, r + 1);
            det.col_max = std::max(det.col_max, c + 1);
            peak = std::max(peak, gray[p]);
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    const int nr = r + dr, nc = c + dc;
                    if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                    const int q = nr * w + nc;
                    if (!seen[q] && gray[q] > cut) {
                        seen[q] = 1;
                        stack.push_back(q);
                    }
                }
            }
        }
        det.confidence = std::min(1.0, peak / params_.luminance);
        if (det.confidence >= conf_threshold) out.push_back(std::move(det));
    }
    return out;
}

std::size_t detection_count(const std::vector<Detection>& dets) {
    return dets.size();
}

}  // namespace ctok
