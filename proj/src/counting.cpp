#include "ctok/counting.hpp"

#include <cmath>

#include "ctok/errors.hpp"

namespace ctok {

std::optional<std::string> validate(const ScaleFactor& scale) {
    if (!std::isfinite(scale.value)) return "scale must be finite";
    if (scale.mode == ScaleMode::Static && !(scale.value > 0.0)) return "static scale must be positive";
    if (scale.value < 0.0) return "dynamic scale must be nonnegative";
    return std::nullopt;
}

ScaleFactor static_scale(double value) {
    ScaleFactor s{value, ScaleMode::Static, 0.0};
    if (auto err = validate(s)) throw InvalidInput(*err);
    return s;
}

SyntheticPotentialModel::SyntheticPotentialModel(SyntheticParams params) : params_(params) {
    const double sigma = params_.blob_radius;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    kernel_.resize(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel_[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        total += kernel_[i + radius];
    }
    for (auto& k : kernel_) k /= total;

    // Reference: one full-activation blob centred in the frame, at the
    // generator's luminance, so its gray value is luminance * profile.
    const int h = params_.height, w = params_.width;
    const double bs = params_.blob_sigma();
    const double cutoff = 4.0 * bs;
    std::vector<double> gray(static_cast<std::size_t>(h) * w, 0.0);
    const double cr = h / 2.0, cc = w / 2.0;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
            if (d2 <= cutoff * cutoff) gray[r * w + c] = params_.luminance * std::exp(-d2 / (2.0 * bs * bs));
        }
    }
    const auto blurred = blur(gray, h, w);
    double s = 0.0;
    for (double v : blurred) s += v;
    gain_ = 1.0 / s;
}

std::vector<double> SyntheticPotentialModel::blur(const std::vector<double>& plane, int height, int width) const {
    const int radius = static_cast<int>(kernel_.size() / 2);
    std::vector<double> tmp(plane.size(), 0.0), out(plane.size(), 0.0);
    for (int r = 0; r < height; ++r) {
        const double* row = &plane[static_cast<std::size_t>(r) * width];
        for (int c = 0; c < width; ++c) {
            double acc = 0.0;
            const int lo = std::max(-radius, -c), hi = std::min(radius, width - 1 - c);
            for (int k = lo; k <= hi; ++k) acc += kernel_[k + radius] * row[c + k];
            tmp[static_cast<std::size_t>(r) * width + c] = acc;
        }
    }
    for (int r = 0; r < height; ++r) {
        const int lo = std::max(-radius, -r), hi = std::min(radius, height - 1 - r);
        for (int c = 0; c < width; ++c) {
            double acc = 0.0;
            for (int k = lo; k <= hi; ++k) acc += kernel_[k + radius] * tmp[static_cast<std::size_t>(r + k) * width + c];
            out[static_cast<std::size_t>(r) * width + c] = acc;
        }
    }
    return out;
}

PotentialMap SyntheticPotentialModel::potential_map(const ImageTensor& image, const std::string&) const {
    if (auto err = validate(image)) throw InvalidInput(*err);
    const int h = image.height(), w = image.width(), ch = image.channels();
    std::vector<double> gray(static_cast<std::size_t>(h) * w, 0.0);
    const auto px = image.data();
    for (std::size_t p = 0; p < gray.size(); ++p) {
        double s = 0.0;
        for (int c = 0; c < ch; ++c) s += px[p * ch + c];
        gray[p] = s / ch;
    }
    const auto blurred = blur(gray, h, w);
    PotentialMap phi(h, w);
    auto out = phi.data();
    for (std::size_t p = 0; p < blurred.size(); ++p) out[p] = std::max(0.0, gain_ * blurred[p]);
    return phi;
}

ImageTensor SyntheticPotentialModel::backward(const ImageTensor& image, const std::string&,
                                              const PotentialMap& upstream) const {
    const int h = image.height(), w = image.width(), ch = image.channels();
    if (upstream.height() != h || upstream.width() != w) throw InvalidInput("upstream map has the wrong shape");
    const std::vector<double> up(upstream.data().begin(), upstream.data().end());
    const auto back = blur(up, h, w);
    ImageTensor grad(h, w, ch);
    auto g = grad.data();
    for (std::size_t p = 0; p < back.size(); ++p) {
        for (int c = 0; c < ch; ++c) g[p * ch + c] = gain_ * back[p] / ch;
    }
    return grad;
}

CountEstimate aggregate_static(const PotentialMap& phi, const ScaleFactor& scale) {
    if (auto err = validate(scale)) throw InvalidInput(*err);
    const double sum = phi.sum();
    return {scale.value * sum, scale.value, ScaleMode::Static, true, sum};
}

ScaleFactor dynamic_scale(const PotentialMap& phi, int detector_count, double eps) {
    if (detector_count < 0) throw InvalidInput("detector count must be nonnegative");
    const double sum = phi.sum();
    if (!(sum > eps)) {
        throw DegeneratePotential("potential sum " + std::to_string(sum) + " is below the guard " + std::to_string(eps));
    }
    return {detector_count / sum, ScaleMode::Dynamic, sum};
}

CountEstimate aggregate_dynamic(const PotentialMap& phi, const ScaleFactor& scale) {
    if (scale.mode != ScaleMode::Dynamic) throw InvalidInput("aggregate_dynamic needs a dynamic scale");
    if (auto err = validate(scale)) throw InvalidInput(*err);
    const double sum = phi.sum();
    if (sum != scale.phi_sum) throw StaleScale("dynamic scale was computed from a different potential map");
    return {scale.value * sum, scale.value, ScaleMode::Dynamic, true, sum};
}

PotentialMap count_gradient(const PotentialMap& phi, const ScaleFactor& scale) {
    return PotentialMap(phi.height(), phi.width(), scale.value);
}

const char* to_string(LossNorm norm) {
    return norm == LossNorm::L1 ? "l1" : "l2";
}

LossNorm parse_loss_norm(const std::string& s) {
    if (s == "l1") return LossNorm::L1;
    if (s == "l2") return LossNorm::L2;
    throw InvalidInput("unknown loss norm '" + s + "' (expected l1 or l2)");
}

double counting_loss(const CountEstimate& count, int target, LossNorm norm) {
    const double diff = count.value - target;
    return norm == LossNorm::L1 ? std::abs(diff) : diff * diff;
}

double counting_loss_derivative(const CountEstimate& count, int target, LossNorm norm) {
    const double diff = count.value - target;
    if (norm == LossNorm::L2) return 2.0 * diff;
    return diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
}

}  // namespace ctok
