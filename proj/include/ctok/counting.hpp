#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctok/core_types.hpp"
#include "ctok/synthetic.hpp"

namespace ctok {

inline constexpr double kDenominatorGuard = 1e-6;

struct ScaleFactor {
    double value = 1.0;
    ScaleMode mode = ScaleMode::Static;
    // Sum of the map a dynamic scale was derived from; aggregate_dynamic
    // refuses any other map.
    double phi_sum = 0.0;
};

std::optional<std::string> validate(const ScaleFactor& scale);

ScaleFactor static_scale(double value);

// Maps an image to a nonnegative per-pixel object potential for one class.
class PotentialModel {
public:
    virtual ~PotentialModel() = default;

    virtual std::string name() const = 0;
    virtual bool differentiable() const = 0;
    // Static scale at which the map sum reads as an object count.
    virtual double natural_scale() const = 0;

    virtual PotentialMap potential_map(const ImageTensor& image, const std::string& class_name) const = 0;

    // Gradient of sum(upstream * potential_map(image)) with respect to image.
    virtual ImageTensor backward(const ImageTensor& image, const std::string& class_name,
                                 const PotentialMap& upstream) const = 0;
};

// Grayscale, gaussian blur, then a gain chosen so that one isolated
// full-activation blob of the synthetic generator sums to 1.
class SyntheticPotentialModel final : public PotentialModel {
public:
    explicit SyntheticPotentialModel(SyntheticParams params = {});

    std::string name() const override { return "synthetic"; }
    bool differentiable() const override { return true; }
    double natural_scale() const override { return 1.0; }

    PotentialMap potential_map(const ImageTensor& image, const std::string& class_name) const override;
    ImageTensor backward(const ImageTensor& image, const std::string& class_name,
                         const PotentialMap& upstream) const override;

    double gain() const { return gain_; }
    const std::vector<double>& kernel() const { return kernel_; }

private:
    // Separable blur with zero padding; self-adjoint.
    std::vector<double> blur(const std::vector<double>& plane, int height, int width) const;

    SyntheticParams params_;
    std::vector<double> kernel_;  // normalized, length 2 * radius + 1
    double gain_ = 1.0;
};

// value = scale * sum(phi)
CountEstimate aggregate_static(const PotentialMap& phi, const ScaleFactor& scale);

// detector_count / sum(phi). Throws DegeneratePotential when sum(phi) <= eps.
ScaleFactor dynamic_scale(const PotentialMap& phi, int detector_count, double eps = kDenominatorGuard);

// Throws StaleScale when scale was computed from a different map.
CountEstimate aggregate_dynamic(const PotentialMap& phi, const ScaleFactor& scale);

// Gradient of the count with respect to each potential cell.
PotentialMap count_gradient(const PotentialMap& phi, const ScaleFactor& scale);

enum class LossNorm { L1, L2 };

const char* to_string(LossNorm norm);
LossNorm parse_loss_norm(const std::string& s);

// L1: |count - N|. L2: (count - N)^2.
double counting_loss(const CountEstimate& count, int target, LossNorm norm = LossNorm::L1);

// d counting_loss / d count; 0 at the L1 kink.
double counting_loss_derivative(const CountEstimate& count, int target, LossNorm norm = LossNorm::L1);

}  // namespace ctok
