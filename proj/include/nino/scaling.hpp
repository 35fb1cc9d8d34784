#pragma once

#include "nino/arch.hpp"
#include "nino/autograd.hpp"

#include <string>
#include <vector>

namespace nino {

inline constexpr double kScaleEps = 1e-8;

enum class ScalingKind { layerwise, per_param_std, minmax, none };

const char* to_string(ScalingKind kind);
ScalingKind scaling_kind_from_string(const std::string& name);

/// Affine per-parameter normalization x~ = (x - offset) / scale, where scale
/// already contains the epsilon guard. Rows of every matrix argument are
/// parameters; columns are states or horizons.
class Scaler {
public:
    Scaler() = default;
    Scaler(ad::Vector offset, ad::Vector scale);

    std::size_t size() const { return static_cast<std::size_t>(scale_.size()); }
    const ad::Vector& offset() const { return offset_; }
    const ad::Vector& scale() const { return scale_; }

    ad::Matrix scale_values(const ad::Matrix& x) const;
    ad::Matrix unscale_values(const ad::Matrix& x) const;
    /// Deltas are mean-free: only the scale applies.
    ad::Matrix scale_delta(const ad::Matrix& delta) const;
    ad::Matrix unscale_delta(const ad::Matrix& delta) const;

private:
    void check(const ad::Matrix& x) const;
    ad::Vector offset_;
    ad::Vector scale_;
};

/// Population mean and std of each parameter tensor over all c states.
class LayerwiseScaler {
public:
    LayerwiseScaler() = default;
    LayerwiseScaler(std::vector<ParamTensor> layers, std::vector<double> mean, std::vector<double> stddev,
                    double eps = kScaleEps);

    std::size_t num_layers() const { return layers_.size(); }
    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& stddev() const { return std_; }
    double eps() const { return eps_; }

    ad::Matrix scale(const ad::Matrix& x) const { return per_param().scale_values(x); }
    ad::Matrix unscale(const ad::Matrix& x) const { return per_param().unscale_values(x); }
    ad::Matrix scale_delta(const ad::Matrix& delta) const { return per_param().scale_delta(delta); }
    ad::Matrix unscale_delta(const ad::Matrix& delta) const { return per_param().unscale_delta(delta); }

    /// Broadcast of the per-layer statistics to every parameter.
    const Scaler& per_param() const { return expanded_; }

private:
    std::vector<ParamTensor> layers_;
    std::vector<double> mean_, std_;
    double eps_ = kScaleEps;
    Scaler expanded_;
};

/// Throws std::invalid_argument when the window height differs from the
/// spec's parameter count.
LayerwiseScaler fit_layerwise(const ad::Matrix& window, const ArchSpec& spec, double eps = kScaleEps);
LayerwiseScaler fit_layerwise(const ad::Matrix& window, const std::vector<ParamTensor>& layers, double eps = kScaleEps);

/// Per-parameter range s = max - min over the window; x~ = x / (s + eps).
class MinMaxScaler {
public:
    MinMaxScaler() = default;
    explicit MinMaxScaler(ad::Vector range, double eps = kScaleEps);

    const ad::Vector& range() const { return range_; }
    ad::Matrix scale(const ad::Matrix& x) const { return expanded_.scale_values(x); }
    ad::Matrix unscale(const ad::Matrix& x) const { return expanded_.unscale_values(x); }
    const Scaler& per_param() const { return expanded_; }

private:
    ad::Vector range_;
    Scaler expanded_;
};

MinMaxScaler fit_minmax(const ad::Matrix& window, double eps = kScaleEps);

/// Any of the four scaling variants as a per-parameter affine map.
Scaler fit_scaler(ScalingKind kind, const ad::Matrix& window, const std::vector<ParamTensor>& layers,
                  double eps = kScaleEps);

}  // namespace nino
