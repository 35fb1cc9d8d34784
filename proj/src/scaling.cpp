#include "nino/scaling.hpp"

#include <cmath>
#include <stdexcept>

namespace nino {

using ad::Index;
using ad::Matrix;
using ad::Vector;

const char* to_string(ScalingKind kind) {
    switch (kind) {
        case ScalingKind::layerwise: return "layerwise";
        case ScalingKind::per_param_std: return "per-param-std";
        case ScalingKind::minmax: return "minmax";
        case ScalingKind::none: return "none";
    }
    return "?";
}

ScalingKind scaling_kind_from_string(const std::string& name) {
    if (name == "layerwise") return ScalingKind::layerwise;
    if (name == "per-param-std") return ScalingKind::per_param_std;
    if (name == "minmax") return ScalingKind::minmax;
    if (name == "none") return ScalingKind::none;
    throw std::invalid_argument("unknown scaling '" + name + "' (expected layerwise, per-param-std, minmax or none)");
}

Scaler::Scaler(Vector offset, Vector scale) : offset_(std::move(offset)), scale_(std::move(scale)) {
    if (offset_.size() != scale_.size()) throw std::invalid_argument("scaler: offset and scale sizes differ");
    for (Index i = 0; i < scale_.size(); ++i)
        if (!(scale_(i) > 0)) throw std::invalid_argument("scaler: non-positive scale");
}

void Scaler::check(const Matrix& x) const {
    if (x.rows() != scale_.size())
        throw std::invalid_argument("scaler fitted on " + std::to_string(scale_.size()) + " parameters applied to " +
                                    std::to_string(x.rows()));
}

Matrix Scaler::scale_values(const Matrix& x) const {
    check(x);
    return (x.colwise() - offset_).array().colwise() / scale_.array();
}

Matrix Scaler::unscale_values(const Matrix& x) const {
    check(x);
    Matrix out = x.array().colwise() * scale_.array();
    out.colwise() += offset_;
    return out;
}

Matrix Scaler::scale_delta(const Matrix& delta) const {
    check(delta);
    return delta.array().colwise() / scale_.array();
}

Matrix Scaler::unscale_delta(const Matrix& delta) const {
    check(delta);
    return delta.array().colwise() * scale_.array();
}

LayerwiseScaler::LayerwiseScaler(std::vector<ParamTensor> layers, std::vector<double> mean, std::vector<double> stddev,
                                 double eps)
    : layers_(std::move(layers)), mean_(std::move(mean)), std_(std::move(stddev)), eps_(eps) {
    if (mean_.size() != layers_.size() || std_.size() != layers_.size())
        throw std::invalid_argument("layerwise scaler: layer-count mismatch");
    std::size_t n = 0;
    for (const auto& l : layers_) n = std::max(n, l.offset + l.size());
    Vector off = Vector::Zero(static_cast<Index>(n));
    Vector sc = Vector::Ones(static_cast<Index>(n));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        off.segment(static_cast<Index>(layers_[l].offset), static_cast<Index>(layers_[l].size())).setConstant(mean_[l]);
        sc.segment(static_cast<Index>(layers_[l].offset), static_cast<Index>(layers_[l].size())).setConstant(std_[l] + eps_);
    }
    expanded_ = Scaler(std::move(off), std::move(sc));
}

LayerwiseScaler fit_layerwise(const Matrix& window, const ArchSpec& spec, double eps) {
    return fit_layerwise(window, spec.tensors(), eps);
}

LayerwiseScaler fit_layerwise(const Matrix& window, const std::vector<ParamTensor>& layers, double eps) {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.size();
    if (static_cast<std::size_t>(window.rows()) != n)
        throw std::invalid_argument("fit_layerwise: window has " + std::to_string(window.rows()) +
                                    " parameters, layers cover " + std::to_string(n));
    std::vector<double> mean(layers.size()), stddev(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto block = window.middleRows(static_cast<Index>(layers[l].offset), static_cast<Index>(layers[l].size()));
        // Shifted by the first value so constant layers give exactly mu = value, sigma = 0.
        const double ref = block(0, 0);
        const double m = ref + (block.array() - ref).mean();
        const double var = (block.array() - m).square().mean();
        mean[l] = m;
        stddev[l] = std::sqrt(var);
    }
    return LayerwiseScaler(layers, std::move(mean), std::move(stddev), eps);
}

MinMaxScaler::MinMaxScaler(Vector range, double eps) : range_(std::move(range)) {
    expanded_ = Scaler(Vector::Zero(range_.size()), (range_.array() + eps).matrix());
}

MinMaxScaler fit_minmax(const Matrix& window, double eps) {
    return MinMaxScaler(window.rowwise().maxCoeff() - window.rowwise().minCoeff(), eps);
}

Scaler fit_scaler(ScalingKind kind, const Matrix& window, const std::vector<ParamTensor>& layers, double eps) {
    switch (kind) {
        case ScalingKind::layerwise: return fit_layerwise(window, layers, eps).per_param();
        case ScalingKind::minmax: return fit_minmax(window, eps).per_param();
        case ScalingKind::per_param_std: {
            const Vector ref = window.col(0);
            const Vector mean = ref + (window.colwise() - ref).rowwise().mean();
            const Vector var = (window.colwise() - mean).array().square().rowwise().mean();
            return Scaler(mean, (var.array().sqrt() + eps).matrix());
        }
        case ScalingKind::none: return Scaler(Vector::Zero(window.rows()), Vector::Ones(window.rows()));
    }
    throw std::invalid_argument("fit_scaler: unknown kind");
}

}  // namespace nino
