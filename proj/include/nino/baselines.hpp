#pragma once

#include "nino/neural_graph.hpp"
#include "nino/nn.hpp"
#include "nino/scaling.hpp"

#include <span>
#include <string>
#include <vector>

namespace nino {

/// One supervised example: c context states (newest first) and the true
/// future deltas theta_{tau+k*stride} - theta_tau for k = 1..K_avail.
struct TrainingExample {
    TemplatePtr tmpl;
    Matrix context;  // [n x c]
    Matrix targets;  // [n x K_avail]
};

/// Anything that maps a parameter window to predicted future parameters.
class Nowcaster {
public:
    virtual ~Nowcaster() = default;
    virtual std::string name() const = 0;
    /// Number of states the method consumes.
    virtual int context() const = 0;
    /// Largest horizon (in strides) the method can emit.
    virtual int max_horizon() const = 0;
    /// Whether the harness should choose k by k-decay (otherwise k = max_horizon()).
    virtual bool uses_k_decay() const { return false; }
    virtual GraphMode graph_mode() const { return GraphMode::ours; }
    /// Predicted theta at horizon k from a window of the template's architecture.
    virtual Vector nowcast(const TemplatePtr& tmpl, const ParameterWindow& window, int k) const = 0;
};

/// Meta-trainable nowcaster with a flat parameter vector.
class TrainableNowcaster : public Nowcaster {
public:
    std::vector<double> params;

    /// Mean loss over the batch; adds d loss / d params into grad when non-empty.
    virtual double loss(std::span<const TrainingExample* const> batch, std::span<double> grad) const = 0;
    /// Model configuration as JSON text (stored in checkpoints).
    virtual std::string config_json() const = 0;
};

// Line fits over x = 1..c (x = 1 oldest, x = c newest), extrapolated to x = 2c.

struct LineFitResult {
    Vector slope;
    Vector intercept;
};

/// window: [n x c], newest first. Unweighted least squares per row.
LineFitResult linefit(const Matrix& window);
/// Weighted least squares minimising sum_x (mu_x r_x)^2 with mu_x = x / c.
LineFitResult linefit_plus(const Matrix& window);
Vector linefit_predict(const Matrix& window);
Vector linefitplus_predict(const Matrix& window);

/// Prediction weights over the columns of a newest-first window: prediction =
/// window * weights. Row x-weights w (length c) select the fitting objective.
Vector line_prediction_weights(int context, const Vector& fit_weights);

class LinefitNowcaster : public Nowcaster {
public:
    LinefitNowcaster(int context, bool weighted) : context_(context), weighted_(weighted) {}
    std::string name() const override { return weighted_ ? "linefit+" : "linefit"; }
    int context() const override { return context_; }
    int max_horizon() const override { return context_; }
    Vector nowcast(const TemplatePtr& tmpl, const ParameterWindow& window, int k) const override;

private:
    int context_;
    bool weighted_;
};

/// Mean over available horizons of the per-horizon mean absolute error.
/// pred: [n x K]; target: [n x K_avail], K_avail <= K (missing horizons masked).
ad::Var horizon_mae(ad::Var pred, const Matrix& target);
/// Scalar reference implementation used by the tests.
double horizon_mae_reference(const Matrix& pred, const Matrix& target);

struct WnnConfig {
    int context = 5;
    int hidden = 32;
    /// 1 for WNN (fixed horizon k = context), K for WNN+ (direct multi-step).
    int horizons = 1;
    ScalingKind scaling = ScalingKind::minmax;
    bool k_decay = false;
    std::uint64_t seed = 0;

    /// WNN: min-max scaling, one output at k = c.
    static WnnConfig plain(int context = 5, int hidden = 32);
    /// WNN+: layerwise scaling, K outputs, k-decay.
    static WnnConfig plus(int context = 5, int hidden = 32, int horizons = 40);
    /// Parses WnnModel::config_json() output; unknown keys are rejected.
    static WnnConfig from_json(const std::string& text);
};

/// Per-parameter MLP c -> D -> D -> K over scaled states.
class WnnModel : public TrainableNowcaster {
public:
    explicit WnnModel(WnnConfig cfg);

    const WnnConfig& config() const { return cfg_; }
    std::string name() const override { return cfg_.horizons > 1 || cfg_.k_decay ? "wnn+" : "wnn"; }
    int context() const override { return cfg_.context; }
    int max_horizon() const override { return cfg_.horizons > 1 ? cfg_.horizons : cfg_.context; }
    bool uses_k_decay() const override { return cfg_.k_decay; }

    /// Horizon (in strides) of output column j.
    int horizon_of(int column) const { return cfg_.horizons > 1 ? column + 1 : cfg_.context; }

    /// scaled_window [n x c] -> scaled deltas [n x horizons].
    Matrix forward(const Matrix& scaled_window) const;
    ad::Var forward(ad::Tape& tape, const Matrix& scaled_window, std::span<double> grad) const;

    Vector nowcast(const TemplatePtr& tmpl, const ParameterWindow& window, int k) const override;
    double loss(std::span<const TrainingExample* const> batch, std::span<double> grad) const override;
    std::string config_json() const override;

private:
    Scaler fit(const TemplatePtr& tmpl, const Matrix& window) const;

    WnnConfig cfg_;
    DenseStack net_;
};

Matrix wnn_forward(const WnnModel& model, const Matrix& scaled_window);
double wnn_loss(const Matrix& pred, const Matrix& target);

}  // namespace nino
