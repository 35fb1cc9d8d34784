#pragma once

#include "nino/baselines.hpp"
#include "nino/neural_graph.hpp"
#include "nino/nn.hpp"
#include "nino/scaling.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace nino {

struct NinoConfig {
    int hidden = 128;      // D
    int depth = 3;         // M
    int context = 5;       // c
    int horizons = 40;     // K
    double k_power = 2.0;  // p
    int edge_types = kNumEdgeTypes;
    int word_pos_ceiling = 1000;
    int stride = 200;
    /// Padded channel width d_E accepted on edges (9 covers 3x3 kernels).
    int channels = 9;
    ScalingKind scaling = ScalingKind::layerwise;
    GraphMode mode = GraphMode::ours;
    bool use_lpe = true;
    bool use_word_pos = true;
    bool use_edge_type = true;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
    std::string to_json() const;
    /// Missing keys keep their defaults; unknown keys are rejected.
    static NinoConfig from_json(const std::string& text);
};

/// k = clamp(round(K ((T - t) / T)^p), 1, K). Throws for T <= 0 or t outside [0, T].
int k_decay(long t, long total, int horizons, double power);

class NinoModel : public TrainableNowcaster {
public:
    explicit NinoModel(NinoConfig cfg);

    const NinoConfig& config() const { return cfg_; }
    std::string name() const override { return cfg_.mode == GraphMode::ours ? "nino" : "nino-naive"; }
    int context() const override { return cfg_.context; }
    int max_horizon() const override { return cfg_.horizons; }
    bool uses_k_decay() const override { return true; }
    GraphMode graph_mode() const override { return cfg_.mode; }

    /// Scaler for a window and the graph of its scaled states.
    std::pair<Scaler, NeuralGraph> prepare(const TemplatePtr& tmpl, const Matrix& window) const;

    // Building blocks on a tape; grad may be empty for inference.
    std::pair<ad::Var, ad::Var> embed(ad::Tape& tape, const NeuralGraph& graph, std::span<double> grad) const;
    std::pair<ad::Var, ad::Var> gnn_layer(ad::Tape& tape, int layer, ad::Var nodes, ad::Var edges,
                                          const NeuralGraph& graph, std::span<double> grad) const;
    /// [edges x D] -> [edges x channels*K], element (e, ch*K + k) is channel ch at horizon k+1.
    ad::Var dms_head(ad::Tape& tape, ad::Var edges, std::span<double> grad) const;
    /// Full pass; last_edges receives the final edge states when non-null.
    ad::Var forward(ad::Tape& tape, const NeuralGraph& graph, std::span<double> grad, ad::Var* last_edges = nullptr) const;

    /// Scaled per-parameter predictions [n x K].
    Matrix predict_scaled(const NeuralGraph& graph) const;
    Vector nowcast(const TemplatePtr& tmpl, const ParameterWindow& window, int k) const override;
    /// Re-draws every weight and bias from U(+-gain/sqrt(fan_in)) and the
    /// embedding tables from N(0, gain^2 / D), as for an untrained probe.
    void randomize(std::uint64_t seed, double gain);
    /// Mean over edges of the last-layer edge states.
    Vector graph_embedding(const NeuralGraph& graph) const;

    double loss(std::span<const TrainingExample* const> batch, std::span<double> grad) const override;
    std::string config_json() const override { return cfg_.to_json(); }

private:
    struct LayerParams {
        DenseStack msg_fwd, msg_rev, scale_fwd, shift_fwd, scale_rev, shift_rev, aggregate, edge_update;
    };

    NinoConfig cfg_;
    DenseStack lpe_proj_;
    std::size_t word_table_ = 0;  // [(ceiling + 1) x D]
    DenseStack edge_proj_;        // bias-free
    std::size_t type_table_ = 0;  // [edge_types x D]
    std::vector<LayerParams> layers_;
    DenseStack dms_;
};

/// Gather per-parameter rows [n x K] from edge predictions [edges x channels*K].
ad::Var edge_to_param(ad::Var predictions, const NeuralGraphTemplate& tmpl, int channels, int horizons);

/// Mean over available horizons of the MAE of parameter-bearing channels.
/// scaled_targets: [n x K_avail], K_avail <= K.
ad::Var dms_loss(ad::Var predictions, const NeuralGraphTemplate& tmpl, int channels, int horizons,
                 const Matrix& scaled_targets);

}  // namespace nino
