#include "nino/nino_model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nino {

using ad::Index;
using ad::Tape;
using ad::Var;

void NinoConfig::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("nino config: ") + what);
    };
    need(hidden >= 1, "hidden must be >= 1");
    need(depth >= 1, "depth must be >= 1");
    need(context >= 1, "context must be >= 1");
    need(horizons >= 1, "horizons must be >= 1");
    need(k_power >= 0.0, "k_power must be >= 0");
    need(edge_types >= 1, "edge_types must be >= 1");
    need(word_pos_ceiling >= 1, "word_pos_ceiling must be >= 1");
    need(stride >= 1, "stride must be >= 1");
    need(channels >= 1, "channels must be >= 1");
}

std::string NinoConfig::to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = "nino";
    j["hidden"] = hidden;
    j["depth"] = depth;
    j["context"] = context;
    j["horizons"] = horizons;
    j["k_power"] = k_power;
    j["edge_types"] = edge_types;
    j["word_pos_ceiling"] = word_pos_ceiling;
    j["stride"] = stride;
    j["channels"] = channels;
    j["scaling"] = to_string(scaling);
    j["mode"] = to_string(mode);
    j["use_lpe"] = use_lpe;
    j["use_word_pos"] = use_word_pos;
    j["use_edge_type"] = use_edge_type;
    j["seed"] = seed;
    return j.dump();
}

NinoConfig NinoConfig::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    static const char* const known[] = {"kind",     "hidden",      "depth",   "context",      "horizons",
                                        "k_power",  "edge_types",  "word_pos_ceiling", "stride", "channels",
                                        "scaling",  "mode",        "use_lpe", "use_word_pos", "use_edge_type",
                                        "seed"};
    for (const auto& [k, v] : j.items())
        if (std::find(std::begin(known), std::end(known), k) == std::end(known))
            throw std::invalid_argument("nino config: unknown key '" + k + "'");
    if (j.value("kind", "nino") != "nino") throw std::invalid_argument("nino config: kind is not nino");
    NinoConfig c;
    c.hidden = j.value("hidden", c.hidden);
    c.depth = j.value("depth", c.depth);
    c.context = j.value("context", c.context);
    c.horizons = j.value("horizons", c.horizons);
    c.k_power = j.value("k_power", c.k_power);
    c.edge_types = j.value("edge_types", c.edge_types);
    c.word_pos_ceiling = j.value("word_pos_ceiling", c.word_pos_ceiling);
    c.stride = j.value("stride", c.stride);
    c.channels = j.value("channels", c.channels);
    c.scaling = scaling_kind_from_string(j.value("scaling", std::string(to_string(c.scaling))));
    c.mode = graph_mode_from_string(j.value("mode", std::string(to_string(c.mode))));
    c.use_lpe = j.value("use_lpe", c.use_lpe);
    c.use_word_pos = j.value("use_word_pos", c.use_word_pos);
    c.use_edge_type = j.value("use_edge_type", c.use_edge_type);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

int k_decay(long t, long total, int horizons, double power) {
    if (total <= 0) throw std::invalid_argument("k_decay: total steps must be positive");
    if (t < 0 || t > total) throw std::invalid_argument("k_decay: step outside [0, total]");
    if (horizons < 1) throw std::invalid_argument("k_decay: horizons must be >= 1");
    const double frac = static_cast<double>(total - t) / static_cast<double>(total);
    const long k = std::lround(static_cast<double>(horizons) * std::pow(frac, power));
    return static_cast<int>(std::clamp<long>(k, 1, horizons));
}

NinoModel::NinoModel(NinoConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.hidden;
    std::size_t off = 0;
    auto stack = [&off](std::vector<int> widths, bool bias = true) {
        DenseStack s(std::move(widths), off, Activation::silu, bias);
        off = s.end();
        return s;
    };
    lpe_proj_ = stack({kLpeDim, d});
    word_table_ = off;
    off += static_cast<std::size_t>(cfg_.word_pos_ceiling + 1) * d;
    edge_proj_ = stack({cfg_.channels * cfg_.context, d}, false);
    type_table_ = off;
    off += static_cast<std::size_t>(cfg_.edge_types) * d;
    for (int m = 0; m < cfg_.depth; ++m) {
        LayerParams p;
        p.msg_fwd = stack({2 * d, d, d});
        p.msg_rev = stack({2 * d, d, d});
        p.scale_fwd = stack({d, d});
        p.shift_fwd = stack({d, d});
        p.scale_rev = stack({d, d});
        p.shift_rev = stack({d, d});
        p.aggregate = stack({d, d, d});
        p.edge_update = stack({3 * d, d, d});
        layers_.push_back(p);
    }
    dms_ = stack({d, cfg_.channels * cfg_.horizons});
    params.assign(off, 0.0);

    std::mt19937_64 rng(cfg_.seed);
    lpe_proj_.init(params, rng);
    std::normal_distribution<double> emb(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    for (std::size_t i = 0; i < static_cast<std::size_t>(cfg_.word_pos_ceiling + 1) * d; ++i) params[word_table_ + i] = emb(rng);
    edge_proj_.init(params, rng);
    for (std::size_t i = 0; i < static_cast<std::size_t>(cfg_.edge_types) * d; ++i) params[type_table_ + i] = emb(rng);
    for (const LayerParams& p : layers_)
        for (const DenseStack* s : {&p.msg_fwd, &p.msg_rev, &p.scale_fwd, &p.shift_fwd, &p.scale_rev, &p.shift_rev,
                                    &p.aggregate, &p.edge_update})
            s->init(params, rng);
    dms_.init(params, rng);
}

void NinoModel::randomize(std::uint64_t seed, double gain) {
    std::mt19937_64 rng(seed);
    const int d = cfg_.hidden;
    std::normal_distribution<double> emb(0.0, gain / std::sqrt(static_cast<double>(d)));
    lpe_proj_.init_uniform(params, rng, gain);
    for (std::size_t i = 0; i < static_cast<std::size_t>(cfg_.word_pos_ceiling + 1) * d; ++i) params[word_table_ + i] = emb(rng);
    edge_proj_.init_uniform(params, rng, gain);
    for (std::size_t i = 0; i < static_cast<std::size_t>(cfg_.edge_types) * d; ++i) params[type_table_ + i] = emb(rng);
    for (const LayerParams& p : layers_)
        for (const DenseStack* s : {&p.msg_fwd, &p.msg_rev, &p.scale_fwd, &p.shift_fwd, &p.scale_rev, &p.shift_rev,
                                    &p.aggregate, &p.edge_update})
            s->init_uniform(params, rng, gain);
    dms_.init_uniform(params, rng, gain);
}

std::pair<Scaler, NeuralGraph> NinoModel::prepare(const TemplatePtr& tmpl, const Matrix& window) const {
    if (window.cols() != cfg_.context)
        throw ShapeError("nino: window has " + std::to_string(window.cols()) + " states, model expects " +
                         std::to_string(cfg_.context));
    if (tmpl->max_channels() > cfg_.channels)
        throw ShapeError("nino: template needs " + std::to_string(tmpl->max_channels()) +
                         " edge channels, model accepts " + std::to_string(cfg_.channels));
    Scaler s = fit_scaler(cfg_.scaling, window, tmpl->tensors);
    ParameterWindow scaled;
    scaled.states = s.scale_values(window);
    return {std::move(s), attach_window(tmpl, scaled, cfg_.channels)};
}

std::pair<Var, Var> NinoModel::embed(Tape& tape, const NeuralGraph& graph, std::span<double> grad) const {
    const int d = cfg_.hidden;
    const auto nv = static_cast<Index>(graph.node_features.word_pos.size());
    if (graph.edge_features.cols() != static_cast<Index>(cfg_.channels) * cfg_.context)
        throw ShapeError("nino: edge feature width " + std::to_string(graph.edge_features.cols()) + " does not match " +
                         std::to_string(cfg_.channels) + " channels x " + std::to_string(cfg_.context) + " states");
    Var nodes = tape.constant(Matrix::Zero(nv, d));
    if (cfg_.use_lpe) {
        if (graph.node_features.lpe.rows() != nv || graph.node_features.lpe.cols() != kLpeDim)
            throw ShapeError("nino: LPE feature shape");
        nodes = lpe_proj_.forward(tape, tape.constant(graph.node_features.lpe), params, grad);
    }
    if (cfg_.use_word_pos) {
        std::vector<int> idx(graph.node_features.word_pos.size());
        for (std::size_t i = 0; i < idx.size(); ++i)
            idx[i] = std::clamp(graph.node_features.word_pos[i], 0, cfg_.word_pos_ceiling);
        Var table = tape.parameter(params, word_table_, cfg_.word_pos_ceiling + 1, d, grad);
        nodes = ad::add(nodes, ad::gather_rows(table, idx));
    }
    Var edges = edge_proj_.forward(tape, tape.constant(graph.edge_features), params, grad);
    if (cfg_.use_edge_type) {
        Var table = tape.parameter(params, type_table_, cfg_.edge_types, d, grad);
        edges = ad::add(edges, ad::gather_rows(table, graph.tmpl->edge_type));
    }
    return {nodes, edges};
}

std::pair<Var, Var> NinoModel::gnn_layer(Tape& tape, int layer, Var nodes, Var edges, const NeuralGraph& graph,
                                         std::span<double> grad) const {
    const LayerParams& p = layers_.at(static_cast<std::size_t>(layer));
    const std::vector<int>& src = graph.src();
    const std::vector<int>& dst = graph.dst();
    const Index nv = nodes.rows();
    Var v_src = ad::gather_rows(nodes, src);
    Var v_dst = ad::gather_rows(nodes, dst);
    // Forward messages are received by dst, reverse messages by src.
    Var m_fwd = ad::add(ad::mul(p.scale_fwd.forward(tape, edges, params, grad),
                                p.msg_fwd.forward(tape, ad::concat_cols({v_dst, v_src}), params, grad)),
                        p.shift_fwd.forward(tape, edges, params, grad));
    Var m_rev = ad::add(ad::mul(p.scale_rev.forward(tape, edges, params, grad),
                                p.msg_rev.forward(tape, ad::concat_cols({v_src, v_dst}), params, grad)),
                        p.shift_rev.forward(tape, edges, params, grad));
    Var sum = ad::add(ad::scatter_add_rows(m_fwd, dst, nv), ad::scatter_add_rows(m_rev, src, nv));
    Vector inv = Vector::Zero(nv);
    for (std::size_t e = 0; e < src.size(); ++e) {
        inv(src[e]) += 1.0;
        inv(dst[e]) += 1.0;
    }
    for (Index i = 0; i < nv; ++i) inv(i) = inv(i) > 0 ? 1.0 / inv(i) : 0.0;
    Var new_nodes = p.aggregate.forward(tape, ad::scale_rows(sum, inv), params, grad);
    Var new_edges = p.edge_update.forward(
        tape, ad::concat_cols({ad::gather_rows(new_nodes, src), edges, ad::gather_rows(new_nodes, dst)}), params, grad);
    return {new_nodes, new_edges};
}

Var NinoModel::dms_head(Tape& tape, Var edges, std::span<double> grad) const { return dms_.forward(tape, edges, params, grad); }

Var NinoModel::forward(Tape& tape, const NeuralGraph& graph, std::span<double> grad, Var* last_edges) const {
    auto [nodes, edges] = embed(tape, graph, grad);
    for (int m = 0; m < cfg_.depth; ++m) std::tie(nodes, edges) = gnn_layer(tape, m, nodes, edges, graph, grad);
    if (last_edges) *last_edges = edges;
    return dms_head(tape, edges, grad);
}

Matrix NinoModel::predict_scaled(const NeuralGraph& graph) const {
    Tape t;
    Var pred = forward(t, graph, {});
    return edge_to_param(pred, *graph.tmpl, cfg_.channels, cfg_.horizons).value();
}

Vector NinoModel::nowcast(const TemplatePtr& tmpl, const ParameterWindow& window, int k) const {
    auto [scaler, graph] = prepare(tmpl, window.states);
    const Matrix pred = predict_scaled(graph);
    const int col = std::clamp(k, 1, cfg_.horizons) - 1;
    const Matrix delta = scaler.unscale_delta(pred.col(col));
    return window.states.col(0) + delta.col(0);
}

Vector NinoModel::graph_embedding(const NeuralGraph& graph) const {
    Tape t;
    Var last;
    forward(t, graph, {}, &last);
    if (last.rows() == 0) return Vector::Zero(cfg_.hidden);
    return last.value().colwise().mean().transpose();
}

double NinoModel::loss(std::span<const TrainingExample* const> batch, std::span<double> grad) const {
    if (batch.empty()) return 0.0;
    double total = 0.0;
    const double w = 1.0 / static_cast<double>(batch.size());
    for (const TrainingExample* ex : batch) {
        auto [scaler, graph] = prepare(ex->tmpl, ex->context);
        const Matrix target = scaler.scale_delta(ex->targets.leftCols(std::min<Index>(ex->targets.cols(), cfg_.horizons)));
        Tape t;
        Var pred = forward(t, graph, grad);
        Var l = ad::scale(dms_loss(pred, *ex->tmpl, cfg_.channels, cfg_.horizons, target), w);
        total += l.value()(0, 0);
        if (!grad.empty()) t.backward(l);
    }
    return total;
}

Var edge_to_param(Var predictions, const NeuralGraphTemplate& tmpl, int channels, int horizons) {
    if (predictions.rows() != static_cast<Index>(tmpl.num_edges()) ||
        predictions.cols() != static_cast<Index>(channels) * horizons)
        throw ShapeError("edge_to_param: prediction shape");
    Var per_channel = ad::reshape(predictions, predictions.rows() * channels, horizons);
    std::vector<int> rows(tmpl.num_params());
    for (std::size_t p = 0; p < rows.size(); ++p) rows[p] = tmpl.param_slot[p][0] * channels + tmpl.param_slot[p][1];
    return ad::gather_rows(per_channel, rows);
}

Var dms_loss(Var predictions, const NeuralGraphTemplate& tmpl, int channels, int horizons, const Matrix& scaled_targets) {
    return horizon_mae(edge_to_param(predictions, tmpl, channels, horizons), scaled_targets);
}

}  // namespace nino
