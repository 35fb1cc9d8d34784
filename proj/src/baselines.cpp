#include "nino/baselines.hpp"

#include <nlohmann/json.hpp>

#include <stdexcept>

namespace nino {

using ad::Index;
using ad::Tape;
using ad::Var;

namespace {

// [2 x c] map from a newest-first window row to (intercept, slope).
Matrix line_solver(int c, const Vector& w) {
    if (c < 2) throw std::invalid_argument("line fit needs at least two states");
    if (w.size() != c) throw std::invalid_argument("line fit weights must have one entry per state");
    Matrix x(c, 2);
    for (int j = 0; j < c; ++j) {
        x(j, 0) = 1.0;
        x(j, 1) = static_cast<double>(c - j);
    }
    const Matrix xtw = x.transpose() * w.asDiagonal();
    const Matrix normal = xtw * x;
    return normal.ldlt().solve(xtw);
}

Vector plus_weights(int c) {
    Vector w(c);
    for (int j = 0; j < c; ++j) {
        const double mu = static_cast<double>(c - j) / c;
        w(j) = mu * mu;
    }
    return w;
}

LineFitResult fit_with(const Matrix& window, const Vector& w) {
    const Matrix solver = line_solver(static_cast<int>(window.cols()), w);
    const Matrix coef = window * solver.transpose();
    return LineFitResult{coef.col(1), coef.col(0)};
}

}  // namespace

Vector line_prediction_weights(int context, const Vector& fit_weights) {
    const Matrix solver = line_solver(context, fit_weights);
    const double x_star = 2.0 * context;
    return (solver.row(0) + x_star * solver.row(1)).transpose();
}

LineFitResult linefit(const Matrix& window) { return fit_with(window, Vector::Ones(window.cols())); }

LineFitResult linefit_plus(const Matrix& window) {
    return fit_with(window, plus_weights(static_cast<int>(window.cols())));
}

namespace {

// Written relative to the newest state so constant rows come back exactly
// and a shift of the window shifts the prediction by the same amount.
Vector predict_with(const Matrix& window, const Vector& w) {
    const Vector p = line_prediction_weights(static_cast<int>(window.cols()), w);
    const Vector newest = window.col(0);
    return newest + (window.colwise() - newest) * p;
}

}  // namespace

Vector linefit_predict(const Matrix& window) { return predict_with(window, Vector::Ones(window.cols())); }

Vector linefitplus_predict(const Matrix& window) {
    return predict_with(window, plus_weights(static_cast<int>(window.cols())));
}

Vector LinefitNowcaster::nowcast(const TemplatePtr&, const ParameterWindow& window, int) const {
    if (window.context() != context_) throw ShapeError(name() + ": window length differs from the configured context");
    return weighted_ ? linefitplus_predict(window.states) : linefit_predict(window.states);
}

Var horizon_mae(Var pred, const Matrix& target) {
    const Index n = pred.rows(), k = pred.cols(), avail = target.cols();
    if (target.rows() != n || avail > k) throw std::invalid_argument("horizon_mae: target shape");
    if (avail == 0 || n == 0) return ad::scale(ad::sum_all(pred), 0.0);
    Matrix padded = Matrix::Zero(n, k);
    padded.leftCols(avail) = target;
    Matrix weight = Matrix::Zero(n, k);
    weight.leftCols(avail).setConstant(1.0 / static_cast<double>(n * avail));
    return ad::weighted_abs_error(pred, padded, weight);
}

double horizon_mae_reference(const Matrix& pred, const Matrix& target) {
    const Index n = pred.rows(), avail = target.cols();
    if (avail == 0) return 0.0;
    double total = 0.0;
    for (Index k = 0; k < avail; ++k) {
        double sum = 0.0;
        for (Index i = 0; i < n; ++i) sum += std::abs(pred(i, k) - target(i, k));
        total += sum / static_cast<double>(n);
    }
    return total / static_cast<double>(avail);
}

WnnConfig WnnConfig::plain(int context, int hidden) {
    WnnConfig c;
    c.context = context;
    c.hidden = hidden;
    return c;
}

WnnConfig WnnConfig::plus(int context, int hidden, int horizons) {
    WnnConfig c;
    c.context = context;
    c.hidden = hidden;
    c.horizons = horizons;
    c.scaling = ScalingKind::layerwise;
    c.k_decay = true;
    return c;
}

WnnModel::WnnModel(WnnConfig cfg) : cfg_(cfg) {
    if (cfg_.context < 2 || cfg_.hidden < 1 || cfg_.horizons < 1) throw std::invalid_argument("WnnModel: invalid config");
    net_ = DenseStack({cfg_.context, cfg_.hidden, cfg_.hidden, cfg_.horizons}, 0, Activation::silu);
    params.assign(net_.num_params(), 0.0);
    std::mt19937_64 rng(cfg_.seed);
    net_.init(params, rng, true);
}

Matrix WnnModel::forward(const Matrix& scaled_window) const {
    Tape t;
    return forward(t, scaled_window, {}).value();
}

Var WnnModel::forward(Tape& tape, const Matrix& scaled_window, std::span<double> grad) const {
    if (scaled_window.cols() != cfg_.context) throw ShapeError("wnn: window length differs from the configured context");
    return net_.forward(tape, tape.constant(scaled_window), params, grad);
}

Scaler WnnModel::fit(const TemplatePtr& tmpl, const Matrix& window) const {
    if (cfg_.scaling == ScalingKind::layerwise && !tmpl) throw std::invalid_argument("wnn+: layerwise scaling needs a template");
    return fit_scaler(cfg_.scaling, window, tmpl ? tmpl->tensors : std::vector<ParamTensor>{});
}

Vector WnnModel::nowcast(const TemplatePtr& tmpl, const ParameterWindow& window, int k) const {
    const Scaler s = fit(tmpl, window.states);
    const Matrix pred = forward(s.scale_values(window.states));
    const int col = cfg_.horizons > 1 ? std::clamp(k, 1, cfg_.horizons) - 1 : 0;
    const Matrix delta = s.unscale_delta(pred.col(col));
    return window.states.col(0) + delta.col(0);
}

double WnnModel::loss(std::span<const TrainingExample* const> batch, std::span<double> grad) const {
    std::vector<std::pair<const TrainingExample*, Matrix>> used;
    for (const TrainingExample* ex : batch) {
        if (cfg_.horizons > 1) {
            used.emplace_back(ex, ex->targets.leftCols(std::min<Index>(ex->targets.cols(), cfg_.horizons)));
        } else if (ex->targets.cols() >= cfg_.context) {
            used.emplace_back(ex, ex->targets.col(cfg_.context - 1));
        }
    }
    if (used.empty()) return 0.0;
    double total = 0.0;
    const double w = 1.0 / static_cast<double>(used.size());
    for (const auto& [ex, target] : used) {
        const Scaler s = fit(ex->tmpl, ex->context);
        Tape t;
        Var pred = forward(t, s.scale_values(ex->context), grad);
        Var l = ad::scale(horizon_mae(pred, s.scale_delta(target)), w);
        total += l.value()(0, 0);
        if (!grad.empty()) t.backward(l);
    }
    return total;
}

std::string WnnModel::config_json() const {
    nlohmann::ordered_json j;
    j["kind"] = "wnn";
    j["context"] = cfg_.context;
    j["hidden"] = cfg_.hidden;
    j["horizons"] = cfg_.horizons;
    j["scaling"] = to_string(cfg_.scaling);
    j["k_decay"] = cfg_.k_decay;
    j["seed"] = cfg_.seed;
    return j.dump();
}

WnnConfig WnnConfig::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    for (const auto& [k, v] : j.items())
        if (k != "kind" && k != "context" && k != "hidden" && k != "horizons" && k != "scaling" && k != "k_decay" &&
            k != "seed")
            throw std::invalid_argument("wnn config: unknown key '" + k + "'");
    if (j.value("kind", "wnn") != "wnn") throw std::invalid_argument("wnn config: kind is not wnn");
    WnnConfig c;
    c.context = j.value("context", c.context);
    c.hidden = j.value("hidden", c.hidden);
    c.horizons = j.value("horizons", c.horizons);
    c.scaling = scaling_kind_from_string(j.value("scaling", std::string(to_string(c.scaling))));
    c.k_decay = j.value("k_decay", c.k_decay);
    c.seed = j.value("seed", c.seed);
    return c;
}

Matrix wnn_forward(const WnnModel& model, const Matrix& scaled_window) { return model.forward(scaled_window); }

double wnn_loss(const Matrix& pred, const Matrix& target) { return horizon_mae_reference(pred, target); }

}  // namespace nino
