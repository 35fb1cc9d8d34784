#include "nino/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nino {

using ad::Var;

Var activate(Var x, Activation act) {
    switch (act) {
        case Activation::silu: return ad::silu(x);
        case Activation::relu: return ad::relu(x);
        case Activation::gelu: return ad::gelu(x);
        case Activation::tanh: return ad::tanh(x);
    }
    return x;
}

DenseStack::DenseStack(std::vector<int> widths, std::size_t offset, Activation act, bool bias)
    : widths_(std::move(widths)), offset_(offset), act_(act), bias_(bias) {
    if (widths_.size() < 2) throw std::invalid_argument("DenseStack needs at least two widths");
    for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
        if (widths_[i] <= 0 || widths_[i + 1] <= 0) throw std::invalid_argument("DenseStack: non-positive width");
        size_ += static_cast<std::size_t>(widths_[i]) * widths_[i + 1] + (bias_ ? widths_[i + 1] : 0);
    }
}

Var DenseStack::forward(ad::Tape& tape, Var x, std::span<const double> flat, std::span<double> grad) const {
    if (x.cols() != widths_.front()) throw std::invalid_argument("DenseStack: input width mismatch");
    std::size_t off = offset_;
    for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
        const int in = widths_[i], out = widths_[i + 1];
        Var w = tape.parameter(flat, off, in, out, grad);
        off += static_cast<std::size_t>(in) * out;
        x = ad::matmul(x, w);
        if (bias_) {
            x = ad::add_row(x, tape.parameter(flat, off, 1, out, grad));
            off += static_cast<std::size_t>(out);
        }
        if (i + 2 < widths_.size()) x = activate(x, act_);
    }
    return x;
}

void DenseStack::init(std::span<double> flat, std::mt19937_64& rng, bool zero_last) const {
    std::size_t off = offset_;
    for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
        const int in = widths_[i], out = widths_[i + 1];
        const bool last = i + 2 == widths_.size();
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (std::size_t j = 0; j < static_cast<std::size_t>(in) * out; ++j) flat[off + j] = (last && zero_last) ? 0.0 : u(rng);
        off += static_cast<std::size_t>(in) * out;
        if (bias_) {
            for (int j = 0; j < out; ++j) flat[off + j] = 0.0;
            off += static_cast<std::size_t>(out);
        }
    }
}

void DenseStack::init_uniform(std::span<double> flat, std::mt19937_64& rng, double gain) const {
    std::size_t off = offset_;
    for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
        const int in = widths_[i], out = widths_[i + 1];
        const double bound = gain / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> u(-bound, bound);
        const std::size_t n = static_cast<std::size_t>(in) * out + (bias_ ? static_cast<std::size_t>(out) : 0);
        for (std::size_t j = 0; j < n; ++j) flat[off + j] = u(rng);
        off += n;
    }
}

Adam::Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad, double lr_scale) {
    if (params.size() != m_.size() || grad.size() != m_.size()) throw std::invalid_argument("Adam: size mismatch");
    ++t_;
    const double lr = cfg_.lr * lr_scale;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double g = grad[i];
        if (!cfg_.decoupled && cfg_.weight_decay != 0.0) g += cfg_.weight_decay * params[i];
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m_[i] / bc1;
        const double vhat = v_[i] / bc2;
        if (cfg_.decoupled && cfg_.weight_decay != 0.0) params[i] -= lr * cfg_.weight_decay * params[i];
        params[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
}

void Adam::load_state(long steps, std::vector<double> m, std::vector<double> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw std::invalid_argument("Adam: state size mismatch");
    t_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
}

std::uint64_t Adam::state_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto bytes = [&h](const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= c[i];
            h *= 1099511628211ull;
        }
    };
    bytes(&t_, sizeof t_);
    bytes(m_.data(), m_.size() * sizeof(double));
    bytes(v_.data(), v_.size() * sizeof(double));
    return h;
}

double cosine_decay(long step, long total) {
    if (total <= 0) return 1.0;
    const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
    return 0.5 * (1.0 + std::cos(std::numbers::pi * f));
}

}  // namespace nino
