#pragma once

// Shared building blocks: a flat-parameter MLP and the Adam/AdamW optimizer.

#include "nino/autograd.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace nino {

enum class Activation { silu, relu, gelu, tanh };

ad::Var activate(ad::Var x, Activation act);

/// Fully connected stack widths[0] -> ... -> widths.back(); the activation is
/// applied between layers, not after the last one. Occupies
/// flat[offset, offset + num_params()) as W0 [in x out], b0, W1, b1, ...
class DenseStack {
public:
    DenseStack() = default;
    DenseStack(std::vector<int> widths, std::size_t offset, Activation act = Activation::silu, bool bias = true);

    std::size_t num_params() const { return size_; }
    std::size_t offset() const { return offset_; }
    std::size_t end() const { return offset_ + size_; }
    int in_width() const { return widths_.front(); }
    int out_width() const { return widths_.back(); }
    const std::vector<int>& widths() const { return widths_; }

    ad::Var forward(ad::Tape& tape, ad::Var x, std::span<const double> flat, std::span<double> grad) const;

    /// W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), b = 0. zero_last zeroes the
    /// final layer entirely.
    void init(std::span<double> flat, std::mt19937_64& rng, bool zero_last = false) const;
    /// W, b ~ U(-gain/sqrt(fan_in), gain/sqrt(fan_in)).
    void init_uniform(std::span<double> flat, std::mt19937_64& rng, double gain) const;

private:
    std::vector<int> widths_;
    std::size_t offset_ = 0;
    std::size_t size_ = 0;
    Activation act_ = Activation::silu;
    bool bias_ = true;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    /// true: decoupled decay (AdamW); false: L2 added to the gradient (Adam).
    bool decoupled = true;
};

class Adam {
public:
    Adam() = default;
    Adam(std::size_t n, AdamConfig cfg);

    /// One update; lr_scale multiplies the configured learning rate.
    void step(std::span<double> params, std::span<const double> grad, double lr_scale = 1.0);

    const AdamConfig& config() const { return cfg_; }
    AdamConfig& config() { return cfg_; }
    long steps() const { return t_; }
    const std::vector<double>& first_moment() const { return m_; }
    const std::vector<double>& second_moment() const { return v_; }
    /// Restore a saved state (sizes must match).
    void load_state(long steps, std::vector<double> m, std::vector<double> v);
    /// FNV-1a over the raw bytes of (t, m, v).
    std::uint64_t state_hash() const;

private:
    AdamConfig cfg_;
    long t_ = 0;
    std::vector<double> m_, v_;
};

/// lr multiplier for cosine decay from 1 at step 0 to 0 at `total`.
double cosine_decay(long step, long total);

}  // namespace nino
