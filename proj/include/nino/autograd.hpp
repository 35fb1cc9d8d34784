#pragma once

// Minimal define-by-run reverse-mode differentiation over dense row-major
// matrices. Every model in this project (target networks and nowcasters)
// stores its parameters as one flat vector; Tape::parameter exposes a slice
// of that vector as a matrix leaf and scatters gradients back on backward().

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace nino::ad {

using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

class Tape;

class Var {
public:
    Var() = default;

    const Matrix& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, int self)>;

    Var constant(Matrix value);

    /// Leaf viewing flat[offset, offset + rows*cols) in row-major order. On
    /// backward() its gradient is added into grad_out at the same offset;
    /// an empty grad_out makes the leaf a constant.
    Var parameter(std::span<const Scalar> flat, std::size_t offset, Index rows, Index cols,
                  std::span<Scalar> grad_out);

    Var record(Matrix value, const std::vector<Var>& parents, Backward backward);

    /// Reverse sweep from a 1x1 root.
    void backward(Var root);

    const Matrix& value(int id) const { return nodes_[id].value; }
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }
    /// Gradient buffer of a node, allocated as zeros on first access.
    Matrix& grad(int id);
    /// Adds g into the gradient of node id if that node carries gradients.
    void accumulate(int id, const Matrix& g);
    template <typename Expr>
    void accumulate_expr(int id, const Expr& g) {
        if (!nodes_[id].needs_grad) return;
        grad(id).noalias() += g;
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward backward;
        bool needs_grad = false;
        bool has_grad = false;
    };
    std::vector<Node> nodes_;
};

// Elementwise and linear algebra.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Scalar s);
Var add_row(Var a, Var row);  // broadcast a 1xC row over rows of a
Var relu(Var a);
Var silu(Var a);
Var gelu(Var a);  // tanh approximation
Var tanh(Var a);
Var concat_cols(const std::vector<Var>& parts);
/// Row-major reinterpretation to [rows x cols].
Var reshape(Var a, Index rows, Index cols);
Var transpose(Var a);

// Row indexing.
Var gather_rows(Var a, std::span<const int> index);
Var scatter_add_rows(Var a, std::span<const int> index, Index out_rows);
Var scale_rows(Var a, const Vector& factors);

// Reductions and losses.
Var sum_all(Var a);
Var mean_all(Var a);
/// sum_ij weight_ij * |pred_ij - target_ij|
Var weighted_abs_error(Var pred, const Matrix& target, const Matrix& weight);
/// Mean negative log-likelihood of integer labels under row-wise softmax.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

// Network layers.
Var layer_norm(Var x, Var gamma, Var beta, Scalar eps = 1e-5);

struct ConvGeometry {
    int in_channels = 1;
    int out_channels = 1;
    int height = 1;
    int width = 1;
    int kernel_h = 3;
    int kernel_w = 3;
    int stride = 1;
    int pad = 1;
    int out_height() const { return (height + 2 * pad - kernel_h) / stride + 1; }
    int out_width() const { return (width + 2 * pad - kernel_w) / stride + 1; }
};

/// x: [batch x C_in*H*W] (channel-major images), w: [C_out x C_in*kh*kw],
/// b: [1 x C_out]. Returns [batch x C_out*H_out*W_out].
Var conv2d(Var x, Var w, Var b, const ConvGeometry& g);
/// x: [batch x C*HW] -> [batch x C], averaging each channel plane.
Var global_avg_pool(Var x, int channels, int plane);

/// Causal multi-head self-attention on [batch*seq x d] query/key/value rows.
/// Head h uses columns [h*d/H, (h+1)*d/H). Scores are scaled by score_scale.
Var causal_attention(Var q, Var k, Var v, int batch, int seq, int heads, Scalar score_scale);

}  // namespace nino::ad
