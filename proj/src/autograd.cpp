#include "nino/autograd.hpp"

#include <cmath>
#include <stdexcept>

namespace nino::ad {

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
    Node node;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(std::span<const Scalar> flat, std::size_t offset, Index rows, Index cols,
                    std::span<Scalar> grad_out) {
    if (offset + static_cast<std::size_t>(rows * cols) > flat.size())
        throw std::out_of_range("parameter slice exceeds flat vector");
    Matrix value = Eigen::Map<const Matrix>(flat.data() + offset, rows, cols);
    Node node;
    node.value = std::move(value);
    if (!grad_out.empty()) {
        if (offset + static_cast<std::size_t>(rows * cols) > grad_out.size())
            throw std::out_of_range("gradient slice exceeds flat vector");
        node.needs_grad = true;
        Scalar* dst = grad_out.data() + offset;
        node.backward = [dst, rows, cols](Tape& t, int self) {
            Eigen::Map<Matrix>(dst, rows, cols) += t.grad(self);
        };
    }
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, const std::vector<Var>& parents, Backward backward) {
    Node node;
    node.value = std::move(value);
    for (const Var& p : parents) {
        if (p.tape() != this) throw std::invalid_argument("mixing variables from different tapes");
        node.needs_grad = node.needs_grad || nodes_[p.id()].needs_grad;
    }
    if (node.needs_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad(int id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
        n.has_grad = true;
    }
    return n.grad;
}

void Tape::accumulate(int id, const Matrix& g) {
    if (!nodes_[id].needs_grad) return;
    grad(id) += g;
}

void Tape::backward(Var root) {
    if (root.tape() != this) throw std::invalid_argument("root belongs to another tape");
    if (root.rows() != 1 || root.cols() != 1) throw std::invalid_argument("backward needs a scalar root");
    if (!nodes_[root.id()].needs_grad) return;
    grad(root.id())(0, 0) = 1.0;
    for (int i = root.id(); i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.needs_grad && n.has_grad && n.backward) n.backward(*this, i);
    }
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

Scalar sigmoid(Scalar x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var matmul(Var a, Var b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = b.id();
    return t.record(a.value() * b.value(), {a, b}, [ia, ib](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        if (t.needs_grad(ia)) t.accumulate_expr(ia, g * t.value(ib).transpose());
        if (t.needs_grad(ib)) t.accumulate_expr(ib, t.value(ia).transpose() * g);
    });
}

Var transpose(Var a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    return t.record(a.value().transpose(), {a}, [ia](Tape& t, int self) {
        if (t.needs_grad(ia)) t.accumulate_expr(ia, t.grad(self).transpose());
    });
}

Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = b.id();
    return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = b.id();
    return t.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        t.accumulate(ia, g);
        t.accumulate_expr(ib, -g);
    });
}

Var mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = b.id();
    return t.record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        if (t.needs_grad(ia)) t.accumulate_expr(ia, g.cwiseProduct(t.value(ib)));
        if (t.needs_grad(ib)) t.accumulate_expr(ib, g.cwiseProduct(t.value(ia)));
    });
}

Var scale(Var a, Scalar s) {
    Tape& t = *a.tape();
    const int ia = a.id();
    return t.record(a.value() * s, {a}, [ia, s](Tape& t, int self) { t.accumulate_expr(ia, t.grad(self) * s); });
}

Var add_row(Var a, Var row) {
    if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: bad row shape");
    Tape& t = *a.tape();
    const int ia = a.id(), ir = row.id();
    Matrix out = a.value();
    out.rowwise() += row.value().row(0);
    return t.record(std::move(out), {a, row}, [ia, ir](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        t.accumulate(ia, g);
        if (t.needs_grad(ir)) t.accumulate_expr(ir, g.colwise().sum());
    });
}

Var relu(Var a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    return t.record(a.value().cwiseMax(0.0), {a}, [ia](Tape& t, int self) {
        const Matrix& x = t.value(ia);
        t.accumulate_expr(ia, t.grad(self).cwiseProduct((x.array() > 0.0).cast<Scalar>().matrix()));
    });
}

Var silu(Var a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    Matrix out = a.value().unaryExpr([](Scalar x) { return x * sigmoid(x); });
    return t.record(std::move(out), {a}, [ia](Tape& t, int self) {
        const Matrix& x = t.value(ia);
        Matrix d = x.unaryExpr([](Scalar v) {
            const Scalar s = sigmoid(v);
            return s * (1.0 + v * (1.0 - s));
        });
        t.accumulate_expr(ia, t.grad(self).cwiseProduct(d));
    });
}

Var gelu(Var a) {
    constexpr Scalar c = 0.7978845608028654;  // sqrt(2/pi)
    Tape& t = *a.tape();
    const int ia = a.id();
    Matrix out = a.value().unaryExpr([](Scalar x) { return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x))); });
    return t.record(std::move(out), {a}, [ia](Tape& t, int self) {
        const Matrix& x = t.value(ia);
        Matrix d = x.unaryExpr([](Scalar v) {
            const Scalar u = c * (v + 0.044715 * v * v * v);
            const Scalar th = std::tanh(u);
            const Scalar du = c * (1.0 + 3.0 * 0.044715 * v * v);
            return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
        });
        t.accumulate_expr(ia, t.grad(self).cwiseProduct(d));
    });
}

Var tanh(Var a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    Matrix out = a.value().array().tanh().matrix();
    return t.record(std::move(out), {a}, [ia](Tape& t, int self) {
        const Matrix& y = t.value(self);
        t.accumulate_expr(ia, t.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    Tape& t = *parts.front().tape();
    const Index rows = parts.front().rows();
    Index cols = 0;
    for (const Var& p : parts) {
        if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += p.cols();
    }
    Matrix out(rows, cols);
    std::vector<int> ids;
    std::vector<Index> offsets;
    Index off = 0;
    for (const Var& p : parts) {
        out.middleCols(off, p.cols()) = p.value();
        ids.push_back(p.id());
        offsets.push_back(off);
        off += p.cols();
    }
    return t.record(std::move(out), parts, [ids, offsets](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (!t.needs_grad(ids[i])) continue;
            t.accumulate_expr(ids[i], g.middleCols(offsets[i], t.value(ids[i]).cols()));
        }
    });
}

Var reshape(Var a, Index rows, Index cols) {
    if (rows * cols != a.rows() * a.cols()) throw std::invalid_argument("reshape: element count mismatch");
    Tape& t = *a.tape();
    const int ia = a.id();
    const Index r0 = a.rows(), c0 = a.cols();
    Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
    return t.record(std::move(out), {a}, [ia, r0, c0](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        t.accumulate_expr(ia, Eigen::Map<const Matrix>(g.data(), r0, c0));
    });
}

Var gather_rows(Var a, std::span<const int> index) {
    Tape& t = *a.tape();
    const Matrix& src = a.value();
    Matrix out(static_cast<Index>(index.size()), src.cols());
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] < 0 || index[r] >= src.rows()) throw std::out_of_range("gather_rows: index out of range");
        out.row(static_cast<Index>(r)) = src.row(index[r]);
    }
    const int ia = a.id();
    std::vector<int> idx(index.begin(), index.end());
    return t.record(std::move(out), {a}, [ia, idx = std::move(idx)](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        Matrix& ga = t.grad(ia);
        for (std::size_t r = 0; r < idx.size(); ++r) ga.row(idx[r]) += g.row(static_cast<Index>(r));
    });
}

Var scatter_add_rows(Var a, std::span<const int> index, Index out_rows) {
    if (static_cast<Index>(index.size()) != a.rows()) throw std::invalid_argument("scatter_add_rows: index size");
    Tape& t = *a.tape();
    const Matrix& src = a.value();
    Matrix out = Matrix::Zero(out_rows, src.cols());
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] < 0 || index[r] >= out_rows) throw std::out_of_range("scatter_add_rows: index out of range");
        out.row(index[r]) += src.row(static_cast<Index>(r));
    }
    const int ia = a.id();
    std::vector<int> idx(index.begin(), index.end());
    return t.record(std::move(out), {a}, [ia, idx = std::move(idx)](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        Matrix& ga = t.grad(ia);
        for (std::size_t r = 0; r < idx.size(); ++r) ga.row(static_cast<Index>(r)) += g.row(idx[r]);
    });
}

Var scale_rows(Var a, const Vector& factors) {
    if (factors.size() != a.rows()) throw std::invalid_argument("scale_rows: factor count");
    Tape& t = *a.tape();
    const int ia = a.id();
    Matrix out = factors.asDiagonal() * a.value();
    return t.record(std::move(out), {a},
                    [ia, factors](Tape& t, int self) { t.accumulate_expr(ia, factors.asDiagonal() * t.grad(self)); });
}

Var sum_all(Var a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return t.record(std::move(out), {a}, [ia](Tape& t, int self) {
        const Scalar g = t.grad(self)(0, 0);
        t.grad(ia).array() += g;
    });
}

Var mean_all(Var a) {
    const Scalar n = static_cast<Scalar>(a.rows() * a.cols());
    return scale(sum_all(a), n > 0 ? 1.0 / n : 0.0);
}

Var weighted_abs_error(Var pred, const Matrix& target, const Matrix& weight) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols() || weight.rows() != target.rows() ||
        weight.cols() != target.cols())
        throw std::invalid_argument("weighted_abs_error: shape mismatch");
    Tape& t = *pred.tape();
    const int ip = pred.id();
    Matrix diff = pred.value() - target;
    Matrix out(1, 1);
    out(0, 0) = (weight.array() * diff.array().abs()).sum();
    Matrix dsign = weight.cwiseProduct(diff.unaryExpr([](Scalar v) { return Scalar((v > 0) - (v < 0)); }));
    return t.record(std::move(out), {pred}, [ip, dsign = std::move(dsign)](Tape& t, int self) {
        t.accumulate_expr(ip, dsign * t.grad(self)(0, 0));
    });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    if (static_cast<Index>(labels.size()) != logits.rows())
        throw std::invalid_argument("softmax_cross_entropy: label count");
    Tape& t = *logits.tape();
    const Matrix& z = logits.value();
    Matrix prob(z.rows(), z.cols());
    Scalar total = 0.0;
    for (Index r = 0; r < z.rows(); ++r) {
        const Scalar m = z.row(r).maxCoeff();
        prob.row(r) = (z.row(r).array() - m).exp().matrix();
        const Scalar s = prob.row(r).sum();
        prob.row(r) /= s;
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= z.cols()) throw std::out_of_range("softmax_cross_entropy: label out of range");
        total += -(z(r, y) - m - std::log(s));
    }
    const Scalar n = static_cast<Scalar>(z.rows());
    Matrix out(1, 1);
    out(0, 0) = total / n;
    const int il = logits.id();
    std::vector<int> y(labels.begin(), labels.end());
    return t.record(std::move(out), {logits}, [il, prob = std::move(prob), y = std::move(y), n](Tape& t, int self) {
        Matrix g = prob;
        for (std::size_t r = 0; r < y.size(); ++r) g(static_cast<Index>(r), y[r]) -= 1.0;
        t.accumulate_expr(il, g * (t.grad(self)(0, 0) / n));
    });
}

Var layer_norm(Var x, Var gamma, Var beta, Scalar eps) {
    const Index d = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d)
        throw std::invalid_argument("layer_norm: parameter shape");
    Tape& t = *x.tape();
    const Matrix& xv = x.value();
    Matrix xhat(xv.rows(), d);
    Vector inv_std(xv.rows());
    for (Index r = 0; r < xv.rows(); ++r) {
        const Scalar mu = xv.row(r).mean();
        const Scalar var = (xv.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
    }
    Matrix out = xhat;
    out.array().rowwise() *= gamma.value().row(0).array();
    out.rowwise() += beta.value().row(0);
    const int ix = x.id(), ig = gamma.id(), ib = beta.id();
    return t.record(std::move(out), {x, gamma, beta},
                    [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, int self) {
                        const Matrix& g = t.grad(self);
                        if (t.needs_grad(ig)) t.accumulate_expr(ig, g.cwiseProduct(xhat).colwise().sum());
                        if (t.needs_grad(ib)) t.accumulate_expr(ib, g.colwise().sum());
                        if (!t.needs_grad(ix)) return;
                        Matrix gx = g;
                        gx.array().rowwise() *= t.value(ig).row(0).array();
                        const Scalar d = static_cast<Scalar>(gx.cols());
                        Matrix& out = t.grad(ix);
                        for (Index r = 0; r < gx.rows(); ++r) {
                            const Scalar m1 = gx.row(r).sum() / d;
                            const Scalar m2 = gx.row(r).dot(xhat.row(r)) / d;
                            out.row(r).array() += inv_std(r) * (gx.row(r).array() - m1 - xhat.row(r).array() * m2);
                        }
                    });
}

namespace {

// One image [C*H*W] -> columns [H_out*W_out x C*kh*kw].
void im2col(const Scalar* img, const ConvGeometry& g, Matrix& cols) {
    const int ho = g.out_height(), wo = g.out_width();
    cols.setZero(ho * wo, g.in_channels * g.kernel_h * g.kernel_w);
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
            const Index row = oy * wo + ox;
            Index col = 0;
            for (int c = 0; c < g.in_channels; ++c)
                for (int ky = 0; ky < g.kernel_h; ++ky)
                    for (int kx = 0; kx < g.kernel_w; ++kx, ++col) {
                        const int iy = oy * g.stride - g.pad + ky;
                        const int ix = ox * g.stride - g.pad + kx;
                        if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
                        cols(row, col) = img[(c * g.height + iy) * g.width + ix];
                    }
        }
}

void col2im_add(const Matrix& cols, const ConvGeometry& g, Scalar* img) {
    const int ho = g.out_height(), wo = g.out_width();
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
            const Index row = oy * wo + ox;
            Index col = 0;
            for (int c = 0; c < g.in_channels; ++c)
                for (int ky = 0; ky < g.kernel_h; ++ky)
                    for (int kx = 0; kx < g.kernel_w; ++kx, ++col) {
                        const int iy = oy * g.stride - g.pad + ky;
                        const int ix = ox * g.stride - g.pad + kx;
                        if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
                        img[(c * g.height + iy) * g.width + ix] += cols(row, col);
                    }
        }
}

}  // namespace

Var conv2d(Var x, Var w, Var b, const ConvGeometry& g) {
    const Index in_size = static_cast<Index>(g.in_channels) * g.height * g.width;
    const Index patch = static_cast<Index>(g.in_channels) * g.kernel_h * g.kernel_w;
    if (x.cols() != in_size) throw std::invalid_argument("conv2d: input width");
    if (w.rows() != g.out_channels || w.cols() != patch) throw std::invalid_argument("conv2d: kernel shape");
    if (b.rows() != 1 || b.cols() != g.out_channels) throw std::invalid_argument("conv2d: bias shape");
    Tape& t = *x.tape();
    const int ho = g.out_height(), wo = g.out_width();
    const Index plane = static_cast<Index>(ho) * wo;
    const Index batch = x.rows();
    Matrix out(batch, g.out_channels * plane);
    std::vector<Matrix> cols(static_cast<std::size_t>(batch));
    const Matrix& xv = x.value();
    const Matrix& wv = w.value();
    const Matrix& bv = b.value();
    for (Index n = 0; n < batch; ++n) {
        im2col(xv.row(n).data(), g, cols[static_cast<std::size_t>(n)]);
        Matrix y = wv * cols[static_cast<std::size_t>(n)].transpose();  // [C_out x plane]
        y.colwise() += bv.row(0).transpose();
        out.row(n) = Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(y.data(), y.size());
    }
    const int ix = x.id(), iw = w.id(), ib = b.id();
    return t.record(std::move(out), {x, w, b}, [ix, iw, ib, g, plane, cols = std::move(cols)](Tape& t, int self) {
        const Matrix& gout = t.grad(self);
        const Matrix& wv = t.value(iw);
        const bool gx = t.needs_grad(ix), gw = t.needs_grad(iw), gb = t.needs_grad(ib);
        for (Index n = 0; n < gout.rows(); ++n) {
            Eigen::Map<const Matrix> gy(gout.row(n).data(), g.out_channels, plane);
            if (gw) t.accumulate_expr(iw, gy * cols[static_cast<std::size_t>(n)]);
            if (gb) t.grad(ib).row(0) += gy.rowwise().sum().transpose();
            if (gx) {
                Matrix gcols = gy.transpose() * wv;  // [plane x patch]
                col2im_add(gcols, g, t.grad(ix).row(n).data());
            }
        }
    });
}

Var global_avg_pool(Var x, int channels, int plane) {
    if (x.cols() != static_cast<Index>(channels) * plane) throw std::invalid_argument("global_avg_pool: width");
    Tape& t = *x.tape();
    Matrix out(x.rows(), channels);
    const Matrix& xv = x.value();
    for (Index n = 0; n < xv.rows(); ++n)
        for (int c = 0; c < channels; ++c) out(n, c) = xv.row(n).segment(static_cast<Index>(c) * plane, plane).mean();
    const int ix = x.id();
    return t.record(std::move(out), {x}, [ix, channels, plane](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        Matrix& gx = t.grad(ix);
        for (Index n = 0; n < g.rows(); ++n)
            for (int c = 0; c < channels; ++c)
                gx.row(n).segment(static_cast<Index>(c) * plane, plane).array() += g(n, c) / plane;
    });
}

Var causal_attention(Var q, Var k, Var v, int batch, int seq, int heads, Scalar score_scale) {
    check_same_shape(q, k, "causal_attention");
    check_same_shape(q, v, "causal_attention");
    const Index d = q.cols();
    if (q.rows() != static_cast<Index>(batch) * seq) throw std::invalid_argument("causal_attention: row count");
    if (heads <= 0 || d % heads != 0) throw std::invalid_argument("causal_attention: heads must divide width");
    const Index dh = d / heads;
    Tape& t = *q.tape();
    const Matrix& qv = q.value();
    const Matrix& kv = k.value();
    const Matrix& vv = v.value();
    Matrix out = Matrix::Zero(qv.rows(), d);
    std::vector<Matrix> probs(static_cast<std::size_t>(batch) * heads);
    for (int b = 0; b < batch; ++b)
        for (int h = 0; h < heads; ++h) {
            const Index r0 = static_cast<Index>(b) * seq;
            auto qb = qv.block(r0, h * dh, seq, dh);
            auto kb = kv.block(r0, h * dh, seq, dh);
            auto vb = vv.block(r0, h * dh, seq, dh);
            Matrix s = (qb * kb.transpose()) * score_scale;
            Matrix& p = probs[static_cast<std::size_t>(b) * heads + h];
            p = Matrix::Zero(seq, seq);
            for (int i = 0; i < seq; ++i) {
                const Scalar m = s.row(i).head(i + 1).maxCoeff();
                Scalar z = 0.0;
                for (int j = 0; j <= i; ++j) {
                    p(i, j) = std::exp(s(i, j) - m);
                    z += p(i, j);
                }
                p.row(i).head(i + 1) /= z;
            }
            out.block(r0, h * dh, seq, dh) = p * vb;
        }
    const int iq = q.id(), ik = k.id(), iv = v.id();
    return t.record(std::move(out), {q, k, v},
                    [iq, ik, iv, batch, seq, heads, dh, score_scale, probs = std::move(probs)](Tape& t, int self) {
                        const Matrix& g = t.grad(self);
                        const Matrix& qv = t.value(iq);
                        const Matrix& kv = t.value(ik);
                        const Matrix& vv = t.value(iv);
                        Matrix& gq = t.grad(iq);
                        Matrix& gk = t.grad(ik);
                        Matrix& gv = t.grad(iv);
                        for (int b = 0; b < batch; ++b)
                            for (int h = 0; h < heads; ++h) {
                                const Index r0 = static_cast<Index>(b) * seq;
                                const Matrix& p = probs[static_cast<std::size_t>(b) * heads + h];
                                auto gb = g.block(r0, h * dh, seq, dh);
                                gv.block(r0, h * dh, seq, dh).noalias() += p.transpose() * gb;
                                Matrix gp = gb * vv.block(r0, h * dh, seq, dh).transpose();
                                Matrix gs(seq, seq);
                                for (int i = 0; i < seq; ++i) {
                                    const Scalar dot = p.row(i).dot(gp.row(i));
                                    gs.row(i) = p.row(i).cwiseProduct((gp.row(i).array() - dot).matrix());
                                }
                                gs *= score_scale;
                                gq.block(r0, h * dh, seq, dh).noalias() += gs * kv.block(r0, h * dh, seq, dh);
                                gk.block(r0, h * dh, seq, dh).noalias() += gs.transpose() * qv.block(r0, h * dh, seq, dh);
                            }
                    });
}

}  // namespace nino::ad
