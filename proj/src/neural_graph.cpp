#include "nino/neural_graph.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

namespace nino {

const char* to_string(GraphMode mode) { return mode == GraphMode::ours ? "ours" : "naive"; }

GraphMode graph_mode_from_string(const std::string& name) {
    if (name == "ours") return GraphMode::ours;
    if (name == "naive") return GraphMode::naive;
    throw std::invalid_argument("unknown graph mode '" + name + "'");
}

const char* to_string(EdgeType type) {
    static constexpr const char* names[kNumEdgeTypes] = {"linear-w", "conv-w", "bias",  "embed-w",
                                                         "lm-head-w", "norm-scale", "msa-q", "msa-k",
                                                         "msa-v",    "msa-o",  "residual", "head-link"};
    return names[static_cast<int>(type)];
}

const char* to_string(NodeRole role) {
    switch (role) {
        case NodeRole::neuron: return "neuron";
        case NodeRole::bias: return "bias";
        case NodeRole::head: return "head";
        case NodeRole::norm: return "norm";
        case NodeRole::embedding_row: return "embedding-row";
    }
    return "?";
}

std::size_t NeuralGraphTemplate::num_aux() const {
    return static_cast<std::size_t>(std::count_if(edges.begin(), edges.end(), [](const GraphEdge& e) { return e.auxiliary(); }));
}

int NeuralGraphTemplate::max_channels() const {
    std::uint32_t m = 1;
    for (const auto& e : edges) m = std::max(m, e.slot_count);
    return static_cast<int>(m);
}

void NeuralGraphTemplate::index_edges() {
    edge_src.resize(edges.size());
    edge_dst.resize(edges.size());
    edge_type.resize(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
        edge_src[e] = edges[e].src;
        edge_dst[e] = edges[e].dst;
        edge_type[e] = static_cast<int>(edges[e].type);
    }
}

std::string NeuralGraphTemplate::to_json() const {
    using nlohmann::ordered_json;
    ordered_json j;
    j["format"] = "nino.neural_graph_template";
    j["version"] = 1;
    j["mode"] = to_string(mode);
    j["arch_hash"] = spec.hash();
    j["num_nodes"] = nodes.size();
    j["num_edges"] = edges.size();
    j["num_params"] = num_params();
    j["num_aux"] = num_aux();
    ordered_json jn = ordered_json::array();
    for (const auto& n : nodes) jn.push_back({to_string(n.role), n.layer, n.group, n.word_pos});
    j["nodes"] = std::move(jn);
    ordered_json je = ordered_json::array();
    for (const auto& e : edges) {
        ordered_json params = ordered_json::array();
        for (std::uint32_t s = 0; s < e.slot_count; ++s) params.push_back(slots[e.slot_begin + s]);
        je.push_back({e.src, e.dst, to_string(e.type), std::move(params)});
    }
    j["edges"] = std::move(je);
    ordered_json jt = ordered_json::array();
    for (const auto& t : tensors) jt.push_back({t.name, t.layer, t.offset, t.rows, t.cols});
    j["tensors"] = std::move(jt);
    return j.dump();
}

namespace {

class Builder {
public:
    Builder(const ArchSpec& spec, GraphMode mode) : t_(std::make_shared<NeuralGraphTemplate>()) {
        t_->mode = mode;
        t_->spec = spec;
        t_->tensors = spec.tensors();
        t_->param_slot.assign(spec.num_params(), {-1, -1});
    }

    std::shared_ptr<NeuralGraphTemplate> run() {
        const auto& layers = t_->spec.layers;
        std::size_t tensor = 0;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            before_.push_back(current_);
            const LayerDesc& l = layers[i];
            const int li = static_cast<int>(i);
            auto next_tensor = [&]() -> const ParamTensor& { return t_->tensors.at(tensor++); };
            switch (l.kind) {
                case LayerKind::linear:
                case LayerKind::conv: {
                    ensure_input(li, l.fan_in);
                    const ParamTensor& w = next_tensor();
                    const std::vector<int> in = current_;
                    const std::vector<int> out = new_group(li, -1, l.kind == LayerKind::conv ? "conv" : "linear", l.fan_out);
                    const std::size_t kk = static_cast<std::size_t>(l.kernel_h * l.kernel_w);
                    const EdgeType type = l.kind == LayerKind::conv ? EdgeType::conv_w : EdgeType::linear_w;
                    for (int a = 0; a < l.fan_in; ++a)
                        for (int b = 0; b < l.fan_out; ++b) {
                            std::vector<std::int64_t> ps(kk);
                            for (std::size_t s = 0; s < kk; ++s)
                                ps[s] = static_cast<std::int64_t>(
                                    l.kind == LayerKind::conv
                                        ? w.offset + (static_cast<std::size_t>(b) * l.fan_in + a) * kk + s
                                        : w.offset + static_cast<std::size_t>(a) * l.fan_out + b);
                            add_edge(in[a], out[b], type, ps);
                        }
                    if (l.bias) bias_edges(li, next_tensor(), out, NodeRole::bias, EdgeType::bias);
                    current_ = out;
                    break;
                }
                case LayerKind::embedding: {
                    const ParamTensor& w = next_tensor();
                    if (l.lm_head) {
                        const std::vector<int> in = current_;
                        const std::vector<int> rows = new_rows(li, l.fan_out, l.word_positions);
                        for (int a = 0; a < l.fan_in; ++a)
                            for (int r = 0; r < l.fan_out; ++r)
                                add_edge(in[a], rows[r], EdgeType::lm_head_w,
                                         {static_cast<std::int64_t>(w.offset + static_cast<std::size_t>(a) * l.fan_out + r)});
                        current_ = rows;
                        break;
                    }
                    const std::vector<int> rows = new_rows(li, l.fan_in, l.word_positions);
                    const std::vector<int> out = l.merge ? current_ : new_group(li, -1, "embedding", l.fan_out);
                    for (int r = 0; r < l.fan_in; ++r)
                        for (int b = 0; b < l.fan_out; ++b)
                            add_edge(rows[r], out[b], EdgeType::embed_w,
                                     {static_cast<std::int64_t>(w.offset + static_cast<std::size_t>(r) * l.fan_out + b)});
                    current_ = out;
                    break;
                }
                case LayerKind::layernorm:
                    bias_edges(li, next_tensor(), current_, NodeRole::norm, EdgeType::norm_scale);
                    if (l.bias) bias_edges(li, next_tensor(), current_, NodeRole::bias, EdgeType::bias);
                    break;
                case LayerKind::msa: {
                    ensure_input(li, l.fan_in);
                    const ParamTensor& wq = next_tensor();
                    const ParamTensor& wk = next_tensor();
                    const ParamTensor& wv = next_tensor();
                    const ParamTensor& wo = next_tensor();
                    const ParamTensor* bq = nullptr;
                    const ParamTensor* bk = nullptr;
                    const ParamTensor* bv = nullptr;
                    const ParamTensor* bo = nullptr;
                    if (l.bias) {
                        bq = &next_tensor();
                        bk = &next_tensor();
                        bv = &next_tensor();
                        bo = &next_tensor();
                    }
                    if (t_->mode == GraphMode::ours) msa_ours(li, l, wq, wk, wv, wo, bq, bk, bv, bo);
                    else msa_naive(li, l, wq, wk, wv, wo, bq, bk, bv, bo);
                    break;
                }
                case LayerKind::residual: {
                    const std::vector<int>& from = before_.at(static_cast<std::size_t>(l.residual_from));
                    for (std::size_t a = 0; a < current_.size(); ++a) add_edge(from[a], current_[a], EdgeType::residual, {-1});
                    break;
                }
            }
        }
        if (tensor != t_->tensors.size()) throw SpecError("internal: not every parameter tensor was placed");
        for (std::size_t p = 0; p < t_->param_slot.size(); ++p)
            if (t_->param_slot[p][0] < 0) throw SpecError("internal: parameter without an edge slot");
        t_->index_edges();
        t_->features.lpe = compute_lpe(*t_);
        t_->features.word_pos = word_positions(*t_);
        return t_;
    }

private:
    int add_node(NodeRole role, int layer, int group, int word_pos = 0) {
        t_->nodes.push_back(GraphNode{role, layer, group, word_pos});
        return static_cast<int>(t_->nodes.size()) - 1;
    }

    std::vector<int> new_group(int layer, int head, const std::string& kind, int size) {
        const int gid = static_cast<int>(t_->groups.size());
        NeuronGroup g{layer, head, kind, static_cast<int>(t_->nodes.size()), size};
        t_->groups.push_back(g);
        std::vector<int> ids(static_cast<std::size_t>(size));
        for (int i = 0; i < size; ++i) ids[static_cast<std::size_t>(i)] = add_node(NodeRole::neuron, layer, gid);
        return ids;
    }

    std::vector<int> new_rows(int layer, int rows, bool positions) {
        std::vector<int> ids(static_cast<std::size_t>(rows));
        for (int r = 0; r < rows; ++r)
            ids[static_cast<std::size_t>(r)] = add_node(NodeRole::embedding_row, layer, -1, positions ? r + 1 : 0);
        return ids;
    }

    void ensure_input(int layer, int width) {
        if (!current_.empty()) return;
        current_ = new_group(layer, -1, "input", width);
        before_.back() = current_;
    }

    void add_edge(int src, int dst, EdgeType type, const std::vector<std::int64_t>& params) {
        const int e = static_cast<int>(t_->edges.size());
        GraphEdge edge{src, dst, type, static_cast<std::uint32_t>(t_->slots.size()), static_cast<std::uint32_t>(params.size())};
        for (std::size_t ch = 0; ch < params.size(); ++ch) {
            const std::int64_t p = params[ch];
            t_->slots.push_back(p);
            if (p < 0) continue;
            auto& slot = t_->param_slot.at(static_cast<std::size_t>(p));
            if (slot[0] >= 0) throw SpecError("internal: parameter mapped twice");
            slot = {e, static_cast<std::int32_t>(ch)};
        }
        t_->edges.push_back(edge);
    }

    void bias_edges(int layer, const ParamTensor& b, const std::vector<int>& targets, NodeRole role, EdgeType type) {
        const int node = add_node(role, layer, -1);
        for (std::size_t j = 0; j < targets.size(); ++j)
            add_edge(node, targets[j], type, {static_cast<std::int64_t>(b.offset + j)});
    }

    void msa_ours(int li, const LayerDesc& l, const ParamTensor& wq, const ParamTensor& wk, const ParamTensor& wv,
                  const ParamTensor& wo, const ParamTensor* bq, const ParamTensor* bk, const ParamTensor* bv,
                  const ParamTensor* bo) {
        const int d = l.fan_in, heads = l.heads, dh = d / heads;
        const std::vector<int> x = current_;
        std::vector<std::vector<int>> qk(static_cast<std::size_t>(heads)), val(static_cast<std::size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            qk[static_cast<std::size_t>(h)] = new_group(li, h, "qk", dh);
            val[static_cast<std::size_t>(h)] = new_group(li, h, "v", dh);
            const int head = add_node(NodeRole::head, li, -1);
            for (int j = 0; j < dh; ++j) add_edge(head, qk[static_cast<std::size_t>(h)][static_cast<std::size_t>(j)], EdgeType::head_link, {-1});
            for (int j = 0; j < dh; ++j) add_edge(head, val[static_cast<std::size_t>(h)][static_cast<std::size_t>(j)], EdgeType::head_link, {-1});
        }
        auto at = [d](const ParamTensor& w, int r, int c) {
            return static_cast<std::int64_t>(w.offset + static_cast<std::size_t>(r) * d + c);
        };
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < dh; ++j) {
                    const int col = h * dh + j;
                    const int q = qk[static_cast<std::size_t>(h)][static_cast<std::size_t>(j)];
                    const int v = val[static_cast<std::size_t>(h)][static_cast<std::size_t>(j)];
                    add_edge(x[static_cast<std::size_t>(i)], q, EdgeType::msa_q, {at(wq, i, col)});
                    add_edge(q, x[static_cast<std::size_t>(i)], EdgeType::msa_k, {at(wk, i, col)});
                    add_edge(x[static_cast<std::size_t>(i)], v, EdgeType::msa_v, {at(wv, i, col)});
                }
        const std::vector<int> out = new_group(li, -1, "msa-out", d);
        for (int h = 0; h < heads; ++h)
            for (int j = 0; j < dh; ++j)
                for (int m = 0; m < d; ++m)
                    add_edge(val[static_cast<std::size_t>(h)][static_cast<std::size_t>(j)], out[static_cast<std::size_t>(m)],
                             EdgeType::msa_o, {at(wo, h * dh + j, m)});
        if (bq) {
            std::vector<int> qk_all, v_all;
            for (int h = 0; h < heads; ++h) {
                qk_all.insert(qk_all.end(), qk[static_cast<std::size_t>(h)].begin(), qk[static_cast<std::size_t>(h)].end());
                v_all.insert(v_all.end(), val[static_cast<std::size_t>(h)].begin(), val[static_cast<std::size_t>(h)].end());
            }
            bias_edges(li, *bq, qk_all, NodeRole::bias, EdgeType::bias);
            bias_edges(li, *bk, qk_all, NodeRole::bias, EdgeType::bias);
            bias_edges(li, *bv, v_all, NodeRole::bias, EdgeType::bias);
            bias_edges(li, *bo, out, NodeRole::bias, EdgeType::bias);
        }
        current_ = out;
    }

    void msa_naive(int li, const LayerDesc& l, const ParamTensor& wq, const ParamTensor& wk, const ParamTensor& wv,
                   const ParamTensor& wo, const ParamTensor* bq, const ParamTensor* bk, const ParamTensor* bv,
                   const ParamTensor* bo) {
        const int d = l.fan_in;
        const std::vector<int> x = current_;
        const std::vector<int> mid = new_group(li, -1, "qkv", d);
        auto at = [d](const ParamTensor& w, int r, int c) {
            return static_cast<std::int64_t>(w.offset + static_cast<std::size_t>(r) * d + c);
        };
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                add_edge(x[static_cast<std::size_t>(i)], mid[static_cast<std::size_t>(j)], EdgeType::msa_q,
                         {at(wq, i, j), at(wk, i, j), at(wv, i, j)});
        const std::vector<int> out = new_group(li, -1, "msa-out", d);
        for (int j = 0; j < d; ++j)
            for (int m = 0; m < d; ++m)
                add_edge(mid[static_cast<std::size_t>(j)], out[static_cast<std::size_t>(m)], EdgeType::msa_o, {at(wo, j, m)});
        if (bq) {
            const int node = add_node(NodeRole::bias, li, -1);
            for (int j = 0; j < d; ++j)
                add_edge(node, mid[static_cast<std::size_t>(j)], EdgeType::bias,
                         {static_cast<std::int64_t>(bq->offset + j), static_cast<std::int64_t>(bk->offset + j),
                          static_cast<std::int64_t>(bv->offset + j)});
            bias_edges(li, *bo, out, NodeRole::bias, EdgeType::bias);
        }
        current_ = out;
    }

    std::shared_ptr<NeuralGraphTemplate> t_;
    std::vector<int> current_;
    std::vector<std::vector<int>> before_;
};

}  // namespace

TemplatePtr build_template(const ArchSpec& spec, GraphMode mode) {
    spec.validate();
    return Builder(spec, mode).run();
}

const std::vector<int>& NeuralGraph::src() const { return tmpl->edge_src; }
const std::vector<int>& NeuralGraph::dst() const { return tmpl->edge_dst; }

NeuralGraph attach_window(const TemplatePtr& tmpl, const ParameterWindow& window, int pad_channels) {
    if (!tmpl) throw std::invalid_argument("attach_window: null template");
    if (window.size() != tmpl->num_params())
        throw ShapeError("attach_window: window has " + std::to_string(window.size()) + " parameters, template expects " +
                         std::to_string(tmpl->num_params()));
    if (window.context() < 1) throw ShapeError("attach_window: empty window");
    const int own = tmpl->max_channels();
    const int channels = pad_channels <= 0 ? own : pad_channels;
    if (channels < own) throw ShapeError("attach_window: padding narrower than the widest edge");
    const int c = window.context();
    NeuralGraph g;
    g.tmpl = tmpl;
    g.channels = channels;
    g.context = c;
    g.edge_features = Matrix::Zero(static_cast<ad::Index>(tmpl->num_edges()), static_cast<ad::Index>(channels) * c);
    for (std::size_t e = 0; e < tmpl->edges.size(); ++e) {
        const GraphEdge& edge = tmpl->edges[e];
        auto row = g.edge_features.row(static_cast<ad::Index>(e));
        for (std::uint32_t ch = 0; ch < edge.slot_count; ++ch) {
            const std::int64_t p = tmpl->slots[edge.slot_begin + ch];
            for (int j = 0; j < c; ++j)
                row(static_cast<ad::Index>(ch) * c + j) = p < 0 ? 1.0 : window.states(static_cast<ad::Index>(p), j);
        }
    }
    g.node_features = tmpl->features;
    return g;
}

NeuralGraph attach_state(const TemplatePtr& tmpl, std::span<const double> theta, int pad_channels) {
    ParameterWindow w;
    w.states = Eigen::Map<const Matrix>(theta.data(), static_cast<ad::Index>(theta.size()), 1);
    return attach_window(tmpl, w, pad_channels);
}

std::vector<int> word_positions(const NeuralGraphTemplate& tmpl, int ceiling) {
    std::vector<int> out(tmpl.nodes.size(), 0);
    for (std::size_t i = 0; i < tmpl.nodes.size(); ++i) {
        int p = tmpl.nodes[i].word_pos;
        if (ceiling > 0) p = std::min(p, ceiling);
        out[i] = p;
    }
    return out;
}

Matrix compute_lpe(const NeuralGraphTemplate& tmpl, int dims) { return compute_lpe(tmpl, dims, nullptr); }

Matrix compute_lpe(const NeuralGraphTemplate& tmpl, int dims, Vector* eigenvalues) {
    const std::size_t n = tmpl.nodes.size();
    Matrix out = Matrix::Zero(static_cast<ad::Index>(n), dims);
    if (eigenvalues) *eigenvalues = Vector::Zero(dims);
    if (n == 0 || dims <= 0) return out;

    std::vector<std::vector<int>> nbr(n);
    for (const auto& e : tmpl.edges) {
        if (e.src == e.dst) continue;
        nbr[static_cast<std::size_t>(e.src)].push_back(e.dst);
        nbr[static_cast<std::size_t>(e.dst)].push_back(e.src);
    }
    for (auto& v : nbr) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    }

    // Structural-equivalence classes, numbered by first member.
    std::vector<int> cls(n, -1);
    std::vector<int> first_member;
    std::map<std::vector<int>, int> by_nbrs;
    for (std::size_t i = 0; i < n; ++i) {
        if (nbr[i].empty()) {
            cls[i] = static_cast<int>(first_member.size());
            first_member.push_back(static_cast<int>(i));
            continue;
        }
        auto [it, inserted] = by_nbrs.emplace(nbr[i], static_cast<int>(first_member.size()));
        if (inserted) first_member.push_back(static_cast<int>(i));
        cls[i] = it->second;
    }
    const std::size_t q = first_member.size();
    std::vector<double> csize(q, 0.0), cdeg(q, 0.0);
    for (std::size_t i = 0; i < n; ++i) csize[static_cast<std::size_t>(cls[i])] += 1.0;
    for (std::size_t c = 0; c < q; ++c) cdeg[c] = static_cast<double>(nbr[static_cast<std::size_t>(first_member[c])].size());

    // Laplacian restricted to class-constant vectors, in the orthonormal
    // basis of normalized class indicators.
    Matrix lq = Matrix::Zero(static_cast<ad::Index>(q), static_cast<ad::Index>(q));
    for (std::size_t c = 0; c < q; ++c) {
        if (cdeg[c] == 0.0) continue;
        lq(static_cast<ad::Index>(c), static_cast<ad::Index>(c)) = 1.0;
        std::vector<int> seen;
        for (int j : nbr[static_cast<std::size_t>(first_member[c])]) seen.push_back(cls[static_cast<std::size_t>(j)]);
        std::sort(seen.begin(), seen.end());
        seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
        for (int b : seen) {
            const auto bb = static_cast<std::size_t>(b);
            lq(static_cast<ad::Index>(c), b) -= std::sqrt(csize[c] * csize[bb]) / std::sqrt(cdeg[c] * cdeg[bb]);
        }
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(lq);
    const Vector lambda = eig.eigenvalues();
    const Matrix y = eig.eigenvectors();

    auto lift = [&](const Vector& yc) {
        Vector x(static_cast<ad::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(cls[i]);
            x(static_cast<ad::Index>(i)) = yc(static_cast<ad::Index>(c)) / std::sqrt(csize[c]);
        }
        return x;
    };
    auto sign_fix = [](Vector& x) {
        const double m = x.cwiseAbs().maxCoeff();
        for (ad::Index i = 0; i < x.size(); ++i)
            if (std::abs(x(i)) >= m - 1e-12) {
                if (x(i) < 0) x = -x;
                return;
            }
    };

    constexpr double trivial_tol = 1e-9;
    constexpr double repeat_tol = 1e-8;
    std::vector<std::pair<double, Vector>> picked;
    ad::Index k = 0;
    while (k < lambda.size() && static_cast<int>(picked.size()) < dims) {
        ad::Index end = k + 1;
        while (end < lambda.size() && lambda(end) - lambda(k) < repeat_tol) ++end;
        if (lambda(k) < trivial_tol) {
            k = end;
            continue;
        }
        const ad::Index m = end - k;
        const Matrix ys = y.middleCols(k, m);
        std::vector<Vector> basis;
        if (m == 1) {
            basis.push_back(lift(ys.col(0)));
        } else {
            // Projections of node indicators; class c stands for its members.
            std::vector<Vector> quotient;
            for (std::size_t c = 0; c < q && static_cast<ad::Index>(quotient.size()) < m; ++c) {
                Vector cand = ys * ys.row(static_cast<ad::Index>(c)).transpose();
                for (const Vector& b : quotient) cand -= b.dot(cand) * b;
                const double norm = cand.norm();
                if (norm < 1e-8) continue;
                quotient.push_back(cand / norm);
            }
            for (const Vector& qv : quotient) basis.push_back(lift(qv));
        }
        for (Vector& b : basis) sign_fix(b);
        std::sort(basis.begin(), basis.end(), [](const Vector& a, const Vector& b) {
            for (ad::Index i = 0; i < a.size(); ++i) {
                if (a(i) < b(i) - 1e-12) return true;
                if (a(i) > b(i) + 1e-12) return false;
            }
            return false;
        });
        for (Vector& b : basis) {
            if (static_cast<int>(picked.size()) >= dims) break;
            picked.emplace_back(lambda(k), std::move(b));
        }
        k = end;
    }
    for (std::size_t j = 0; j < picked.size(); ++j) {
        out.col(static_cast<ad::Index>(j)) = picked[j].second;
        if (eigenvalues) (*eigenvalues)(static_cast<ad::Index>(j)) = picked[j].first;
    }
    return out;
}

Vector graph_inverse(const NeuralGraphTemplate& tmpl, const Matrix& edge_slice) {
    if (edge_slice.rows() != static_cast<ad::Index>(tmpl.num_edges()) || edge_slice.cols() < tmpl.max_channels())
        throw ShapeError("graph_inverse: slice shape does not match template");
    Vector theta(static_cast<ad::Index>(tmpl.num_params()));
    for (std::size_t p = 0; p < tmpl.param_slot.size(); ++p)
        theta(static_cast<ad::Index>(p)) = edge_slice(tmpl.param_slot[p][0], tmpl.param_slot[p][1]);
    return theta;
}

Matrix edge_state(const NeuralGraph& graph, int state) {
    if (state < 0 || state >= graph.context) throw ShapeError("edge_state: state index out of range");
    Matrix out(graph.edge_features.rows(), graph.channels);
    for (int ch = 0; ch < graph.channels; ++ch) out.col(ch) = graph.edge_features.col(static_cast<ad::Index>(ch) * graph.context + state);
    return out;
}

NeuralGraph permute_nodes(const NeuralGraph& graph, std::span<const int> perm) {
    const NeuralGraphTemplate& t = *graph.tmpl;
    const std::size_t n = t.nodes.size();
    if (perm.size() != n) throw std::invalid_argument("permute_nodes: permutation length must equal node count");
    std::vector<char> hit(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const int j = perm[i];
        if (j < 0 || static_cast<std::size_t>(j) >= n || hit[static_cast<std::size_t>(j)])
            throw std::invalid_argument("permute_nodes: not a bijection");
        hit[static_cast<std::size_t>(j)] = 1;
        if (static_cast<std::size_t>(j) == i) continue;
        const GraphNode& a = t.nodes[i];
        const GraphNode& b = t.nodes[static_cast<std::size_t>(j)];
        if (a.role != NodeRole::neuron || b.role != NodeRole::neuron)
            throw std::invalid_argument("permute_nodes: only neuron nodes may be permuted");
        if (a.group != b.group) throw std::invalid_argument("permute_nodes: neurons may only move within their group");
    }
    auto moved = std::make_shared<NeuralGraphTemplate>(t);
    for (std::size_t i = 0; i < n; ++i) moved->nodes[static_cast<std::size_t>(perm[i])] = t.nodes[i];
    for (auto& e : moved->edges) {
        e.src = perm[static_cast<std::size_t>(e.src)];
        e.dst = perm[static_cast<std::size_t>(e.dst)];
    }
    moved->index_edges();
    NeuralGraph out = graph;
    out.tmpl = moved;
    for (std::size_t i = 0; i < n; ++i) {
        out.node_features.lpe.row(perm[i]) = graph.node_features.lpe.row(static_cast<ad::Index>(i));
        out.node_features.word_pos[static_cast<std::size_t>(perm[i])] = graph.node_features.word_pos[i];
    }
    moved->features = out.node_features;
    return out;
}

std::vector<std::vector<double>> canonical_edges(const NeuralGraph& graph) {
    const NeuralGraphTemplate& t = *graph.tmpl;
    std::vector<std::vector<double>> rec(t.edges.size());
    for (std::size_t e = 0; e < t.edges.size(); ++e) {
        auto& r = rec[e];
        r.reserve(3 + static_cast<std::size_t>(graph.edge_features.cols()));
        r.push_back(t.edges[e].src);
        r.push_back(t.edges[e].dst);
        r.push_back(static_cast<double>(t.edges[e].type));
        for (ad::Index c = 0; c < graph.edge_features.cols(); ++c) r.push_back(graph.edge_features(static_cast<ad::Index>(e), c));
    }
    std::sort(rec.begin(), rec.end());
    return rec;
}

namespace {

std::uint64_t mix64(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

std::uint64_t finalize(std::uint64_t x) {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdull;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ull;
    x ^= x >> 33;
    return x;
}

}  // namespace

std::uint64_t wl_signature(const NeuralGraph& graph, int rounds) {
    const NeuralGraphTemplate& t = *graph.tmpl;
    const std::size_t n = t.nodes.size();
    std::vector<std::uint64_t> edge_hash(t.edges.size());
    for (std::size_t e = 0; e < t.edges.size(); ++e) {
        std::uint64_t h = finalize(static_cast<std::uint64_t>(t.edges[e].type) + 1);
        for (ad::Index c = 0; c < graph.edge_features.cols(); ++c)
            h = mix64(h, finalize(std::bit_cast<std::uint64_t>(graph.edge_features(static_cast<ad::Index>(e), c))));
        edge_hash[e] = h;
    }
    std::vector<std::uint64_t> color(n);
    for (std::size_t i = 0; i < n; ++i)
        color[i] = finalize(mix64(static_cast<std::uint64_t>(t.nodes[i].role) + 17,
                                  static_cast<std::uint64_t>(t.nodes[i].word_pos)));
    std::vector<std::vector<std::uint64_t>> incoming(n);
    for (int r = 0; r < rounds; ++r) {
        for (auto& v : incoming) v.clear();
        for (std::size_t e = 0; e < t.edges.size(); ++e) {
            const auto s = static_cast<std::size_t>(t.edges[e].src), d = static_cast<std::size_t>(t.edges[e].dst);
            incoming[d].push_back(finalize(mix64(mix64(edge_hash[e], 1), color[s])));
            incoming[s].push_back(finalize(mix64(mix64(edge_hash[e], 2), color[d])));
        }
        std::vector<std::uint64_t> next(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::sort(incoming[i].begin(), incoming[i].end());
            std::uint64_t h = color[i];
            for (std::uint64_t v : incoming[i]) h = mix64(h, v);
            next[i] = finalize(h);
        }
        color = std::move(next);
    }
    std::sort(color.begin(), color.end());
    std::uint64_t h = finalize(n);
    for (std::uint64_t c : color) h = mix64(h, c);
    return finalize(h);
}

}  // namespace nino
