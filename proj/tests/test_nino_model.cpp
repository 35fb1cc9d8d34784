#include <doctest.h>

#include "nino/nino_model.hpp"

#include <algorithm>
#include <numeric>
#include <random>

using namespace nino;
using ad::Tape;
using ad::Var;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, unsigned seed, double sd = 1.0) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> g(0.0, sd);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

NinoConfig small_config(int d = 16, int m = 2, int c = 3, int k = 4) {
    NinoConfig cfg;
    cfg.hidden = d;
    cfg.depth = m;
    cfg.context = c;
    cfg.horizons = k;
    cfg.channels = 1;
    cfg.word_pos_ceiling = 20;
    cfg.seed = 3;
    return cfg;
}

// Graph with random topology and features on n nodes; nodes are relabelled by perm.
NeuralGraph random_graph(int n, int e, int width, unsigned seed, const std::vector<int>* perm = nullptr) {
    std::mt19937 rng(seed);
    std::uniform_int_distribution<int> node(0, n - 1), type(0, kNumEdgeTypes - 1), pos(0, 5);
    auto t = std::make_shared<NeuralGraphTemplate>();
    t->nodes.resize(static_cast<std::size_t>(n));
    NodeFeatures f;
    f.lpe = random_matrix(n, kLpeDim, seed + 1);
    f.word_pos.resize(static_cast<std::size_t>(n));
    for (auto& w : f.word_pos) w = pos(rng);
    for (int i = 0; i < e; ++i) {
        GraphEdge edge;
        edge.src = node(rng);
        edge.dst = node(rng);
        edge.type = static_cast<EdgeType>(type(rng));
        t->edges.push_back(edge);
    }
    const Matrix feats = random_matrix(e, width, seed + 2);
    if (perm) {
        NodeFeatures pf = f;
        for (int i = 0; i < n; ++i) {
            pf.lpe.row((*perm)[static_cast<std::size_t>(i)]) = f.lpe.row(i);
            pf.word_pos[static_cast<std::size_t>((*perm)[static_cast<std::size_t>(i)])] = f.word_pos[static_cast<std::size_t>(i)];
        }
        f = pf;
        for (auto& edge : t->edges) {
            edge.src = (*perm)[static_cast<std::size_t>(edge.src)];
            edge.dst = (*perm)[static_cast<std::size_t>(edge.dst)];
        }
    }
    t->features = f;
    t->index_edges();
    NeuralGraph g;
    g.tmpl = t;
    g.context = width;
    g.channels = 1;
    g.edge_features = feats;
    g.node_features = f;
    return g;
}

// Hidden neuron swap (a, b) of an MLP [in, h, out] as a flat index map.
std::vector<int> mlp_hidden_swap(const ArchSpec& spec, int a, int b) {
    const auto t = spec.tensors();
    std::vector<int> p(spec.num_params());
    std::iota(p.begin(), p.end(), 0);
    const int h = static_cast<int>(t[0].cols);
    auto sw = [&p](std::size_t i, std::size_t j) { std::swap(p[i], p[j]); };
    for (std::size_t r = 0; r < t[0].rows; ++r) sw(t[0].offset + r * h + a, t[0].offset + r * h + b);
    sw(t[1].offset + a, t[1].offset + b);
    const std::size_t out = t[2].cols;
    for (std::size_t c = 0; c < out; ++c) sw(t[2].offset + a * out + c, t[2].offset + b * out + c);
    return p;
}

Matrix apply_rows(const Matrix& m, const std::vector<int>& p) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < p.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(p[i]);
    return out;
}

}  // namespace

TEST_CASE("k-decay schedule") {
    CHECK(k_decay(0, 10000, 40, 2.0) == 40);
    CHECK(k_decay(10000, 10000, 40, 2.0) == 1);
    CHECK(k_decay(5000, 10000, 40, 2.0) == 10);
    int prev = 40;
    for (long t = 0; t <= 10000; t += 50) {
        const int k = k_decay(t, 10000, 40, 2.0);
        CHECK(k <= prev);
        prev = k;
    }
    CHECK(k_decay(1234, 4000, 7, 0.0) == 7);
    CHECK_THROWS(k_decay(0, 0, 40, 2.0));
    CHECK_THROWS(k_decay(11, 10, 40, 2.0));
}

TEST_CASE("embedding shapes and edge-type-only embedding") {
    NinoModel model(small_config(16, 1, 5, 2));
    auto tmpl = build_template(make_mlp({3, 2, 1}), GraphMode::ours);
    ParameterWindow w;
    w.states = random_matrix(11, 5, 1);
    NeuralGraph g = attach_window(tmpl, w, 1);
    Tape t;
    auto [v, e] = model.embed(t, g, {});
    CHECK(v.rows() == 8);
    CHECK(v.cols() == 16);
    CHECK(e.rows() == 11);
    CHECK(e.cols() == 16);

    g.edge_features.setZero();
    Tape t2;
    auto [v2, e2] = model.embed(t2, g, {});
    // Rows with the same type are identical and independent of the features.
    for (std::size_t a = 0; a < tmpl->num_edges(); ++a)
        for (std::size_t b = 0; b < tmpl->num_edges(); ++b)
            if (tmpl->edges[a].type == tmpl->edges[b].type)
                CHECK(e2.value().row(static_cast<Eigen::Index>(a)) == e2.value().row(static_cast<Eigen::Index>(b)));
    NinoConfig no_type = small_config(16, 1, 5, 2);
    no_type.use_edge_type = false;
    NinoModel bare(no_type);
    Tape t3;
    CHECK(bare.embed(t3, g, {}).second.value().cwiseAbs().maxCoeff() == 0.0);

    ParameterWindow short_window;
    short_window.states = random_matrix(11, 4, 1);
    CHECK_THROWS_AS(model.nowcast(tmpl, short_window, 1), ShapeError);
}

TEST_CASE("isolated node aggregates to zero") {
    NinoModel model(small_config(8, 1, 2, 1));
    NeuralGraph g = random_graph(5, 6, 2, 11);
    auto t = std::make_shared<NeuralGraphTemplate>(*g.tmpl);
    t->nodes.emplace_back();
    g.node_features.lpe.conservativeResize(6, kLpeDim);
    g.node_features.lpe.row(5) = random_matrix(1, kLpeDim, 4);
    g.node_features.word_pos.push_back(3);
    t->features = g.node_features;
    g.tmpl = t;
    Tape tape;
    auto [v, e] = model.embed(tape, g, {});
    auto [v1, e1] = model.gnn_layer(tape, 0, v, e, g, {});
    // phi_a(0) for the isolated node, computed from a zero input row.
    NeuralGraph lone = random_graph(1, 0, 2, 1);
    Tape t2;
    auto [lv, le] = model.embed(t2, lone, {});
    auto [lv1, le1] = model.gnn_layer(t2, 0, lv, le, lone, {});
    CHECK((v1.value().row(5) - lv1.value().row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("GNN layers are permutation equivariant") {
    NinoModel model(small_config(16, 3, 4, 2));
    for (unsigned seed = 0; seed < 5; ++seed) {
        const int n = 10 + static_cast<int>(seed) * 9;
        std::vector<int> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), std::mt19937(seed));
        NeuralGraph g = random_graph(n, 3 * n, 4, 100 + seed);
        NeuralGraph p = random_graph(n, 3 * n, 4, 100 + seed, &perm);
        Tape ta, tb;
        auto [va, ea] = model.embed(ta, g, {});
        auto [vb, eb] = model.embed(tb, p, {});
        for (int m = 0; m < 3; ++m) {
            std::tie(va, ea) = model.gnn_layer(ta, m, va, ea, g, {});
            std::tie(vb, eb) = model.gnn_layer(tb, m, vb, eb, p, {});
        }
        double node_err = 0.0;
        for (int i = 0; i < n; ++i)
            node_err = std::max(node_err, (va.value().row(i) - vb.value().row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff());
        CHECK(node_err < 1e-6);
        CHECK((ea.value() - eb.value()).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("DMS head shape, zero head and pipeline composition") {
    NinoConfig cfg = small_config(8, 1, 2, 40);
    NinoModel model(cfg);
    auto tmpl = build_template(make_mlp({3, 2, 1}), GraphMode::ours);
    ParameterWindow w;
    w.states = random_matrix(11, 2, 5);
    auto [scaler, g] = model.prepare(tmpl, w.states);
    Tape t;
    Var pred = model.forward(t, g, {});
    CHECK(pred.cols() == 40);
    CHECK(pred.rows() == 11);

    // Horizon k through edge_to_param equals graph_inverse of that channel.
    const Matrix per_param = edge_to_param(pred, *tmpl, 1, 40).value();
    for (int k : {0, 17, 39}) {
        const Vector inv = graph_inverse(*tmpl, pred.value().col(k));
        CHECK((inv - per_param.col(k)).cwiseAbs().maxCoeff() == 0.0);
    }
    const Vector theta_hat = model.nowcast(tmpl, w, 7);
    const Vector expected = w.states.col(0) + scaler.unscale_delta(per_param.col(6)).col(0);
    CHECK((theta_hat - expected).cwiseAbs().maxCoeff() < 1e-12);

    // Zero head (last D*K weights and K biases) -> zero deltas -> theta_tau.
    NinoModel zero(cfg);
    std::fill(zero.params.end() - static_cast<long>(8 * 40 + 40), zero.params.end(), 0.0);
    CHECK((zero.nowcast(tmpl, w, 3) - w.states.col(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("DMS loss values") {
    auto tmpl = build_template(make_cnn(1, {2}, 2), GraphMode::ours);
    const int ch = 9, k = 3;
    const Matrix pred = random_matrix(static_cast<Eigen::Index>(tmpl->num_edges()), ch * k, 3);
    Tape t;
    Var p = t.constant(pred);
    const Matrix per = edge_to_param(p, *tmpl, ch, k).value();
    CHECK(dms_loss(p, *tmpl, ch, k, per).value()(0, 0) == 0.0);
    const Matrix off = per.array() + 1.0;
    CHECK(dms_loss(p, *tmpl, ch, k, off).value()(0, 0) == doctest::Approx(1.0));
    // Scalar loop oracle: walk each parameter to its (edge, channel) slot.
    const Matrix target = random_matrix(static_cast<Eigen::Index>(tmpl->num_params()), 2, 4);
    double total = 0.0;
    for (int h = 0; h < 2; ++h) {
        double s = 0.0;
        for (std::size_t e = 0; e < tmpl->num_edges(); ++e)
            for (std::uint32_t c = 0; c < tmpl->edges[e].slot_count; ++c) {
                const std::int64_t q = tmpl->slots[tmpl->edges[e].slot_begin + c];
                if (q < 0) continue;
                s += std::abs(pred(static_cast<Eigen::Index>(e), c * k + h) - target(q, h));
            }
        total += s / static_cast<double>(tmpl->num_params());
    }
    CHECK(dms_loss(p, *tmpl, ch, k, target).value()(0, 0) == doctest::Approx(total / 2.0).epsilon(1e-12));
}

TEST_CASE("DMS loss gradient matches central differences") {
    NinoConfig cfg = small_config(6, 2, 2, 3);
    cfg.word_pos_ceiling = 3;
    NinoModel model(cfg);
    const ArchSpec spec = make_mlp({3, 4, 2});
    auto tmpl = build_template(spec, GraphMode::ours);
    REQUIRE(spec.num_params() <= 200);
    TrainingExample ex{tmpl, random_matrix(static_cast<Eigen::Index>(spec.num_params()), 2, 1),
                       random_matrix(static_cast<Eigen::Index>(spec.num_params()), 3, 2, 0.1)};
    const TrainingExample* batch[] = {&ex};
    std::vector<double> grad(model.params.size(), 0.0);
    model.loss(batch, grad);
    int checked = 0, bad = 0;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const double h = 1e-5, keep = model.params[i];
        model.params[i] = keep + h;
        const double up = model.loss(batch, {});
        model.params[i] = keep - h;
        const double down = model.loss(batch, {});
        model.params[i] = keep;
        const double fd = (up - down) / (2 * h);
        ++checked;
        if (std::abs(fd - grad[i]) > 1e-4 * std::max(1.0, std::abs(fd))) ++bad;
    }
    CHECK(checked == static_cast<int>(model.params.size()));
    CHECK(bad == 0);
}

TEST_CASE("nowcast and graph embedding respect function-preserving permutations") {
    NinoConfig cfg = small_config(12, 2, 3, 4);
    NinoModel model(cfg);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 0.3);
    for (double& v : model.params) v = g(rng);
    const ArchSpec spec = make_mlp({3, 4, 2});
    auto tmpl = build_template(spec, GraphMode::ours);
    ParameterWindow w;
    w.states = random_matrix(static_cast<Eigen::Index>(spec.num_params()), 3, 9);
    const auto perm = mlp_hidden_swap(spec, 0, 2);
    ParameterWindow pw;
    pw.states = apply_rows(w.states, perm);
    const Vector a = model.nowcast(tmpl, w, 2);
    const Vector b = model.nowcast(tmpl, pw, 2);
    Vector pa(a.size());
    for (std::size_t i = 0; i < perm.size(); ++i) pa(static_cast<Eigen::Index>(i)) = a(perm[i]);
    CHECK((pa - b).cwiseAbs().maxCoeff() < 1e-5);
    const Vector ea = model.graph_embedding(model.prepare(tmpl, w.states).second);
    const Vector eb = model.graph_embedding(model.prepare(tmpl, pw.states).second);
    CHECK((ea - eb).cwiseAbs().maxCoeff() < 1e-5);
    CHECK(ea.size() == 12);
    // A different architecture lives in the same space.
    auto other = build_template(make_mlp({2, 5}), GraphMode::ours);
    CHECK(model.graph_embedding(model.prepare(other, random_matrix(15, 3, 2)).second).size() == 12);
}

TEST_CASE("single-edge graph embedding is that edge's state") {
    NinoModel model(small_config(8, 1, 2, 1));
    NeuralGraph g = random_graph(2, 1, 2, 3);
    Tape t;
    Var last;
    model.forward(t, g, {}, &last);
    CHECK((model.graph_embedding(g) - last.value().row(0).transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("config json roundtrip and validation") {
    NinoConfig cfg = small_config();
    cfg.mode = GraphMode::naive;
    cfg.use_lpe = false;
    const NinoConfig back = NinoConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    NinoConfig bad = cfg;
    bad.hidden = 0;
    CHECK_THROWS(NinoModel{bad});
    NinoModel m(cfg);
    auto conv = build_template(make_cnn(1, {2}, 2), GraphMode::ours);
    CHECK_THROWS_AS(m.prepare(conv, Matrix::Zero(static_cast<Eigen::Index>(conv->num_params()), 3)), ShapeError);
}
