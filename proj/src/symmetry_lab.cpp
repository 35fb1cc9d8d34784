#include "nino/symmetry_lab.hpp"

#include "nino/neural_graph.hpp"
#include "nino/nino_model.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace nino {

using ad::Index;

Matrix msa_forward(const Matrix& x, const Matrix& wq, const Matrix& wk, const Matrix& wv, const Matrix& wo, int heads) {
    const Index d = wq.rows();
    if (heads < 1 || d % heads != 0) throw std::invalid_argument("msa_forward: width not divisible by heads");
    for (const Matrix* w : {&wq, &wk, &wv, &wo})
        if (w->rows() != d || w->cols() != d) throw std::invalid_argument("msa_forward: weights must be d x d");
    if (x.cols() != d) throw std::invalid_argument("msa_forward: input width differs from weights");
    const Index dh = d / heads;
    const Matrix q = x * wq, k = x * wk, v = x * wv;
    Matrix out = Matrix::Zero(x.rows(), d);
    for (int h = 0; h < heads; ++h) {
        Matrix a = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() / std::sqrt(static_cast<double>(d));
        for (Index r = 0; r < a.rows(); ++r) {
            const double m = a.row(r).maxCoeff();
            a.row(r) = (a.row(r).array() - m).exp();
            a.row(r) /= a.row(r).sum();
        }
        out += a * v.middleCols(h * dh, dh) * wo.middleRows(h * dh, dh);
    }
    return out;
}

Matrix msa_forward(const Matrix& x, std::span<const double> theta, int d, int heads) {
    const std::size_t block = static_cast<std::size_t>(d) * static_cast<std::size_t>(d);
    if (theta.size() != 4 * block) throw std::invalid_argument("msa_forward: expected 4 d x d weight matrices");
    auto w = [&](int i) {
        return Matrix(Eigen::Map<const Matrix>(theta.data() + static_cast<std::size_t>(i) * block, d, d));
    };
    return msa_forward(x, w(0), w(1), w(2), w(3), heads);
}

const char* to_string(PermKind kind) {
    switch (kind) {
        case PermKind::within_qk: return "within_qk";
        case PermKind::within_v: return "within_v";
        case PermKind::within_both: return "within_both";
        case PermKind::head_swap: return "head_swap";
        case PermKind::cross_qk: return "cross_qk";
        case PermKind::cross_v: return "cross_v";
        case PermKind::cross_joint: return "cross_joint";
        case PermKind::global: return "global";
    }
    return "?";
}

bool preserves_function(PermKind kind) { return static_cast<int>(kind) < 4; }

HiddenPermutation identity_permutation(int d) {
    HiddenPermutation p;
    p.qk.resize(static_cast<std::size_t>(d));
    std::iota(p.qk.begin(), p.qk.end(), 0);
    p.v = p.qk;
    return p;
}

namespace {

void shuffle_within_heads(std::vector<int>& perm, int heads, std::mt19937_64& rng) {
    const std::size_t dh = perm.size() / static_cast<std::size_t>(heads);
    for (int h = 0; h < heads; ++h) {
        auto first = perm.begin() + static_cast<std::ptrdiff_t>(h * dh);
        std::shuffle(first, first + static_cast<std::ptrdiff_t>(dh), rng);
    }
}

/// A random swap of two positions lying in different heads.
std::pair<std::size_t, std::size_t> cross_head_pair(int d, int heads, std::mt19937_64& rng) {
    const int dh = d / heads;
    std::uniform_int_distribution<int> pos(0, d - 1);
    for (;;) {
        const int a = pos(rng), b = pos(rng);
        if (a / dh != b / dh) return {static_cast<std::size_t>(a), static_cast<std::size_t>(b)};
    }
}

}  // namespace

bool head_consistent(const HiddenPermutation& perm, int heads) {
    const int d = static_cast<int>(perm.qk.size());
    const int dh = d / heads;
    for (int h = 0; h < heads; ++h) {
        const int target = perm.qk[static_cast<std::size_t>(h * dh)] / dh;
        for (int j = 0; j < dh; ++j) {
            const auto at = static_cast<std::size_t>(h * dh + j);
            if (perm.qk[at] / dh != target || perm.v[at] / dh != target) return false;
        }
    }
    return true;
}

namespace {

HiddenPermutation draw_permutation(PermKind kind, int d, int heads, std::mt19937_64& rng) {
    if (heads < 2 && (kind == PermKind::head_swap || kind == PermKind::cross_qk || kind == PermKind::cross_v ||
                      kind == PermKind::cross_joint))
        throw std::invalid_argument("sample_permutation: cross-head kinds need at least two heads");
    HiddenPermutation p = identity_permutation(d);
    std::uniform_int_distribution<int> swaps(1, 3);
    switch (kind) {
        case PermKind::within_qk: shuffle_within_heads(p.qk, heads, rng); break;
        case PermKind::within_v: shuffle_within_heads(p.v, heads, rng); break;
        case PermKind::within_both:
            shuffle_within_heads(p.qk, heads, rng);
            shuffle_within_heads(p.v, heads, rng);
            break;
        case PermKind::head_swap: {
            std::vector<int> order(static_cast<std::size_t>(heads));
            std::iota(order.begin(), order.end(), 0);
            while (std::is_sorted(order.begin(), order.end())) std::shuffle(order.begin(), order.end(), rng);
            const int dh = d / heads;
            for (int h = 0; h < heads; ++h)
                for (int j = 0; j < dh; ++j) p.qk[static_cast<std::size_t>(h * dh + j)] = order[static_cast<std::size_t>(h)] * dh + j;
            p.v = p.qk;
            if (std::bernoulli_distribution(0.5)(rng)) {
                shuffle_within_heads(p.qk, heads, rng);
                shuffle_within_heads(p.v, heads, rng);
            }
            break;
        }
        case PermKind::cross_qk:
        case PermKind::cross_v: {
            shuffle_within_heads(p.qk, heads, rng);
            shuffle_within_heads(p.v, heads, rng);
            auto& target = kind == PermKind::cross_qk ? p.qk : p.v;
            for (int s = swaps(rng); s > 0; --s) {
                const auto [a, b] = cross_head_pair(d, heads, rng);
                std::swap(target[a], target[b]);
            }
            break;
        }
        case PermKind::cross_joint:
            for (int s = swaps(rng); s > 0; --s) {
                const auto [a, b] = cross_head_pair(d, heads, rng);
                std::swap(p.qk[a], p.qk[b]);
            }
            p.v = p.qk;
            break;
        case PermKind::global:
            std::shuffle(p.qk.begin(), p.qk.end(), rng);
            if (std::bernoulli_distribution(0.5)(rng)) p.v = p.qk;
            else std::shuffle(p.v.begin(), p.v.end(), rng);
            break;
    }
    return p;
}

}  // namespace

HiddenPermutation sample_permutation(PermKind kind, int d, int heads, std::mt19937_64& rng) {
    if (heads < 1 || d % heads != 0) throw std::invalid_argument("sample_permutation: width not divisible by heads");
    for (;;) {
        HiddenPermutation p = draw_permutation(kind, d, heads, rng);
        if (preserves_function(kind) || !head_consistent(p, heads)) return p;
    }
}

std::vector<double> apply_permutation(std::span<const double> theta, int d, const HiddenPermutation& perm) {
    const std::size_t block = static_cast<std::size_t>(d) * static_cast<std::size_t>(d);
    if (theta.size() != 4 * block || perm.qk.size() != static_cast<std::size_t>(d) ||
        perm.v.size() != static_cast<std::size_t>(d))
        throw std::invalid_argument("apply_permutation: shape mismatch");
    std::vector<double> out(theta.begin(), theta.end());
    const auto ud = static_cast<std::size_t>(d);
    for (std::size_t r = 0; r < ud; ++r)
        for (std::size_t j = 0; j < ud; ++j) {
            const auto q = static_cast<std::size_t>(perm.qk[j]), v = static_cast<std::size_t>(perm.v[j]);
            out[0 * block + r * ud + j] = theta[0 * block + r * ud + q];
            out[1 * block + r * ud + j] = theta[1 * block + r * ud + q];
            out[2 * block + r * ud + j] = theta[2 * block + r * ud + v];
            out[3 * block + j * ud + r] = theta[3 * block + v * ud + r];
        }
    return out;
}

bool functionally_equivalent(std::span<const double> a, std::span<const double> b, int d, int heads,
                             std::mt19937_64& rng, int n_inputs, int tokens, double tol) {
    std::normal_distribution<double> g(0.0, 1.0);
    bool same = true;
    for (int i = 0; i < n_inputs; ++i) {
        Matrix x(tokens, d);
        for (Index j = 0; j < x.size(); ++j) x.data()[j] = g(rng);
        const double diff = (msa_forward(x, a, d, heads) - msa_forward(x, b, d, heads)).cwiseAbs().maxCoeff();
        same = same && diff < tol;
    }
    return same;
}

bool labels_balanced(const std::vector<int>& labels) {
    const auto good = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    return !labels.empty() && 10 * std::min(good, labels.size() - good) >= labels.size();
}

LogisticFit fit_logistic(const Matrix& features, const std::vector<int>& labels, double l2, int iterations) {
    const Index n = features.rows(), p = features.cols();
    if (static_cast<std::size_t>(n) != labels.size() || n == 0) throw std::invalid_argument("fit_logistic: shape");
    const Vector mean = features.colwise().mean().transpose();
    Vector sd = ((features.rowwise() - mean.transpose()).array().square().colwise().mean()).sqrt().transpose();
    for (Index j = 0; j < p; ++j)
        if (!(sd(j) > 0)) sd(j) = 1.0;
    Matrix z(n, p + 1);
    z.leftCols(p) = (features.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array();
    z.col(p).setOnes();
    Vector y(n);
    for (Index i = 0; i < n; ++i) y(i) = labels[static_cast<std::size_t>(i)];

    Vector w = Vector::Zero(p + 1);
    Matrix reg = Matrix::Identity(p + 1, p + 1) * (l2 * static_cast<double>(n));
    reg(p, p) = 0;
    for (int it = 0; it < iterations; ++it) {
        const Vector mu = (1.0 + (-(z * w)).array().exp()).inverse().matrix();
        const Vector grad = z.transpose() * (mu - y) + reg * w;
        const Vector s = (mu.array() * (1.0 - mu.array())).max(1e-12).matrix();
        const Matrix hess = z.transpose() * s.asDiagonal() * z + reg + 1e-10 * Matrix::Identity(p + 1, p + 1);
        const Vector step = hess.ldlt().solve(grad);
        w -= step;
        if (step.cwiseAbs().maxCoeff() < 1e-10) break;
    }
    LogisticFit fit;
    fit.weights = w.head(p);
    fit.bias = w(p);
    Index correct = 0;
    for (Index i = 0; i < n; ++i) correct += ((z.row(i).dot(w) > 0) ? 1 : 0) == labels[static_cast<std::size_t>(i)];
    fit.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return fit;
}

Matrix pca_2d(const Matrix& rows) {
    const Matrix centered = rows.rowwise() - rows.colwise().mean();
    const Matrix cov = centered.transpose() * centered / std::max<double>(1.0, static_cast<double>(rows.rows() - 1));
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    const Index p = cov.rows();
    Matrix basis(p, 2);
    basis.col(0) = es.eigenvectors().col(p - 1);
    basis.col(1) = p > 1 ? Vector(es.eigenvectors().col(p - 2)) : Vector::Zero(p);
    for (int c = 0; c < 2; ++c) {
        Index arg;
        basis.col(c).cwiseAbs().maxCoeff(&arg);
        if (basis(arg, c) < 0) basis.col(c) *= -1;
    }
    return centered * basis;
}

SymmetryResult run_symmetry_experiment(const SymmetryConfig& cfg) {
    if (cfg.permutations < 2) throw std::invalid_argument("symmetry: need at least two permutations");
    const ArchSpec spec = make_msa_only(cfg.d, cfg.heads, false);
    const std::size_t n = spec.num_params();
    for (int attempt = 0;; ++attempt) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(attempt);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> g(0.0, 1.0);
        std::vector<double> theta(n);
        for (double& v : theta) v = g(rng);

        SymmetryResult res;
        res.seed = seed;
        res.resamples = attempt;
        std::vector<std::vector<double>> permuted;
        std::uniform_int_distribution<int> kind_pick(0, kNumPermKinds - 1);
        for (int i = 0; i < cfg.permutations; ++i) {
            const auto kind = static_cast<PermKind>(kind_pick(rng));
            permuted.push_back(apply_permutation(theta, cfg.d, sample_permutation(kind, cfg.d, cfg.heads, rng)));
            const bool good =
                functionally_equivalent(theta, permuted.back(), cfg.d, cfg.heads, rng, cfg.inputs, 5, cfg.tolerance);
            res.kinds.push_back(kind);
            res.labels.push_back(good ? 1 : 0);
            res.good += good;
        }
        if (!labels_balanced(res.labels)) {
            if (attempt >= 20) throw std::runtime_error("symmetry: could not obtain balanced labels");
            continue;
        }
        for (GraphMode mode : {GraphMode::ours, GraphMode::naive}) {
            NinoConfig nc;
            nc.hidden = cfg.gnn_hidden;
            nc.depth = cfg.gnn_depth;
            nc.context = 1;
            nc.horizons = 1;
            nc.channels = 3;
            nc.word_pos_ceiling = 1;
            nc.scaling = ScalingKind::none;
            nc.mode = mode;
            nc.use_lpe = false;
            nc.seed = seed;
            NinoModel gnn(nc);
            gnn.randomize(seed, cfg.gnn_gain);
            const auto tmpl = build_template(spec, mode);
            SymmetryMode out;
            out.mode = to_string(mode);
            out.embeddings.resize(cfg.permutations, cfg.gnn_hidden);
            for (int i = 0; i < cfg.permutations; ++i) {
                const auto& p = permuted[static_cast<std::size_t>(i)];
                const Matrix w = Eigen::Map<const Matrix>(p.data(), static_cast<Index>(n), 1);
                out.embeddings.row(i) = gnn.graph_embedding(gnn.prepare(tmpl, w).second).transpose();
            }
            out.accuracy = fit_logistic(out.embeddings, res.labels).accuracy;
            out.projection = pca_2d(out.embeddings);
            res.modes.push_back(std::move(out));
        }
        return res;
    }
}

std::string SymmetryResult::summary_csv() const {
    std::ostringstream o;
    o << "mode,accuracy,n,seed\n";
    for (const auto& m : modes) o << m.mode << ',' << m.accuracy << ',' << labels.size() << ',' << seed << '\n';
    return o.str();
}

std::string SymmetryResult::projection_csv() const {
    std::ostringstream o;
    o.precision(9);
    o << "mode,index,kind,label,x,y\n";
    for (const auto& m : modes)
        for (Index i = 0; i < m.projection.rows(); ++i)
            o << m.mode << ',' << i << ',' << to_string(kinds[static_cast<std::size_t>(i)]) << ','
              << labels[static_cast<std::size_t>(i)] << ',' << m.projection(i, 0) << ',' << m.projection(i, 1) << '\n';
    return o.str();
}

}  // namespace nino
