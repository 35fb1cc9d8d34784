#include <doctest.h>

#include "nino/baselines.hpp"

#include <algorithm>
#include <numeric>
#include <random>

using namespace nino;

namespace {

// Newest-first matrix from an oldest-first list.
Matrix window_from(std::initializer_list<double> oldest_first) {
    const std::vector<double> v(oldest_first);
    Matrix w(1, static_cast<Eigen::Index>(v.size()));
    for (std::size_t j = 0; j < v.size(); ++j) w(0, static_cast<Eigen::Index>(v.size() - 1 - j)) = v[j];
    return w;
}

// Weighted normal equations per row, solved by QR on sqrt(w) X.
double oracle(const Matrix& window, int row, bool weighted) {
    const int c = static_cast<int>(window.cols());
    Matrix x(c, 2);
    Vector y(c);
    for (int j = 0; j < c; ++j) {
        const double xi = c - j;
        const double w = weighted ? (xi / c) : 1.0;
        x(j, 0) = w;
        x(j, 1) = w * xi;
        y(j) = w * window(row, j);
    }
    const Vector beta = x.colPivHouseholderQr().solve(y);
    return beta(0) + beta(1) * 2.0 * c;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, unsigned seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> g;
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

}  // namespace

TEST_CASE("linefit closed form") {
    const Matrix w = window_from({1, 2, 3, 4, 5});
    const LineFitResult r = linefit(w);
    CHECK(r.slope(0) == doctest::Approx(1.0));
    CHECK(r.intercept(0) == doctest::Approx(0.0).scale(1.0));
    CHECK(linefit_predict(w)(0) == doctest::Approx(10.0));
}

TEST_CASE("constant windows are returned exactly") {
    for (double v : {0.123456789, -3.0, 1e-7}) {
        const Matrix w = Matrix::Constant(3, 5, v);
        CHECK((linefit_predict(w).array() == v).all());
        CHECK((linefitplus_predict(w).array() == v).all());
    }
}

TEST_CASE("line fits match normal equations on noisy windows") {
    const Matrix w = random_matrix(200, 5, 17);
    const Vector a = linefit_predict(w), b = linefitplus_predict(w);
    for (int i = 0; i < 200; ++i) {
        CHECK(std::abs(a(i) - oracle(w, i, false)) <= 1e-8);
        CHECK(std::abs(b(i) - oracle(w, i, true)) <= 1e-8);
    }
}

TEST_CASE("linefit+ on linear and late-jump windows") {
    const Matrix lin = window_from({0.5, 0.7, 0.9, 1.1, 1.3});
    CHECK(linefitplus_predict(lin)(0) == doctest::Approx(linefit_predict(lin)(0)).epsilon(1e-12));
    const Matrix jump = window_from({0, 0, 0, 0, 1});
    CHECK(linefit_predict(jump)(0) == doctest::Approx(1.6));
    CHECK(linefitplus_predict(jump)(0) > linefit_predict(jump)(0));
}

TEST_CASE("line fits are shift equivariant") {
    const Matrix w = random_matrix(10, 4, 5);
    const Matrix shifted = w.array() + 2.5;
    CHECK((linefit_predict(shifted).array() - 2.5 - linefit_predict(w).array()).abs().maxCoeff() < 1e-12);
    CHECK((linefitplus_predict(shifted).array() - 2.5 - linefitplus_predict(w).array()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("horizon MAE") {
    const Matrix p = random_matrix(6, 4, 2), t = random_matrix(6, 4, 3);
    ad::Tape tape;
    CHECK(horizon_mae(tape.constant(p), p).value()(0, 0) == 0.0);
    const Matrix shifted = p.array() - 1.0;
    CHECK(horizon_mae(tape.constant(p), shifted).value()(0, 0) == doctest::Approx(1.0));
    CHECK(horizon_mae(tape.constant(p), t).value()(0, 0) == doctest::Approx(horizon_mae_reference(p, t)));
    // Masked: only the first two horizons are available.
    const Matrix t2 = t.leftCols(2);
    CHECK(horizon_mae(tape.constant(p), t2).value()(0, 0) == doctest::Approx(horizon_mae_reference(p.leftCols(2), t2)));
}

TEST_CASE("zero-initialised WNN is a no-op nowcast") {
    WnnModel plain(WnnConfig::plain(5, 16));
    WnnModel plus(WnnConfig::plus(5, 16, 8));
    auto tmpl = build_template(make_mlp({3, 4, 2}), GraphMode::ours);
    ParameterWindow w;
    w.states = random_matrix(static_cast<Eigen::Index>(tmpl->num_params()), 5, 8);
    for (const WnnModel* m : {&plain, &plus}) {
        const Vector out = m->nowcast(tmpl, w, 3);
        CHECK((out - w.states.col(0)).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK(plain.name() == "wnn");
    CHECK(plus.name() == "wnn+");
    CHECK(plain.max_horizon() == 5);
}

TEST_CASE("WNN treats parameters independently") {
    WnnConfig cfg = WnnConfig::plus(4, 8, 3);
    cfg.seed = 5;
    WnnModel m(cfg);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0, 0.3);
    for (double& v : m.params) v = g(rng);
    const Matrix x = random_matrix(30, 4, 6);
    std::vector<int> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937(3));
    Matrix px(30, 4);
    for (int i = 0; i < 30; ++i) px.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    const Matrix y = wnn_forward(m, x), py = wnn_forward(m, px);
    for (int i = 0; i < 30; ++i) CHECK((py.row(i) - y.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("WNN loss gradient matches finite differences") {
    WnnConfig cfg = WnnConfig::plus(3, 4, 2);
    cfg.seed = 2;
    WnnModel m(cfg);
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g(0, 0.5);
    for (double& v : m.params) v = g(rng);
    auto tmpl = build_template(make_mlp({2, 2}), GraphMode::ours);
    TrainingExample ex{tmpl, random_matrix(6, 3, 1), random_matrix(6, 2, 2)};
    const TrainingExample* batch[] = {&ex};
    std::vector<double> grad(m.params.size(), 0.0);
    m.loss(batch, grad);
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        const double h = 1e-6, keep = m.params[i];
        m.params[i] = keep + h;
        const double up = m.loss(batch, {});
        m.params[i] = keep - h;
        const double down = m.loss(batch, {});
        m.params[i] = keep;
        CHECK(grad[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-4).scale(1e-3));
    }
}
