#include <doctest.h>

#include "nino/checkpoint.hpp"
#include "nino/harness.hpp"
#include "nino/nino_model.hpp"

#include <cmath>

using namespace nino;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("nino_harness_" + name);
    fs::remove_all(p);
    return p;
}

/// Loss g . theta: Adam sees a constant gradient, so every coordinate moves
/// by a constant amount per step and the trajectory is exactly linear.
class LinearObjective : public Task {
public:
    explicit LinearObjective(TaskSpec spec) : Task(std::move(spec)) {
        g_.resize(num_params());
        for (std::size_t i = 0; i < g_.size(); ++i) g_[i] = (i % 3 == 0 ? -1.0 : 0.5) * (1.0 + 0.1 * double(i));
    }
    double loss_grad(std::span<const double> theta, std::span<double> grad, std::mt19937_64&) const override {
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g_[i];
        return objective(theta);
    }
    double evaluate(std::span<const double> theta, Split) const override { return objective(theta); }
    double mean_loss(std::span<const double> theta, Split) const override { return objective(theta); }

private:
    double objective(std::span<const double> theta) const {
        double s = 0;
        for (std::size_t i = 0; i < theta.size(); ++i) s += g_[i] * theta[i];
        return s;
    }
    std::vector<double> g_;
};

TaskSpec linear_spec(long T) {
    TaskSpec s;
    s.id = "linear";
    s.dataset = "none";
    s.model = ModelKind::mlp;
    s.arch = make_mlp({3, 2});
    s.lr = 1e-2;
    s.total_steps = T;
    s.eval_every = 10;
    s.metric = MetricKind::perplexity;  // lower is better
    s.target = -1e9;
    return s;
}

/// Returns the newest state: a nowcast that changes nothing.
class HoldNowcaster : public Nowcaster {
public:
    std::string name() const override { return "hold"; }
    int context() const override { return 3; }
    int max_horizon() const override { return 4; }
    bool uses_k_decay() const override { return true; }
    Vector nowcast(const TemplatePtr&, const ParameterWindow& w, int k) const override {
        ks.push_back(k);
        return w.states.col(0);
    }
    mutable std::vector<int> ks;
};

class NanNowcaster : public HoldNowcaster {
public:
    std::string name() const override { return "nan"; }
    Vector nowcast(const TemplatePtr&, const ParameterWindow& w, int) const override {
        return Vector::Constant(w.states.rows(), std::nan(""));
    }
};

/// Produces a NaN loss from the given call on.
class FlakyWnn : public WnnModel {
public:
    FlakyWnn(WnnConfig cfg, int fail_at) : WnnModel(cfg), fail_at_(fail_at) {}
    double loss(std::span<const TrainingExample* const> batch, std::span<double> grad) const override {
        if (calls_++ >= fail_at_) return std::nan("");
        return WnnModel::loss(batch, grad);
    }

private:
    int fail_at_;
    mutable int calls_ = 0;
};

RunTrace trace_of(const std::string& task, const std::string& method, std::uint64_t seed,
                  const std::vector<std::pair<long, double>>& points) {
    RunTrace t;
    t.task_id = task;
    t.method = method;
    t.seed = seed;
    for (auto [s, m] : points) {
        t.eval_steps.push_back(s);
        t.metric.push_back(m);
        t.train_loss.push_back(0);
    }
    return t;
}

}  // namespace

TEST_CASE("nowcast schedule enumerates multiples of c * stride below T") {
    CHECK(nowcast_schedule(4000, 5, 200) == std::vector<long>{1000, 2000, 3000});
    CHECK(nowcast_schedule(1000, 5, 200).empty());
    CHECK(nowcast_schedule(1001, 5, 200) == std::vector<long>{1000});
}

TEST_CASE("a no-op nowcaster leaves the base optimizer trace unchanged") {
    auto task = Task::build(task_preset("mlp-blobs"), default_data_root());
    HoldNowcaster hold;
    AccelConfig cfg;
    cfg.stride = 10;
    const RunTrace base = accelerated_train(*task, nullptr, cfg, 4);
    const RunTrace held = accelerated_train(*task, &hold, cfg, 4);
    CHECK(base.method == "adam");
    CHECK(base.metric == held.metric);
    CHECK(base.eval_steps == held.eval_steps);
    std::vector<long> at;
    for (const auto& e : held.events) {
        at.push_back(e.step);
        CHECK(e.applied);
        CHECK(e.adam_hash_before == e.adam_hash_after);
    }
    CHECK(at == nowcast_schedule(task->spec().total_steps, 3, 10));
    // k-decay with K = 4, p = 2 over T = 400 at t = 30, 60, ...
    REQUIRE(!hold.ks.empty());
    CHECK(hold.ks.front() == k_decay(30, 400, 4, 2.0));
    CHECK(std::is_sorted(hold.ks.rbegin(), hold.ks.rend()));
}

TEST_CASE("Linefit on an exactly linear trajectory jumps to the true future state") {
    LinearObjective task(linear_spec(200));
    LinefitNowcaster lf(5, false);
    AccelConfig cfg;
    cfg.stride = 10;
    const RunTrace base = accelerated_train(task, nullptr, cfg, 0);
    const RunTrace fast = accelerated_train(task, &lf, cfg, 0);
    REQUIRE(fast.events.size() == 3);
    CHECK(fast.events[0].step == 50);
    // States at 10..50 extrapolate to step 100; evaluation at 50 runs after the jump.
    auto at = [](const RunTrace& t, long s) {
        for (std::size_t i = 0; i < t.eval_steps.size(); ++i)
            if (t.eval_steps[i] == s) return t.metric[i];
        return std::nan("");
    };
    CHECK(at(fast, 50) == doctest::Approx(at(base, 100)).epsilon(1e-10));
    CHECK(at(fast, 40) == doctest::Approx(at(base, 40)).epsilon(1e-12));
}

TEST_CASE("non-finite predictions are skipped and logged") {
    auto task = Task::build(task_preset("mlp-blobs"), default_data_root());
    NanNowcaster nan;
    AccelConfig cfg;
    cfg.stride = 10;
    const RunTrace base = accelerated_train(*task, nullptr, cfg, 2);
    const RunTrace t = accelerated_train(*task, &nan, cfg, 2);
    REQUIRE(!t.events.empty());
    for (const auto& e : t.events) {
        CHECK(!e.applied);
        CHECK(e.note.find("non-finite") != std::string::npos);
    }
    CHECK(t.metric == base.metric);
}

TEST_CASE("time to target and the speedup report") {
    TaskSpec spec = task_preset("fm16");
    spec.target = 0.8;
    const auto never = trace_of("fm16", "adam", 0, {{0, 0.1}, {100, 0.5}});
    CHECK_FALSE(time_to_target(never, spec).has_value());
    CHECK(time_to_target(trace_of("fm16", "adam", 0, {{0, 0.1}, {50, 0.81}, {100, 0.79}}), spec) == 50);

    CHECK(reduction_percent(8606, 4582) == doctest::Approx(46.758).epsilon(1e-4));
    std::vector<RunTrace> traces;
    for (std::uint64_t s = 0; s < 3; ++s) {
        traces.push_back(trace_of("fm16", "adam", s, {{0, 0.1}, {8606, 0.9}}));
        traces.push_back(trace_of("fm16", "nino", s, {{0, 0.1}, {4582, 0.9}}));
        traces.push_back(trace_of("fm16", "same", s, {{0, 0.1}, {8606, 0.9}}));
    }
    // two of three reach: median over the reaching ones
    traces.push_back(trace_of("fm16", "lf", 0, {{1000, 0.9}}));
    traces.push_back(trace_of("fm16", "lf", 1, {{3000, 0.9}}));
    traces.push_back(trace_of("fm16", "lf", 2, {{3000, 0.1}}));
    // one of three reaches: failed
    traces.push_back(trace_of("fm16", "bad", 0, {{1000, 0.9}}));
    traces.push_back(trace_of("fm16", "bad", 1, {{3000, 0.1}}));
    traces.push_back(trace_of("fm16", "bad", 2, {{3000, 0.1}}));
    const auto report = build_report(traces, {spec});
    REQUIRE(report.tasks.size() == 1);
    const auto& m = report.tasks[0].methods;
    REQUIRE(m.size() == 5);
    CHECK(m[0].method == "adam");
    auto find = [&](const std::string& name) {
        return *std::find_if(m.begin(), m.end(), [&](const MethodSummary& s) { return s.method == name; });
    };
    CHECK(*find("nino").reduction == doctest::Approx(reduction_percent(8606, 4582)));
    CHECK(*find("same").reduction == 0.0);
    CHECK(*find("lf").median_steps == 2000.0);
    CHECK(find("bad").failed);
    CHECK_FALSE(find("bad").reduction.has_value());
    CHECK(report.to_text().find("failed") != std::string::npos);
    CHECK(report.to_csv().find("fm16,accuracy,0.8,nino,3,3,4582,") != std::string::npos);
}

TEST_CASE("majority median matches a scalar recomputation") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::optional<long>> v;
        const int n = 1 + int(rng() % 7);
        std::vector<long> reached;
        for (int i = 0; i < n; ++i) {
            if (rng() % 3 == 0) v.push_back(std::nullopt);
            else {
                v.push_back(long(rng() % 1000));
                reached.push_back(*v.back());
            }
        }
        std::sort(reached.begin(), reached.end());
        const auto got = majority_median(v);
        if (2 * reached.size() <= std::size_t(n)) {
            CHECK_FALSE(got.has_value());
        } else {
            const std::size_t r = reached.size();
            const double want = r % 2 ? double(reached[r / 2]) : 0.5 * double(reached[r / 2 - 1] + reached[r / 2]);
            CHECK(*got == want);
        }
    }
}

TEST_CASE("traces roundtrip through JSON files") {
    const fs::path dir = fresh_dir("traces");
    auto task = Task::build(task_preset("mlp-blobs"), default_data_root());
    LinefitNowcaster lf(5, true);
    AccelConfig cfg;
    cfg.stride = 10;
    const RunTrace t = accelerated_train(*task, &lf, cfg, 1);
    save_trace(dir, t);
    const auto back = load_traces(dir);
    REQUIRE(back.size() == 1);
    CHECK(back[0].to_json() == t.to_json());
    CHECK(load_traces(dir / "none").empty());
}

TEST_CASE("meta-training on linear dynamics, checkpoint resume and divergence") {
    const ArchSpec arch = make_mlp({4, 6, 3});
    auto tmpl = build_template(arch, GraphMode::ours);
    WindowDataset data(5, 5);
    for (int r = 0; r < 6; ++r) data.add_run(tmpl, linear_trajectory(arch.num_params(), 20, 100 + r));

    MetaTrainConfig cfg;
    cfg.iterations = 400;
    cfg.seed = 3;
    cfg.checkpoint_every = 100;

    SUBCASE("loss falls below 10% of its initial value") {
        WnnModel wnn(WnnConfig::plus(5, 16, 5));
        const auto r = meta_train(wnn, data, cfg);
        REQUIRE(r.losses.size() == 400);
        double head = 0, tail = 0;
        for (int i = 0; i < 10; ++i) head += r.losses[std::size_t(i)] / 10;
        for (int i = 390; i < 400; ++i) tail += r.losses[std::size_t(i)] / 10;
        CHECK(tail < 0.1 * head);
    }
    SUBCASE("resume reproduces the next-step loss") {
        const fs::path dir = fresh_dir("resume");
        cfg.iterations = 60;
        cfg.checkpoint_every = 0;
        WnnModel full(WnnConfig::plus(5, 16, 5));
        const auto all = meta_train(full, data, cfg);
        cfg.checkpoint_path = dir / "meta.ckpt";
        cfg.stop_after = 30;
        WnnModel first(WnnConfig::plus(5, 16, 5));
        const auto a = meta_train(first, data, cfg);
        CHECK(a.iteration == 30);
        cfg.stop_after = 0;
        WnnModel second(WnnConfig::plus(5, 16, 5));
        const auto b = meta_train(second, data, cfg, true);
        REQUIRE(b.losses.size() == 30);
        CHECK(std::abs(b.losses[0] - all.losses[30]) < 1e-5);
        CHECK(second.params == full.params);
        auto loaded = load_nowcaster(dir / "meta.ckpt");
        CHECK(loaded->params == second.params);
        CHECK(loaded->name() == "wnn+");
    }
    SUBCASE("a non-finite loss restores the last good weights") {
        const fs::path dir = fresh_dir("diverge");
        cfg.checkpoint_path = dir / "meta.ckpt";
        FlakyWnn wnn(WnnConfig::plus(5, 16, 5), 150);
        const auto r = meta_train(wnn, data, cfg);
        CHECK(r.diverged);
        CHECK(r.iteration == 150);
        CHECK(r.message.find("iteration 100") != std::string::npos);
        CHECK(wnn.params == load_checkpoint(cfg.checkpoint_path).tensors.at("params"));
    }
}

TEST_CASE("trajectory collection is idempotent and verifiable") {
    const fs::path dir = fresh_dir("collect");
    auto spec = task_preset("mlp-blobs");
    spec.total_steps = 60;
    auto task = Task::build(spec, default_data_root());
    collect_trajectories(*task, dir, 2, 0, 20);
    CHECK(verify_store(dir).empty());
    const auto runs = list_runs(dir);
    REQUIRE(runs.size() == 2);
    const auto m = TrajectoryRun::open(runs[0]).manifest();
    CHECK(m.checkpoints == std::vector<long>{0, 20, 40, 60});
    const std::string before = read_file(runs[0] / checkpoint_filename(60));
    collect_trajectories(*task, dir, 2, 0, 20);
    CHECK(read_file(runs[0] / checkpoint_filename(60)) == before);
}

TEST_CASE("nowcaster factory dispatches on kind") {
    NinoConfig nc;
    nc.hidden = 8;
    nc.horizons = 3;
    CHECK(make_nowcaster(nc.to_json())->name() == "nino");
    CHECK(make_nowcaster(WnnModel(WnnConfig::plain()).config_json())->name() == "wnn");
    CHECK_THROWS(make_nowcaster(R"({"kind":"other"})"));
}
