#include "nino/harness.hpp"

#include "nino/checkpoint.hpp"
#include "nino/nino_model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace nino {

namespace fs = std::filesystem;
using ad::Matrix;
using ad::Vector;

// ---------------------------------------------------------------- nowcasters

std::unique_ptr<TrainableNowcaster> make_nowcaster(const std::string& config_json) {
    const auto j = nlohmann::json::parse(config_json);
    const std::string kind = j.value("kind", "");
    if (kind == "nino") return std::make_unique<NinoModel>(NinoConfig::from_json(config_json));
    if (kind == "wnn") return std::make_unique<WnnModel>(WnnConfig::from_json(config_json));
    throw std::invalid_argument("unknown nowcaster kind '" + kind + "' (expected nino or wnn)");
}

std::unique_ptr<TrainableNowcaster> load_nowcaster(const fs::path& path) {
    const ModelCheckpoint ck = load_checkpoint(path);
    auto model = make_nowcaster(ck.config_json);
    const auto it = ck.tensors.find("params");
    if (it == ck.tensors.end()) throw CheckpointError(path.string() + ": no params tensor");
    if (it->second.size() != model->params.size())
        throw CheckpointError(path.string() + ": params length " + std::to_string(it->second.size()) +
                              " does not match the configured model (" + std::to_string(model->params.size()) + ")");
    model->params = it->second;
    return model;
}

// ---------------------------------------------------------------- collection

void collect_trajectories(const Task& task, const fs::path& root, int runs, std::uint64_t seed0, int stride) {
    const TaskSpec& spec = task.spec();
    const long T = spec.total_steps;
    for (int r = 0; r < runs; ++r) {
        const std::uint64_t seed = seed0 + static_cast<std::uint64_t>(r);
        const std::string id = spec.id + "-seed" + std::to_string(seed);
        const fs::path dir = root / id;
        if (fs::exists(dir / "manifest.json")) {
            const auto m = TrajectoryRun::open(dir).manifest();
            if (m.final_loss && !m.checkpoints.empty() && m.checkpoints.back() == T - T % stride) continue;
            fs::remove_all(dir);
        }
        RunManifest m;
        m.run_id = id;
        m.task_id = spec.id;
        m.spec = spec.arch;
        m.optimizer = {to_string(spec.optimizer), spec.lr, spec.weight_decay, spec.batch_size};
        m.stride = stride;
        m.total_steps = T;
        m.seed = seed;
        TrajectoryRun run = TrajectoryRun::create(dir, m);
        TrainState state = make_train_state(task, seed);
        run.record_checkpoint(0, state.theta);
        double last = 0;
        while (state.step + stride <= T) {
            last = train_steps(task, state, stride).back();
            run.record_checkpoint(state.step, state.theta);
        }
        run.set_final_loss(last);
    }
}

Matrix linear_trajectory(std::size_t n, int checkpoints, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> log_rate(std::log(1e-3), std::log(3e-2));
    const double rate = std::exp(log_rate(rng));
    Matrix m(static_cast<ad::Index>(n), checkpoints);
    for (ad::Index i = 0; i < m.rows(); ++i) {
        const double a = 0.5 * g(rng), v = rate * g(rng);
        for (int j = 0; j < checkpoints; ++j) m(i, j) = a + v * j;
    }
    return m;
}

// ---------------------------------------------------------------- meta-training

namespace {

std::string rng_state(const std::mt19937_64& rng) {
    std::ostringstream ss;
    ss << rng;
    return ss.str();
}

void save_meta(const fs::path& path, const TrainableNowcaster& model, const Adam& opt, const std::mt19937_64& rng,
               long iteration, const MetaTrainConfig& cfg) {
    ModelCheckpoint ck;
    ck.config_json = model.config_json();
    ck.iteration = iteration;
    ck.tensors["params"] = model.params;
    ck.tensors["adam_m"] = opt.first_moment();
    ck.tensors["adam_v"] = opt.second_moment();
    nlohmann::ordered_json meta;
    meta["adam_steps"] = opt.steps();
    meta["rng"] = rng_state(rng);
    meta["iterations"] = cfg.iterations;
    meta["lr"] = cfg.lr;
    meta["weight_decay"] = cfg.weight_decay;
    meta["batch"] = cfg.batch;
    meta["cosine"] = cfg.cosine;
    ck.metadata = meta.dump();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    save_checkpoint(path, ck);
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

MetaTrainResult meta_train(TrainableNowcaster& model, const WindowDataset& data, const MetaTrainConfig& cfg,
                           bool resume) {
    if (data.num_positions() == 0) throw StoreError("meta_train: the window dataset is empty");
    if (cfg.batch < 1 || cfg.iterations < 1) throw std::invalid_argument("meta_train: batch and iterations must be >= 1");
    AdamConfig ac;
    ac.lr = cfg.lr;
    ac.weight_decay = cfg.weight_decay;
    ac.decoupled = true;
    Adam opt(model.params.size(), ac);
    std::mt19937_64 rng(cfg.seed);
    MetaTrainResult result;
    if (resume) {
        if (cfg.checkpoint_path.empty()) throw std::invalid_argument("meta_train: resume needs a checkpoint path");
        const ModelCheckpoint ck = load_checkpoint(cfg.checkpoint_path);
        if (nlohmann::json::parse(ck.config_json) != nlohmann::json::parse(model.config_json()))
            throw CheckpointError(cfg.checkpoint_path.string() + ": saved model config differs from the requested one");
        const auto meta = nlohmann::json::parse(ck.metadata);
        model.params = ck.tensors.at("params");
        opt.load_state(meta.at("adam_steps").get<long>(), ck.tensors.at("adam_m"), ck.tensors.at("adam_v"));
        std::istringstream ss(meta.at("rng").get<std::string>());
        ss >> rng;
        result.iteration = ck.iteration;
    }
    std::vector<double> last_good = model.params;
    long last_good_iter = result.iteration;
    std::vector<double> grad(model.params.size());
    std::vector<WindowSample> samples(static_cast<std::size_t>(cfg.batch));
    std::vector<TrainingExample> examples(samples.size());
    std::vector<const TrainingExample*> ptrs(samples.size());
    for (long it = result.iteration; it < cfg.iterations; ++it) {
        if (cfg.stop_after > 0 && it >= cfg.stop_after) break;
        for (std::size_t b = 0; b < samples.size(); ++b) {
            samples[b] = data.sample(rng);
            examples[b] = TrainingExample{data.tmpl(samples[b].run), samples[b].context, samples[b].targets};
            ptrs[b] = &examples[b];
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        const double loss = model.loss(ptrs, grad);
        if (!std::isfinite(loss) || !all_finite(grad)) {
            model.params = last_good;
            result.diverged = true;
            result.message = "non-finite meta-loss at iteration " + std::to_string(it) +
                             "; restored the last good weights from iteration " +
                             std::to_string(last_good_iter);
            return result;
        }
        opt.step(model.params, grad, cfg.cosine ? cosine_decay(it, cfg.iterations) : 1.0);
        result.losses.push_back(loss);
        result.iteration = it + 1;
        if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0 && result.iteration % cfg.checkpoint_every == 0) {
            save_meta(cfg.checkpoint_path, model, opt, rng, result.iteration, cfg);
            last_good = model.params;
            last_good_iter = result.iteration;
        }
    }
    if (!cfg.checkpoint_path.empty()) save_meta(cfg.checkpoint_path, model, opt, rng, result.iteration, cfg);
    return result;
}

// ---------------------------------------------------------------- accelerated training

std::vector<long> nowcast_schedule(long total_steps, int context, int stride) {
    std::vector<long> out;
    const long period = static_cast<long>(context) * stride;
    for (long t = period; t < total_steps; t += period) out.push_back(t);
    return out;
}

RunTrace accelerated_train(const Task& task, const Nowcaster* nowcaster, const AccelConfig& cfg, std::uint64_t seed) {
    const TaskSpec& spec = task.spec();
    const long T = spec.total_steps;
    if (cfg.stride < 1) throw std::invalid_argument("accelerated_train: stride must be >= 1");
    const int c = nowcaster ? (cfg.context > 0 ? cfg.context : nowcaster->context()) : 0;
    TemplatePtr tmpl;
    if (nowcaster) tmpl = build_template(spec.arch, nowcaster->graph_mode());

    RunTrace trace;
    trace.task_id = spec.id;
    trace.method = nowcaster ? nowcaster->name() : to_string(spec.optimizer);
    trace.seed = seed;
    trace.total_steps = T;
    TrainState state = make_train_state(task, seed);
    trace.eval_steps.push_back(0);
    trace.metric.push_back(task.evaluate(state.theta, Split::val));
    trace.train_loss.push_back(std::nan(""));

    std::vector<Vector> window;  // newest last
    double loss_sum = 0;
    long loss_count = 0;
    const long period = static_cast<long>(c) * cfg.stride;
    while (state.step < T) {
        try {
            loss_sum += train_steps(task, state, 1).front();
            ++loss_count;
        } catch (const NonFiniteLoss& e) {
            trace.diverged = true;
            trace.events.push_back({state.step, 0, false, e.what(), state.opt.state_hash(), state.opt.state_hash()});
            break;
        }
        const long t = state.step;
        if (nowcaster && t % cfg.stride == 0) {
            window.push_back(Eigen::Map<const Vector>(state.theta.data(), static_cast<ad::Index>(state.theta.size())));
            if (static_cast<int>(window.size()) > c) window.erase(window.begin());
        }
        if (nowcaster && t % period == 0 && t < T && static_cast<int>(window.size()) == c) {
            NowcastEvent ev;
            ev.step = t;
            ev.k = nowcaster->uses_k_decay() ? k_decay(t, T, nowcaster->max_horizon(), cfg.k_power)
                                             : nowcaster->max_horizon();
            ParameterWindow w;
            w.states.resize(static_cast<ad::Index>(state.theta.size()), c);
            for (int j = 0; j < c; ++j) w.states.col(j) = window[window.size() - 1 - static_cast<std::size_t>(j)];
            w.stride = cfg.stride;
            ev.adam_hash_before = state.opt.state_hash();
            Vector pred;
            try {
                pred = nowcaster->nowcast(tmpl, w, ev.k);
            } catch (const std::exception& e) {
                ev.note = std::string("nowcast failed: ") + e.what();
            }
            if (pred.size() == static_cast<ad::Index>(state.theta.size()) && pred.allFinite()) {
                std::copy(pred.data(), pred.data() + pred.size(), state.theta.begin());
                ev.applied = true;
            } else if (ev.note.empty()) {
                ev.note = "non-finite prediction skipped";
            }
            ev.adam_hash_after = state.opt.state_hash();
            trace.events.push_back(ev);
            window.clear();
        }
        if (t % spec.eval_every == 0 || t == T) {
            trace.eval_steps.push_back(t);
            trace.metric.push_back(task.evaluate(state.theta, Split::val));
            trace.train_loss.push_back(loss_count ? loss_sum / static_cast<double>(loss_count) : std::nan(""));
            loss_sum = 0;
            loss_count = 0;
        }
    }
    return trace;
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

std::string RunTrace::to_json() const {
    nlohmann::ordered_json j;
    j["task_id"] = task_id;
    j["method"] = method;
    j["seed"] = seed;
    j["total_steps"] = total_steps;
    j["diverged"] = diverged;
    j["eval_steps"] = eval_steps;
    nlohmann::json m = nlohmann::json::array(), l = nlohmann::json::array();
    for (double v : metric) m.push_back(number_or_null(v));
    for (double v : train_loss) l.push_back(number_or_null(v));
    j["metric"] = m;
    j["train_loss"] = l;
    nlohmann::ordered_json ev = nlohmann::ordered_json::array();
    for (const auto& e : events)
        ev.push_back({{"step", e.step},
                      {"k", e.k},
                      {"applied", e.applied},
                      {"note", e.note},
                      {"adam_hash_before", e.adam_hash_before},
                      {"adam_hash_after", e.adam_hash_after}});
    j["events"] = ev;
    return j.dump(1);
}

RunTrace RunTrace::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    RunTrace t;
    t.task_id = j.at("task_id").get<std::string>();
    t.method = j.at("method").get<std::string>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.total_steps = j.at("total_steps").get<long>();
    t.diverged = j.at("diverged").get<bool>();
    t.eval_steps = j.at("eval_steps").get<std::vector<long>>();
    for (const auto& v : j.at("metric")) t.metric.push_back(v.is_null() ? std::nan("") : v.get<double>());
    for (const auto& v : j.at("train_loss")) t.train_loss.push_back(v.is_null() ? std::nan("") : v.get<double>());
    for (const auto& e : j.at("events"))
        t.events.push_back({e.at("step").get<long>(), e.at("k").get<int>(), e.at("applied").get<bool>(),
                            e.at("note").get<std::string>(), e.at("adam_hash_before").get<std::uint64_t>(),
                            e.at("adam_hash_after").get<std::uint64_t>()});
    if (t.metric.size() != t.eval_steps.size()) throw std::invalid_argument("trace: metric/eval_steps length mismatch");
    return t;
}

// ---------------------------------------------------------------- reports

std::optional<long> time_to_target(const RunTrace& trace, const TaskSpec& task) {
    for (std::size_t i = 0; i < trace.eval_steps.size(); ++i)
        if (task.reached(trace.metric[i])) return trace.eval_steps[i];
    return std::nullopt;
}

double reduction_percent(double base_steps, double method_steps) {
    return (base_steps - method_steps) / base_steps * 100.0;
}

std::optional<double> majority_median(const std::vector<std::optional<long>>& steps) {
    std::vector<double> reached;
    for (const auto& s : steps)
        if (s) reached.push_back(static_cast<double>(*s));
    if (2 * reached.size() <= steps.size()) return std::nullopt;
    std::sort(reached.begin(), reached.end());
    const std::size_t n = reached.size();
    return n % 2 ? reached[n / 2] : 0.5 * (reached[n / 2 - 1] + reached[n / 2]);
}

SpeedupReport build_report(const std::vector<RunTrace>& traces, const std::vector<TaskSpec>& tasks,
                           const std::string& base_method) {
    SpeedupReport report;
    for (const TaskSpec& task : tasks) {
        std::map<std::string, std::vector<const RunTrace*>> by_method;
        for (const auto& t : traces)
            if (t.task_id == task.id) by_method[t.method].push_back(&t);
        if (by_method.empty()) continue;
        TaskReport tr;
        tr.task_id = task.id;
        tr.metric = to_string(task.metric);
        tr.target = task.target;
        tr.base_method = base_method;
        std::vector<std::string> order;
        if (by_method.count(base_method)) order.push_back(base_method);
        for (const auto& [m, v] : by_method)
            if (m != base_method) order.push_back(m);
        std::optional<double> base_median;
        for (const std::string& m : order) {
            auto runs = by_method[m];
            std::sort(runs.begin(), runs.end(), [](const RunTrace* a, const RunTrace* b) { return a->seed < b->seed; });
            MethodSummary s;
            s.method = m;
            for (const RunTrace* r : runs) s.steps.push_back(time_to_target(*r, task));
            s.median_steps = majority_median(s.steps);
            s.failed = !s.median_steps.has_value();
            if (m == base_method) base_median = s.median_steps;
            if (base_median && s.median_steps) s.reduction = reduction_percent(*base_median, *s.median_steps);
            tr.methods.push_back(std::move(s));
        }
        report.tasks.push_back(std::move(tr));
    }
    return report;
}

namespace {

std::size_t reached_count(const MethodSummary& s) {
    return static_cast<std::size_t>(std::count_if(s.steps.begin(), s.steps.end(), [](const auto& v) { return v.has_value(); }));
}

}  // namespace

std::string SpeedupReport::to_text() const {
    std::ostringstream o;
    char buf[256];
    for (const auto& t : tasks) {
        o << "task " << t.task_id << ": " << t.metric << (t.metric == "accuracy" ? " >= " : " <= ") << t.target
          << "\n";
        std::snprintf(buf, sizeof buf, "  %-12s %8s %14s %11s  %s\n", "method", "reached", "median_steps", "reduction",
                      "per-seed steps");
        o << buf;
        for (const auto& s : t.methods) {
            std::string per;
            for (const auto& v : s.steps) per += (per.empty() ? "" : " ") + (v ? std::to_string(*v) : std::string("inf"));
            const std::string median = s.median_steps ? std::to_string(std::lround(*s.median_steps)) : "failed";
            char red[32];
            if (s.reduction) std::snprintf(red, sizeof red, "%.1f%%", *s.reduction);
            else std::snprintf(red, sizeof red, "-");
            std::snprintf(buf, sizeof buf, "  %-12s %4zu/%-3zu %14s %11s  %s\n", s.method.c_str(), reached_count(s),
                          s.steps.size(), median.c_str(), red, per.c_str());
            o << buf;
        }
    }
    return o.str();
}

std::string SpeedupReport::to_csv() const {
    std::ostringstream o;
    o << "task,metric,target,method,seeds,reached,median_steps,reduction_percent\n";
    for (const auto& t : tasks)
        for (const auto& s : t.methods) {
            o << t.task_id << ',' << t.metric << ',' << t.target << ',' << s.method << ',' << s.steps.size() << ','
              << reached_count(s) << ',';
            if (s.median_steps) o << *s.median_steps;
            else o << "inf";
            o << ',';
            if (s.reduction) o << *s.reduction;
            o << '\n';
        }
    return o.str();
}

void save_trace(const fs::path& root, const RunTrace& trace) {
    const fs::path dir = root / trace.task_id / trace.method;
    fs::create_directories(dir);
    write_file_atomic(dir / ("seed_" + std::to_string(trace.seed) + ".json"), trace.to_json());
}

std::vector<RunTrace> load_traces(const fs::path& root) {
    std::vector<fs::path> files;
    if (fs::is_directory(root))
        for (const auto& e : fs::recursive_directory_iterator(root))
            if (e.is_regular_file() && e.path().extension() == ".json" && e.path().filename().string().rfind("seed_", 0) == 0)
                files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<RunTrace> out;
    for (const auto& f : files) {
        try {
            out.push_back(RunTrace::from_json(read_file(f)));
        } catch (const std::exception& e) {
            throw std::runtime_error(f.string() + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------- embeddings

void export_embeddings(const TrainableNowcaster& model, const TrajectoryRun& run, const fs::path& csv) {
    const auto* nino = dynamic_cast<const NinoModel*>(&model);
    if (!nino) throw std::invalid_argument("embed-export needs a NiNo model");
    const auto tmpl = build_template(run.manifest().spec, nino->graph_mode());
    const Matrix all = run.read_all();
    const int c = nino->context();
    std::ostringstream o;
    o << "step";
    for (int d = 0; d < nino->config().hidden; ++d) o << ",h" << d;
    o << '\n';
    o.precision(9);
    for (int j = c - 1; j < all.cols(); ++j) {
        Matrix w(all.rows(), c);
        for (int i = 0; i < c; ++i) w.col(i) = all.col(j - i);
        const auto [scaler, graph] = nino->prepare(tmpl, w);
        const Vector h = nino->graph_embedding(graph);
        o << run.manifest().checkpoints[static_cast<std::size_t>(j)];
        for (ad::Index d = 0; d < h.size(); ++d) o << ',' << h(d);
        o << '\n';
    }
    if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
    write_file_atomic(csv, o.str());
}

}  // namespace nino
