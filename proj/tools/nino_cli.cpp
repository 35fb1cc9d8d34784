// nino_cli: collect trajectories, meta-train nowcasters, run accelerated
// training, build speedup reports and run the permutation experiment.

#include "nino/checkpoint.hpp"
#include "nino/config.hpp"
#include "nino/harness.hpp"
#include "nino/nino_model.hpp"
#include "nino/runtime.hpp"
#include "nino/symmetry_lab.hpp"
#include "nino/trajectory_store.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace nino;

namespace {

void log(const std::string& msg) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%H:%M:%S", std::localtime(&now));
    std::cerr << '[' << stamp << "] " << msg << '\n';
}

fs::path trajectory_root(const RunConfig& c, const std::string& task) { return c.output_root / "trajectories" / task; }
fs::path trace_root(const RunConfig& c) { return c.output_root / "traces"; }
fs::path default_model_path(const RunConfig& c) { return c.output_root / "nowcaster.ckpt"; }

/// Nowcaster overrides from the ablation flags; unset flags leave the config alone.
struct ModelFlags {
    std::string model;  // nino | nino-naive | wnn | wnn+
    int context = 0;
    double k_power = -1;
    int depth = 0;
    int width = 0;
    std::string scaling;
    bool no_lpe = false;
    bool no_word_pos = false;
    bool no_edge_type = false;

    void add_to(CLI::App* app) {
        app->add_option("--model", model, "Nowcaster kind")->check(CLI::IsMember({"nino", "nino-naive", "wnn", "wnn+"}));
        app->add_option("--context", context, "States per window (c)")->check(CLI::PositiveNumber);
        app->add_option("--k-power", k_power, "Exponent p of the horizon decay")->check(CLI::NonNegativeNumber);
        app->add_option("--depth", depth, "GNN layers (M)")->check(CLI::PositiveNumber);
        app->add_option("--width", width, "Hidden width (D)")->check(CLI::PositiveNumber);
        app->add_option("--scaling", scaling, "Parameter scaling")
            ->check(CLI::IsMember({"layerwise", "per-param-std", "minmax", "none"}));
        app->add_flag("--no-lpe", no_lpe, "Drop Laplacian positional node features");
        app->add_flag("--no-word-pos", no_word_pos, "Drop word-position node features");
        app->add_flag("--no-edge-type", no_edge_type, "Drop edge-type embeddings");
    }

    std::string apply(const std::string& config_json) const {
        auto j = nlohmann::json::parse(config_json);
        if (model == "wnn" || model == "wnn+") {
            const bool plus = model == "wnn+";
            const WnnConfig w = plus ? WnnConfig::plus() : WnnConfig::plain();
            const auto old = j;
            j = nlohmann::json::parse(WnnModel(w).config_json());
            if (old.value("kind", "") == "nino") {
                j["context"] = old["context"];
                if (plus) j["horizons"] = old["horizons"];
            }
        } else if (!model.empty()) {
            if (j.value("kind", "") != "nino") j = nlohmann::json::parse(NinoConfig{}.to_json());
            j["mode"] = model == "nino" ? "ours" : "naive";
        }
        const bool nino = j.value("kind", "") == "nino";
        if (context > 0) j["context"] = context;
        if (width > 0) j["hidden"] = width;
        if (!scaling.empty()) j["scaling"] = scaling;
        if (nino) {
            if (k_power >= 0) j["k_power"] = k_power;
            if (depth > 0) j["depth"] = depth;
            if (no_lpe) j["use_lpe"] = false;
            if (no_word_pos) j["use_word_pos"] = false;
            if (no_edge_type) j["use_edge_type"] = false;
        } else if (k_power >= 0 || depth > 0 || no_lpe || no_word_pos || no_edge_type) {
            throw std::invalid_argument("--k-power, --depth and the --no-* flags apply to nino nowcasters only");
        }
        return make_nowcaster(j.dump())->config_json();
    }
};

RunConfig load_config(const std::string& path) { return path.empty() ? RunConfig::defaults() : RunConfig::load(path); }

std::vector<const TaskSpec*> selected_tasks(const RunConfig& c, const std::string& id) {
    std::vector<const TaskSpec*> out;
    if (!id.empty()) out.push_back(&c.task(id));
    else
        for (const auto& t : c.tasks) out.push_back(&t);
    return out;
}

int cmd_collect(const RunConfig& c, const std::string& task_id) {
    for (const TaskSpec* t : selected_tasks(c, task_id)) {
        const auto task = Task::build(*t, c.data_root);
        const fs::path root = trajectory_root(c, t->id);
        log("collect " + t->id + ": " + std::to_string(c.collect.runs) + " runs into " + root.string());
        collect_trajectories(*task, root, c.collect.runs, c.collect.seed0, c.collect.stride);
    }
    return 0;
}

int cmd_meta_train(const RunConfig& c, const ModelFlags& flags, const std::string& task_id, fs::path out,
                   bool resume) {
    auto model = make_nowcaster(flags.apply(c.nowcaster));
    WindowDataset data(model->context(), model->max_horizon());
    for (const TaskSpec* t : selected_tasks(c, task_id)) data.add_store(trajectory_root(c, t->id), model->graph_mode());
    if (data.positions().empty()) {
        std::cerr << "meta-train: no training windows; run collect first\n";
        return 1;
    }
    MetaTrainConfig cfg = c.meta;
    cfg.checkpoint_path = out.empty() ? (cfg.checkpoint_path.empty() ? default_model_path(c) : cfg.checkpoint_path) : out;
    fs::create_directories(cfg.checkpoint_path.parent_path().empty() ? "." : cfg.checkpoint_path.parent_path());
    log("meta-train " + model->name() + " (" + std::to_string(model->params.size()) + " params) on " +
        std::to_string(data.positions().size()) + " windows -> " + cfg.checkpoint_path.string());
    const MetaTrainResult r = meta_train(*model, data, cfg, resume);
    if (!r.losses.empty()) log("final loss " + std::to_string(r.losses.back()));
    if (r.diverged) {
        std::cerr << "meta-train diverged: " << r.message << '\n';
        return 1;
    }
    return 0;
}

int cmd_accelerate(const RunConfig& c, const std::string& method, const std::string& task_id, fs::path model_path,
                   const std::vector<std::uint64_t>& seeds_override) {
    const bool learned = method != "adam" && method != "linefit" && method != "linefit+";
    if (learned && model_path.empty()) model_path = default_model_path(c);
    const int context = c.accel.context > 0 ? c.accel.context : nlohmann::json::parse(c.nowcaster).value("context", 5);
    const auto nowcaster = method_nowcaster(method, context, learned ? model_path : fs::path{});
    const auto& seeds = seeds_override.empty() ? c.seeds : seeds_override;
    for (const TaskSpec* t : selected_tasks(c, task_id)) {
        const auto task = Task::build(*t, c.data_root);
        for (const std::uint64_t seed : seeds) {
            RunTrace trace = accelerated_train(*task, nowcaster.get(), c.accel, seed);
            trace.method = method;
            save_trace(trace_root(c), trace);
            const auto hit = time_to_target(trace, *t);
            log("accelerate " + t->id + " " + method + " seed " + std::to_string(seed) + ": " +
                (hit ? "target at step " + std::to_string(*hit) : std::string("target not reached")) +
                (trace.diverged ? " (diverged)" : ""));
        }
    }
    return 0;
}

int cmd_report(const RunConfig& c, const fs::path& traces_dir, const std::string& format, const std::string& base) {
    const fs::path dir = traces_dir.empty() ? trace_root(c) : traces_dir;
    const auto traces = fs::exists(dir) ? load_traces(dir) : std::vector<RunTrace>{};
    if (traces.empty()) {
        std::cerr << "report: no traces found under " << dir.string() << '\n';
        return 1;
    }
    std::vector<TaskSpec> tasks = c.tasks;
    for (const auto& tr : traces) {
        const bool known = std::any_of(tasks.begin(), tasks.end(), [&](const TaskSpec& t) { return t.id == tr.task_id; });
        if (!known) tasks.push_back(task_preset(tr.task_id));
    }
    const SpeedupReport report = build_report(traces, tasks, base);
    std::cout << (format == "csv" ? report.to_csv() : report.to_text());
    return 0;
}

int cmd_symcheck(const SymmetryConfig& cfg, const fs::path& out_dir) {
    const SymmetryResult r = run_symmetry_experiment(cfg);
    std::cout << r.summary_csv();
    log("labels: " + std::to_string(r.good) + " good of " + std::to_string(r.labels.size()) + ", seed " +
        std::to_string(r.seed) + (r.resamples ? " after " + std::to_string(r.resamples) + " resamples" : ""));
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_file_atomic(out_dir / "symmetry_summary.csv", r.summary_csv());
        write_file_atomic(out_dir / "symmetry_projection.csv", r.projection_csv());
    }
    return 0;
}

int cmd_verify(const fs::path& target) {
    if (fs::is_regular_file(target)) {
        try {
            const ModelCheckpoint ck = load_checkpoint(target);
            std::cout << target.string() << ": ok (" << ck.tensors.size() << " tensors)\n";
            return 0;
        } catch (const std::exception& e) {
            std::cerr << target.string() << ": " << e.what() << '\n';
            return 1;
        }
    }
    const auto problems = verify_store(target);
    for (const auto& p : problems) std::cerr << p << '\n';
    if (problems.empty()) std::cout << target.string() << ": ok (" << list_runs(target).size() << " runs)\n";
    return problems.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    configure_allocator();
    CLI::App app{"Nowcasting neural network parameters with graph neural networks"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "Run config JSON")->check(CLI::ExistingFile);

    std::string task_id;
    auto* collect = app.add_subcommand("collect", "Store base-optimizer trajectories");
    collect->add_option("--task", task_id, "Only this task id");

    ModelFlags flags;
    fs::path model_out;
    bool resume = false;
    auto* meta = app.add_subcommand("meta-train", "Train a nowcaster on stored trajectories");
    meta->add_option("--task", task_id, "Only trajectories of this task");
    meta->add_option("--out", model_out, "Nowcaster checkpoint path");
    meta->add_flag("--resume", resume, "Continue from the checkpoint at --out");
    flags.add_to(meta);

    std::string method = "adam";
    fs::path model_in;
    std::vector<std::uint64_t> seeds;
    auto* accel = app.add_subcommand("accelerate", "Train with periodic nowcasts and store the traces");
    accel->add_option("--method", method, "Nowcasting method")->check(CLI::IsMember(method_names()));
    accel->add_option("--task", task_id, "Only this task id");
    accel->add_option("--nowcaster", model_in, "Nowcaster checkpoint for learned methods");
    accel->add_option("--seed", seeds, "Seeds (default: from the config)");

    fs::path traces_dir;
    std::string format = "text", base = "adam";
    auto* report = app.add_subcommand("report", "Time-to-target speedup table");
    report->add_option("--traces", traces_dir, "Trace directory");
    report->add_option("--format", format)->check(CLI::IsMember({"text", "csv"}));
    report->add_option("--base", base, "Reference method");

    SymmetryConfig sym;
    fs::path sym_out;
    auto* symcheck = app.add_subcommand("symcheck", "Neuron-permutation separability experiment");
    symcheck->add_option("--d", sym.d, "Attention width")->check(CLI::PositiveNumber);
    symcheck->add_option("--heads", sym.heads, "Attention heads")->check(CLI::PositiveNumber);
    symcheck->add_option("--permutations", sym.permutations)->check(CLI::Range(2, 1000000));
    symcheck->add_option("--gnn-hidden", sym.gnn_hidden)->check(CLI::PositiveNumber);
    symcheck->add_option("--gnn-depth", sym.gnn_depth)->check(CLI::PositiveNumber);
    symcheck->add_option("--seed", sym.seed);
    symcheck->add_option("--out-dir", sym_out, "Write summary and 2-D projection CSVs here");

    fs::path run_dir, csv_out;
    auto* embed = app.add_subcommand("embed-export", "Graph embeddings of every window of a stored run");
    embed->add_option("--nowcaster", model_in, "NiNo checkpoint")->required();
    embed->add_option("--run", run_dir, "Trajectory run directory")->required();
    embed->add_option("--out", csv_out, "CSV path")->required();

    fs::path verify_target;
    auto* verify = app.add_subcommand("verify", "Check a trajectory store or a checkpoint file");
    verify->add_option("path", verify_target, "Store root or checkpoint file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*verify) return cmd_verify(verify_target);
        if (*symcheck) return cmd_symcheck(sym, sym_out);
        if (*embed) {
            export_embeddings(*load_nowcaster(model_in), TrajectoryRun::open(run_dir), csv_out);
            return 0;
        }
        const RunConfig cfg = load_config(config_path);
        if (*collect) return cmd_collect(cfg, task_id);
        if (*meta) return cmd_meta_train(cfg, flags, task_id, model_out, resume);
        if (*accel) return cmd_accelerate(cfg, method, task_id, model_in, seeds);
        if (*report) return cmd_report(cfg, traces_dir, format, base);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
