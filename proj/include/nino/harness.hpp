#pragma once

// Meta-training of nowcasters, training with periodic nowcasts, and
// time-to-target reports.

#include "nino/baselines.hpp"
#include "nino/nn.hpp"
#include "nino/task_zoo.hpp"
#include "nino/trajectory_store.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace nino {

// ---------------------------------------------------------------- nowcasters

/// Builds an untrained nowcaster from its config JSON ("kind": nino | wnn).
std::unique_ptr<TrainableNowcaster> make_nowcaster(const std::string& config_json);
/// Loads a nowcaster and its weights from a meta-model checkpoint.
std::unique_ptr<TrainableNowcaster> load_nowcaster(const std::filesystem::path& path);

// ---------------------------------------------------------------- collection

/// Trains `runs` independent base-optimizer runs (seeds seed0, seed0 + 1, ...)
/// and stores theta every `stride` steps, step 0 included.
void collect_trajectories(const Task& task, const std::filesystem::path& root, int runs, std::uint64_t seed0,
                          int stride);

/// Trajectories linear in time: theta_j = a + j * v with per-run random a, v.
/// Returns [n x checkpoints], oldest first.
ad::Matrix linear_trajectory(std::size_t n, int checkpoints, std::uint64_t seed);

// ---------------------------------------------------------------- meta-training

struct MetaTrainConfig {
    long iterations = 20000;
    double lr = 3e-3;
    double weight_decay = 0.01;
    int batch = 4;
    bool cosine = true;
    /// Save every this many iterations (and at the end) when path is set.
    long checkpoint_every = 1000;
    std::filesystem::path checkpoint_path;
    std::uint64_t seed = 0;
    /// Stop after this many iterations of the schedule (resume tests). <= 0: run all.
    long stop_after = 0;
};

struct MetaTrainResult {
    std::vector<double> losses;  // one per completed iteration
    long iteration = 0;          // iterations completed in total (across resumes)
    bool diverged = false;
    std::string message;
};

/// AdamW over model.params, cosine-decayed learning rate, one optimizer step
/// per batch of windows. Resumes from cfg.checkpoint_path when `resume` is set.
/// A non-finite loss restores the last saved (or initial) weights and stops.
MetaTrainResult meta_train(TrainableNowcaster& model, const WindowDataset& data, const MetaTrainConfig& cfg,
                           bool resume = false);

// ---------------------------------------------------------------- accelerated training

struct AccelConfig {
    int stride = 200;
    double k_power = 2.0;
    /// Override of the nowcaster context, 0 keeps the nowcaster's own.
    int context = 0;
};

struct NowcastEvent {
    long step = 0;
    int k = 0;
    bool applied = false;
    std::string note;
    std::uint64_t adam_hash_before = 0;
    std::uint64_t adam_hash_after = 0;
};

struct RunTrace {
    std::string task_id;
    std::string method;
    std::uint64_t seed = 0;
    long total_steps = 0;
    std::vector<long> eval_steps;
    std::vector<double> metric;
    std::vector<double> train_loss;  // mean minibatch loss since the previous evaluation
    std::vector<NowcastEvent> events;
    bool diverged = false;

    std::string to_json() const;
    static RunTrace from_json(const std::string& text);
};

/// Base optimizer for T steps; with a nowcaster, every c * stride steps
/// (never at 0 or T) the last c states taken at the stride are replaced by a
/// prediction at horizon k_decay(t, T, K, p) (or the method's fixed horizon),
/// then the window restarts. Adam moments are carried through unchanged.
/// Evaluates at step 0 and every eval_every steps.
RunTrace accelerated_train(const Task& task, const Nowcaster* nowcaster, const AccelConfig& cfg, std::uint64_t seed);

/// Steps at which accelerated_train fires nowcasts.
std::vector<long> nowcast_schedule(long total_steps, int context, int stride);

// ---------------------------------------------------------------- reports

/// First evaluated step that meets the task target; nullopt when never reached.
std::optional<long> time_to_target(const RunTrace& trace, const TaskSpec& task);

struct MethodSummary {
    std::string method;
    std::vector<std::optional<long>> steps;  // per seed
    /// Median over reaching seeds when a majority reach; nullopt otherwise.
    std::optional<double> median_steps;
    bool failed = false;
    /// (base - method) / base * 100, when both medians exist.
    std::optional<double> reduction;
};

struct TaskReport {
    std::string task_id;
    std::string metric;
    double target = 0;
    std::string base_method;
    std::vector<MethodSummary> methods;  // base first
};

struct SpeedupReport {
    std::vector<TaskReport> tasks;
    std::string to_text() const;
    std::string to_csv() const;
};

double reduction_percent(double base_steps, double method_steps);
/// Median of the reached entries if more than half reached.
std::optional<double> majority_median(const std::vector<std::optional<long>>& steps);

SpeedupReport build_report(const std::vector<RunTrace>& traces, const std::vector<TaskSpec>& tasks,
                           const std::string& base_method = "adam");

/// Trace files are <root>/<task>/<method>/seed_<n>.json.
void save_trace(const std::filesystem::path& root, const RunTrace& trace);
std::vector<RunTrace> load_traces(const std::filesystem::path& root);

// ---------------------------------------------------------------- embeddings

/// One row per window position of a stored run: step, then the NiNo graph
/// embedding of the window ending there. Written as CSV.
void export_embeddings(const TrainableNowcaster& model, const TrajectoryRun& run, const std::filesystem::path& csv);

}  // namespace nino
