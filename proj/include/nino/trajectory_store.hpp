#pragma once

// On-disk trajectories: one directory per run holding manifest.json and one
// raw little-endian float32 file per checkpoint (step_XXXXXXXX.f32).

#include "nino/arch.hpp"
#include "nino/autograd.hpp"
#include "nino/neural_graph.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nino {

class StoreError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct OptimizerInfo {
    std::string name = "adam";
    double lr = 3e-3;
    double weight_decay = 0.0;
    int batch_size = 32;
};

struct RunManifest {
    std::string run_id;
    std::string task_id;
    ArchSpec spec;
    OptimizerInfo optimizer;
    int stride = 200;
    long total_steps = 0;
    std::uint64_t seed = 0;
    std::size_t num_params = 0;
    std::vector<long> checkpoints;
    std::vector<std::uint32_t> crc32;
    std::optional<double> final_loss;

    std::string to_json() const;
    static RunManifest from_json(const std::string& text);
};

std::string checkpoint_filename(long step);
std::uint32_t checksum(std::span<const float> values);

/// One run directory. Single writer; readers may open the same directory.
class TrajectoryRun {
public:
    /// Creates dir (must not hold a manifest yet) and writes the initial manifest.
    static TrajectoryRun create(const std::filesystem::path& dir, RunManifest manifest);
    static TrajectoryRun open(const std::filesystem::path& dir);

    const RunManifest& manifest() const { return manifest_; }
    const std::filesystem::path& dir() const { return dir_; }

    /// Step must be a multiple of the stride and larger than the last one.
    void record_checkpoint(long step, std::span<const double> theta);
    void record_checkpoint(long step, std::span<const float> theta);
    void set_final_loss(double loss);

    std::vector<float> read_checkpoint(long step) const;
    /// All checkpoints as [n x N] doubles, oldest first.
    ad::Matrix read_all() const;

private:
    void write_manifest() const;
    std::filesystem::path dir_;
    RunManifest manifest_;
};

/// Run directories (containing manifest.json) directly under root, sorted by name.
std::vector<std::filesystem::path> list_runs(const std::filesystem::path& root);

/// Problems found in manifests and checkpoint files, one line each naming the file.
std::vector<std::string> verify_store(const std::filesystem::path& root);

struct WindowSample {
    ad::Matrix context;  // [n x c], newest first
    ad::Matrix targets;  // [n x K_avail], theta_{tau+k} - theta_tau
    std::size_t run = 0;
    int tau = 0;         // checkpoint index of the newest context state
};

/// In-memory trajectories for window sampling. A position tau is valid when it
/// has c states ending at tau and the run's largest attainable horizon
/// K_need = min(K, N - c) after it; K_avail = K_need.
class WindowDataset {
public:
    WindowDataset(int context, int horizons);

    /// trajectory: [n x N] oldest first.
    void add_run(TemplatePtr tmpl, ad::Matrix trajectory, std::string run_id = {});
    /// Loads every run under root; templates are built per distinct architecture.
    void add_store(const std::filesystem::path& root, GraphMode mode);

    std::size_t num_runs() const { return runs_.size(); }
    std::size_t num_positions() const { return positions_.size(); }
    const TemplatePtr& tmpl(std::size_t run) const { return runs_.at(run).tmpl; }
    const std::string& run_id(std::size_t run) const { return runs_.at(run).id; }
    /// Valid (run, tau) pairs in insertion order.
    const std::vector<std::pair<std::size_t, int>>& positions() const { return positions_; }

    WindowSample window(std::size_t run, int tau) const;
    /// Uniform over all valid (run, tau) pairs. Throws StoreError when empty.
    WindowSample sample(std::mt19937_64& rng) const;

private:
    struct Run {
        TemplatePtr tmpl;
        ad::Matrix states;
        std::string id;
    };
    int context_;
    int horizons_;
    std::vector<Run> runs_;
    std::vector<std::pair<std::size_t, int>> positions_;
};

}  // namespace nino
