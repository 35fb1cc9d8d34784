#include "nino/trajectory_store.hpp"

#include "nino/checkpoint.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <map>

namespace nino {

namespace fs = std::filesystem;

std::string RunManifest::to_json() const {
    nlohmann::ordered_json j;
    j["format"] = "nino.run";
    j["version"] = 1;
    j["run_id"] = run_id;
    j["task_id"] = task_id;
    j["arch_hash"] = spec.hash();
    j["arch"] = nlohmann::ordered_json::parse(arch_to_json(spec));
    j["optimizer"] = {{"name", optimizer.name},
                      {"lr", optimizer.lr},
                      {"weight_decay", optimizer.weight_decay},
                      {"batch_size", optimizer.batch_size}};
    j["stride"] = stride;
    j["total_steps"] = total_steps;
    j["seed"] = seed;
    j["num_params"] = num_params;
    j["checkpoints"] = checkpoints;
    j["crc32"] = crc32;
    j["final_loss"] = final_loss ? nlohmann::ordered_json(*final_loss) : nlohmann::ordered_json(nullptr);
    return j.dump(2);
}

RunManifest RunManifest::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.task_id = j.at("task_id").get<std::string>();
    m.spec = arch_from_json(j.at("arch").dump());
    if (j.at("arch_hash").get<std::uint64_t>() != m.spec.hash()) throw StoreError("manifest architecture hash mismatch");
    const auto& o = j.at("optimizer");
    m.optimizer.name = o.at("name").get<std::string>();
    m.optimizer.lr = o.at("lr").get<double>();
    m.optimizer.weight_decay = o.at("weight_decay").get<double>();
    m.optimizer.batch_size = o.at("batch_size").get<int>();
    m.stride = j.at("stride").get<int>();
    m.total_steps = j.at("total_steps").get<long>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.num_params = j.at("num_params").get<std::size_t>();
    m.checkpoints = j.at("checkpoints").get<std::vector<long>>();
    m.crc32 = j.at("crc32").get<std::vector<std::uint32_t>>();
    if (!j.at("final_loss").is_null()) m.final_loss = j.at("final_loss").get<double>();
    if (m.crc32.size() != m.checkpoints.size()) throw StoreError("manifest checksum list length mismatch");
    return m;
}

std::string checkpoint_filename(long step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step_%08ld.f32", step);
    return buf;
}

std::uint32_t checksum(std::span<const float> values) {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(values.data()), static_cast<uInt>(values.size() * sizeof(float))));
}

TrajectoryRun TrajectoryRun::create(const fs::path& dir, RunManifest manifest) {
    fs::create_directories(dir);
    if (fs::exists(dir / "manifest.json")) throw StoreError(dir.string() + ": run already exists");
    if (manifest.stride <= 0) throw StoreError("stride must be positive");
    manifest.num_params = manifest.spec.num_params();
    manifest.checkpoints.clear();
    manifest.crc32.clear();
    TrajectoryRun run;
    run.dir_ = dir;
    run.manifest_ = std::move(manifest);
    run.write_manifest();
    return run;
}

TrajectoryRun TrajectoryRun::open(const fs::path& dir) {
    TrajectoryRun run;
    run.dir_ = dir;
    run.manifest_ = RunManifest::from_json(read_file(dir / "manifest.json"));
    return run;
}

void TrajectoryRun::write_manifest() const { write_file_atomic(dir_ / "manifest.json", manifest_.to_json()); }

void TrajectoryRun::record_checkpoint(long step, std::span<const double> theta) {
    std::vector<float> f(theta.begin(), theta.end());
    record_checkpoint(step, std::span<const float>(f));
}

void TrajectoryRun::record_checkpoint(long step, std::span<const float> theta) {
    if (step < 0 || step % manifest_.stride != 0)
        throw StoreError("step " + std::to_string(step) + " is not a multiple of stride " + std::to_string(manifest_.stride));
    if (!manifest_.checkpoints.empty() && step <= manifest_.checkpoints.back())
        throw StoreError("step " + std::to_string(step) + " is not after the last recorded step " +
                         std::to_string(manifest_.checkpoints.back()));
    if (theta.size() != manifest_.num_params)
        throw StoreError("checkpoint has " + std::to_string(theta.size()) + " values, run expects " +
                         std::to_string(manifest_.num_params));
    write_file_atomic(dir_ / checkpoint_filename(step),
                      std::string(reinterpret_cast<const char*>(theta.data()), theta.size() * sizeof(float)));
    manifest_.checkpoints.push_back(step);
    manifest_.crc32.push_back(checksum(theta));
    write_manifest();
}

void TrajectoryRun::set_final_loss(double loss) {
    manifest_.final_loss = loss;
    write_manifest();
}

std::vector<float> TrajectoryRun::read_checkpoint(long step) const {
    if (std::find(manifest_.checkpoints.begin(), manifest_.checkpoints.end(), step) == manifest_.checkpoints.end())
        throw StoreError("step " + std::to_string(step) + " is not recorded in " + dir_.string());
    const fs::path file = dir_ / checkpoint_filename(step);
    const std::string bytes = read_file(file);
    if (bytes.size() != manifest_.num_params * sizeof(float)) throw StoreError(file.string() + ": wrong size");
    std::vector<float> out(manifest_.num_params);
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

ad::Matrix TrajectoryRun::read_all() const {
    ad::Matrix m(static_cast<ad::Index>(manifest_.num_params), static_cast<ad::Index>(manifest_.checkpoints.size()));
    for (std::size_t j = 0; j < manifest_.checkpoints.size(); ++j) {
        const auto v = read_checkpoint(manifest_.checkpoints[j]);
        for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<ad::Index>(i), static_cast<ad::Index>(j)) = v[i];
    }
    return m;
}

std::vector<fs::path> list_runs(const fs::path& root) {
    std::vector<fs::path> out;
    if (!fs::is_directory(root)) return out;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) out.push_back(entry.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::string> verify_store(const fs::path& root) {
    std::vector<std::string> problems;
    const auto runs = list_runs(root);
    if (runs.empty()) problems.push_back(root.string() + ": no runs found");
    for (const fs::path& dir : runs) {
        RunManifest m;
        try {
            m = RunManifest::from_json(read_file(dir / "manifest.json"));
        } catch (const std::exception& e) {
            problems.push_back((dir / "manifest.json").string() + ": " + e.what());
            continue;
        }
        for (std::size_t j = 0; j < m.checkpoints.size(); ++j) {
            const fs::path file = dir / checkpoint_filename(m.checkpoints[j]);
            if (j > 0 && m.checkpoints[j] <= m.checkpoints[j - 1])
                problems.push_back((dir / "manifest.json").string() + ": steps not increasing");
            if (m.checkpoints[j] % m.stride != 0)
                problems.push_back((dir / "manifest.json").string() + ": step " + std::to_string(m.checkpoints[j]) +
                                   " not a multiple of the stride");
            if (!fs::exists(file)) {
                problems.push_back(file.string() + ": missing");
                continue;
            }
            const std::string bytes = read_file(file);
            if (bytes.size() != m.num_params * sizeof(float)) {
                problems.push_back(file.string() + ": size " + std::to_string(bytes.size()) + " bytes, expected " +
                                   std::to_string(m.num_params * sizeof(float)));
                continue;
            }
            std::vector<float> v(m.num_params);
            std::memcpy(v.data(), bytes.data(), bytes.size());
            if (checksum(v) != m.crc32[j]) problems.push_back(file.string() + ": checksum mismatch");
        }
    }
    return problems;
}

WindowDataset::WindowDataset(int context, int horizons) : context_(context), horizons_(horizons) {
    if (context < 1 || horizons < 1) throw std::invalid_argument("WindowDataset: context and horizons must be >= 1");
}

void WindowDataset::add_run(TemplatePtr tmpl, ad::Matrix trajectory, std::string run_id) {
    if (tmpl && static_cast<std::size_t>(trajectory.rows()) != tmpl->num_params())
        throw StoreError("trajectory height does not match the architecture");
    const int n = static_cast<int>(trajectory.cols());
    const std::size_t id = runs_.size();
    runs_.push_back(Run{std::move(tmpl), std::move(trajectory), std::move(run_id)});
    if (n < context_ + 1) return;
    const int need = std::min(horizons_, n - context_);
    for (int tau = context_ - 1; tau + need <= n - 1; ++tau) positions_.emplace_back(id, tau);
}

void WindowDataset::add_store(const fs::path& root, GraphMode mode) {
    std::map<std::uint64_t, TemplatePtr> cache;
    for (const fs::path& dir : list_runs(root)) {
        const TrajectoryRun run = TrajectoryRun::open(dir);
        const auto h = run.manifest().spec.hash();
        auto it = cache.find(h);
        if (it == cache.end()) it = cache.emplace(h, build_template(run.manifest().spec, mode)).first;
        add_run(it->second, run.read_all(), run.manifest().run_id);
    }
}

WindowSample WindowDataset::window(std::size_t run, int tau) const {
    const Run& r = runs_.at(run);
    const int n = static_cast<int>(r.states.cols());
    if (tau < context_ - 1 || tau >= n - 1) throw StoreError("window position out of range");
    const int avail = std::min(horizons_, n - 1 - tau);
    WindowSample s;
    s.run = run;
    s.tau = tau;
    s.context.resize(r.states.rows(), context_);
    for (int j = 0; j < context_; ++j) s.context.col(j) = r.states.col(tau - j);
    s.targets.resize(r.states.rows(), avail);
    for (int k = 1; k <= avail; ++k) s.targets.col(k - 1) = r.states.col(tau + k) - r.states.col(tau);
    return s;
}

WindowSample WindowDataset::sample(std::mt19937_64& rng) const {
    if (positions_.empty()) throw StoreError("no valid windows in the dataset");
    std::uniform_int_distribution<std::size_t> pick(0, positions_.size() - 1);
    const auto [run, tau] = positions_[pick(rng)];
    WindowSample s = window(run, tau);
    const int need = std::min(horizons_, static_cast<int>(runs_[run].states.cols()) - context_);
    if (s.targets.cols() > need) s.targets.conservativeResize(Eigen::NoChange, need);
    return s;
}

}  // namespace nino
