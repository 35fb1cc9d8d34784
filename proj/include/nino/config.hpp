#pragma once

// Run configuration shared by the command-line subcommands: one JSON file,
// validated as a whole before any job starts.

#include "nino/harness.hpp"
#include "nino/task_zoo.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace nino {

/// Carries every validation failure found, one per line in what().
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> errors);
    const std::vector<std::string>& errors() const { return errors_; }

private:
    std::vector<std::string> errors_;
};

/// adam | linefit | linefit+ | wnn | wnn+ | nino | nino-naive
const std::vector<std::string>& method_names();
bool is_method(const std::string& name);

struct CollectSettings {
    int runs = 20;
    int stride = 200;
    std::uint64_t seed0 = 1000;
};

struct RunConfig {
    std::vector<TaskSpec> tasks;
    /// Nowcaster JSON as accepted by make_nowcaster, defaults filled in.
    std::string nowcaster;
    std::vector<std::string> methods;
    std::vector<std::uint64_t> seeds;
    std::filesystem::path output_root = "out";
    std::filesystem::path data_root;
    CollectSettings collect;
    MetaTrainConfig meta;
    AccelConfig accel;

    /// Defaults: fm16, NiNo with c = 5, K = 40, D = 128, M = 3, p = 2,
    /// stride 200, meta-training lr 3e-3 with batch 4, methods adam and nino,
    /// seeds 0..4.
    static RunConfig defaults();
    /// Starts from defaults(); unknown keys at any level and invalid values
    /// are all reported together in one ConfigError. Collection, the
    /// nowcaster and the accelerated runs must share one stride.
    static RunConfig from_json(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);
    std::string to_json() const;

    const TaskSpec& task(const std::string& id) const;
};

/// The nowcaster for a method name, nullptr for the base optimizer. Linefit
/// variants are built directly; learned methods load `checkpoint` and wnn
/// vs wnn+ / nino vs nino-naive must match.
std::unique_ptr<Nowcaster> method_nowcaster(const std::string& method, int context,
                                            const std::filesystem::path& checkpoint);

}  // namespace nino
