#pragma once

// Versioned single-file container for meta-model weights:
//   "NINOCKPT" | u32 version | u64 header bytes | JSON header | f64 tensor data
// The header holds the model config and a table of named tensors
// (name, element offset, element count) into the data block.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace nino {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ModelCheckpoint {
    /// Model configuration as produced by TrainableNowcaster::config_json().
    std::string config_json;
    long iteration = 0;
    std::map<std::string, std::vector<double>> tensors;
    /// Free-form metadata (JSON object text), e.g. the meta-training config.
    std::string metadata = "{}";
};

/// Write-then-rename; the target is either the old or the new file.
void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Write `bytes` to path via a temporary sibling and an atomic rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace nino
