#include "nino/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace nino {

static_assert(std::endian::native == std::endian::little, "on-disk formats are little-endian");

namespace {

constexpr char kMagic[8] = {'N', 'I', 'N', 'O', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw CheckpointError("checkpoint truncated");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + tmp.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        f.flush();
        if (!f) throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt) {
    nlohmann::ordered_json header;
    header["format"] = "nino.model_checkpoint";
    header["config"] = nlohmann::json::parse(ckpt.config_json);
    header["iteration"] = ckpt.iteration;
    header["metadata"] = nlohmann::json::parse(ckpt.metadata);
    nlohmann::ordered_json table = nlohmann::ordered_json::array();
    std::size_t offset = 0;
    for (const auto& [name, values] : ckpt.tensors) {
        table.push_back({{"name", name}, {"offset", offset}, {"count", values.size()}});
        offset += values.size();
    }
    header["tensors"] = std::move(table);
    const std::string text = header.dump();

    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out += text;
    out.reserve(out.size() + offset * sizeof(double));
    for (const auto& [name, values] : ckpt.tensors)
        out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
    write_file_atomic(path, out);
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string in = read_file(path);
    if (in.size() < sizeof kMagic || std::memcmp(in.data(), kMagic, sizeof kMagic) != 0)
        throw CheckpointError(path.string() + ": not a model checkpoint");
    std::size_t pos = sizeof kMagic;
    const auto version = get<std::uint32_t>(in, pos);
    if (version != kCheckpointVersion)
        throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    const auto len = get<std::uint64_t>(in, pos);
    if (pos + len > in.size()) throw CheckpointError(path.string() + ": truncated header");
    const auto header = nlohmann::json::parse(in.substr(pos, len));
    pos += len;
    ModelCheckpoint ckpt;
    ckpt.config_json = header.at("config").dump();
    ckpt.iteration = header.at("iteration").get<long>();
    ckpt.metadata = header.at("metadata").dump();
    const std::size_t data = pos;
    for (const auto& t : header.at("tensors")) {
        const auto offset = t.at("offset").get<std::size_t>();
        const auto count = t.at("count").get<std::size_t>();
        if (data + (offset + count) * sizeof(double) > in.size()) throw CheckpointError(path.string() + ": truncated data");
        std::vector<double> values(count);
        std::memcpy(values.data(), in.data() + data + offset * sizeof(double), count * sizeof(double));
        ckpt.tensors.emplace(t.at("name").get<std::string>(), std::move(values));
    }
    return ckpt;
}

}  // namespace nino
