#include "nino/config.hpp"

#include "nino/baselines.hpp"
#include "nino/nino_model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace nino {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join_lines(const std::vector<std::string>& errors) {
    std::string out = "invalid run config:";
    for (const auto& e : errors) out += "\n  " + e;
    return out;
}

/// Collects errors instead of throwing on the first one.
class Checker {
public:
    std::vector<std::string> errors;

    void unknown_keys(const json& j, const std::string& where, std::initializer_list<const char*> known) {
        if (!j.is_object()) {
            errors.push_back(where + ": expected an object");
            return;
        }
        for (const auto& [k, v] : j.items())
            if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; }))
                errors.push_back(where + ": unknown key '" + k + "'");
    }

    template <class T>
    void read(const json& j, const char* key, const std::string& where, T& out) {
        if (!j.is_object() || !j.contains(key)) return;
        try {
            out = j.at(key).get<T>();
        } catch (const std::exception&) {
            errors.push_back(where + "." + key + ": wrong type (" + j.at(key).dump() + ")");
        }
    }

    void require(bool ok, const std::string& message) {
        if (!ok) errors.push_back(message);
    }

    /// Runs f, turning an exception into an error entry.
    template <class F>
    void attempt(const std::string& where, F&& f) {
        try {
            f();
        } catch (const std::exception& e) {
            errors.push_back(where + ": " + e.what());
        }
    }
};

}  // namespace

ConfigError::ConfigError(std::vector<std::string> errors)
    : std::runtime_error(join_lines(errors)), errors_(std::move(errors)) {}

const std::vector<std::string>& method_names() {
    static const std::vector<std::string> names = {"adam", "linefit", "linefit+", "wnn", "wnn+", "nino", "nino-naive"};
    return names;
}

bool is_method(const std::string& name) {
    const auto& n = method_names();
    return std::find(n.begin(), n.end(), name) != n.end();
}

RunConfig RunConfig::defaults() {
    RunConfig c;
    c.tasks.push_back(task_preset("fm16"));
    c.nowcaster = NinoConfig{}.to_json();
    c.methods = {"adam", "nino"};
    c.seeds = {0, 1, 2, 3, 4};
    c.data_root = default_data_root();
    return c;
}

RunConfig RunConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError({std::string("not valid JSON: ") + e.what()});
    }
    Checker ck;
    RunConfig c = defaults();
    ck.unknown_keys(j, "config",
                    {"tasks", "nowcaster", "methods", "seeds", "output_root", "data_root", "collect", "meta_train",
                     "accelerate"});
    if (!j.is_object()) throw ConfigError(ck.errors);

    if (j.contains("tasks")) {
        c.tasks.clear();
        if (!j["tasks"].is_array() || j["tasks"].empty()) ck.errors.push_back("tasks: expected a non-empty list");
        else
            for (std::size_t i = 0; i < j["tasks"].size(); ++i) {
                const json& t = j["tasks"][i];
                ck.attempt("tasks[" + std::to_string(i) + "]", [&] {
                    c.tasks.push_back(t.is_string() ? task_preset(t.get<std::string>()) : TaskSpec::from_json(t.dump()));
                });
            }
        for (std::size_t a = 0; a < c.tasks.size(); ++a)
            for (std::size_t b = a + 1; b < c.tasks.size(); ++b)
                ck.require(c.tasks[a].id != c.tasks[b].id, "tasks: duplicate id '" + c.tasks[a].id + "'");
    }

    if (j.contains("nowcaster")) {
        const json& n = j["nowcaster"];
        if (!n.is_object()) ck.errors.push_back("nowcaster: expected an object");
        else {
            json merged = n;
            if (!merged.contains("kind")) merged["kind"] = "nino";
            ck.attempt("nowcaster", [&] { c.nowcaster = make_nowcaster(merged.dump())->config_json(); });
        }
    }

    if (j.contains("methods")) {
        c.methods.clear();
        ck.read(j, "methods", "config", c.methods);
        for (const auto& m : c.methods)
            ck.require(is_method(m), "methods: unknown method '" + m +
                                         "' (expected adam, linefit, linefit+, wnn, wnn+, nino or nino-naive)");
        ck.require(!c.methods.empty(), "methods: expected at least one method");
    }
    if (j.contains("seeds")) {
        ck.read(j, "seeds", "config", c.seeds);
        ck.require(!c.seeds.empty(), "seeds: expected at least one seed");
    }
    std::string path;
    if (j.contains("output_root")) {
        ck.read(j, "output_root", "config", path);
        c.output_root = path;
    }
    if (j.contains("data_root")) {
        ck.read(j, "data_root", "config", path);
        c.data_root = path;
    }

    if (j.contains("collect")) {
        const json& s = j["collect"];
        ck.unknown_keys(s, "collect", {"runs", "stride", "seed0"});
        ck.read(s, "runs", "collect", c.collect.runs);
        ck.read(s, "stride", "collect", c.collect.stride);
        ck.read(s, "seed0", "collect", c.collect.seed0);
    }
    if (j.contains("meta_train")) {
        const json& s = j["meta_train"];
        ck.unknown_keys(s, "meta_train",
                        {"iterations", "lr", "weight_decay", "batch", "cosine", "checkpoint_every", "checkpoint_path",
                         "seed"});
        ck.read(s, "iterations", "meta_train", c.meta.iterations);
        ck.read(s, "lr", "meta_train", c.meta.lr);
        ck.read(s, "weight_decay", "meta_train", c.meta.weight_decay);
        ck.read(s, "batch", "meta_train", c.meta.batch);
        ck.read(s, "cosine", "meta_train", c.meta.cosine);
        ck.read(s, "checkpoint_every", "meta_train", c.meta.checkpoint_every);
        ck.read(s, "seed", "meta_train", c.meta.seed);
        if (s.is_object() && s.contains("checkpoint_path")) {
            ck.read(s, "checkpoint_path", "meta_train", path);
            c.meta.checkpoint_path = path;
        }
    }
    if (j.contains("accelerate")) {
        const json& s = j["accelerate"];
        ck.unknown_keys(s, "accelerate", {"stride", "k_power", "context"});
        ck.read(s, "stride", "accelerate", c.accel.stride);
        ck.read(s, "k_power", "accelerate", c.accel.k_power);
        ck.read(s, "context", "accelerate", c.accel.context);
    }

    ck.require(c.collect.runs >= 1, "collect.runs: must be >= 1");
    ck.require(c.collect.stride >= 1, "collect.stride: must be >= 1");
    ck.require(c.meta.iterations >= 1, "meta_train.iterations: must be >= 1");
    ck.require(c.meta.lr > 0, "meta_train.lr: must be positive");
    ck.require(c.meta.weight_decay >= 0, "meta_train.weight_decay: must be >= 0");
    ck.require(c.meta.batch >= 1, "meta_train.batch: must be >= 1");
    ck.require(c.meta.checkpoint_every >= 1, "meta_train.checkpoint_every: must be >= 1");
    ck.require(c.accel.stride >= 1, "accelerate.stride: must be >= 1");
    ck.require(c.accel.k_power >= 0, "accelerate.k_power: must be >= 0");
    ck.require(c.accel.context >= 0, "accelerate.context: must be >= 0");
    ck.require(c.collect.stride == c.accel.stride,
               "collect.stride (" + std::to_string(c.collect.stride) + ") differs from accelerate.stride (" +
                   std::to_string(c.accel.stride) + ")");
    const json n = json::parse(c.nowcaster);
    if (n.value("kind", "") == "nino" && n.contains("stride"))
        ck.require(n["stride"].get<int>() == c.accel.stride,
                   "nowcaster.stride (" + n["stride"].dump() + ") differs from accelerate.stride (" +
                       std::to_string(c.accel.stride) + ")");

    if (!ck.errors.empty()) throw ConfigError(ck.errors);
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot read config file " + path.string()});
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

std::string RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["tasks"] = nlohmann::ordered_json::array();
    for (const auto& t : tasks) j["tasks"].push_back(nlohmann::ordered_json::parse(t.to_json()));
    j["nowcaster"] = nlohmann::ordered_json::parse(nowcaster);
    j["methods"] = methods;
    j["seeds"] = seeds;
    j["output_root"] = output_root.string();
    j["data_root"] = data_root.string();
    j["collect"] = {{"runs", collect.runs}, {"stride", collect.stride}, {"seed0", collect.seed0}};
    j["meta_train"] = {{"iterations", meta.iterations},
                       {"lr", meta.lr},
                       {"weight_decay", meta.weight_decay},
                       {"batch", meta.batch},
                       {"cosine", meta.cosine},
                       {"checkpoint_every", meta.checkpoint_every},
                       {"checkpoint_path", meta.checkpoint_path.string()},
                       {"seed", meta.seed}};
    j["accelerate"] = {{"stride", accel.stride}, {"k_power", accel.k_power}, {"context", accel.context}};
    return j.dump(2);
}

const TaskSpec& RunConfig::task(const std::string& id) const {
    for (const auto& t : tasks)
        if (t.id == id) return t;
    throw std::invalid_argument("no task '" + id + "' in the run config");
}

std::unique_ptr<Nowcaster> method_nowcaster(const std::string& method, int context, const fs::path& checkpoint) {
    if (!is_method(method)) throw std::invalid_argument("unknown method '" + method + "'");
    if (method == "adam") return nullptr;
    if (method == "linefit" || method == "linefit+")
        return std::make_unique<LinefitNowcaster>(context, method == "linefit+");
    if (checkpoint.empty()) throw std::invalid_argument("method " + method + " needs a nowcaster checkpoint");
    auto model = load_nowcaster(checkpoint);
    if (model->name() != method)
        throw std::invalid_argument(checkpoint.string() + " holds a " + model->name() + " nowcaster, not " + method);
    return model;
}

}  // namespace nino
