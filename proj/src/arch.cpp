#include "nino/arch.hpp"

#include <nlohmann/json.hpp>

#include <string>

namespace nino {

const char* to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::linear: return "linear";
        case LayerKind::conv: return "conv";
        case LayerKind::embedding: return "embedding";
        case LayerKind::layernorm: return "layernorm";
        case LayerKind::msa: return "msa";
        case LayerKind::residual: return "residual";
    }
    return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
    if (name == "linear") return LayerKind::linear;
    if (name == "conv") return LayerKind::conv;
    if (name == "embedding") return LayerKind::embedding;
    if (name == "layernorm") return LayerKind::layernorm;
    if (name == "msa") return LayerKind::msa;
    if (name == "residual") return LayerKind::residual;
    throw UnsupportedArchitecture("unsupported layer kind '" + name + "'");
}

void ArchSpec::validate() const {
    if (layers.empty()) throw SpecError("architecture has no layers");
    int current = -1;               // width of the current neuron group
    std::vector<int> group_before;  // width of the current group before layer i
    group_before.reserve(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerDesc& l = layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
        group_before.push_back(current);
        if (l.kind != LayerKind::conv && (l.kernel_h != 1 || l.kernel_w != 1))
            throw SpecError(where + ": only conv layers have kernels");
        switch (l.kind) {
            case LayerKind::linear:
            case LayerKind::conv:
                if (l.fan_in <= 0 || l.fan_out <= 0) throw SpecError(where + ": non-positive width");
                if (l.kind == LayerKind::conv && (l.kernel_h <= 0 || l.kernel_w <= 0))
                    throw SpecError(where + ": non-positive kernel");
                if (current >= 0 && current != l.fan_in)
                    throw SpecError(where + ": fan_in " + std::to_string(l.fan_in) + " does not match previous width " +
                                    std::to_string(current));
                current = l.fan_out;
                break;
            case LayerKind::embedding:
                if (l.fan_in <= 0 || l.fan_out <= 0) throw SpecError(where + ": non-positive size");
                if (l.lm_head) {
                    if (current != l.fan_in) throw SpecError(where + ": head width does not match current width");
                    current = l.fan_out;
                } else if (l.merge) {
                    if (current != l.fan_out) throw SpecError(where + ": merged table width does not match");
                } else {
                    if (current >= 0) throw SpecError(where + ": input embedding must open the network");
                    current = l.fan_out;
                }
                break;
            case LayerKind::layernorm:
                if (current < 0) throw SpecError(where + ": normalization before any neurons");
                if (l.fan_in != current || l.fan_out != current) throw SpecError(where + ": width mismatch");
                break;
            case LayerKind::msa:
                if (l.fan_in <= 0 || l.fan_in != l.fan_out) throw SpecError(where + ": msa must be square");
                if (current >= 0 && current != l.fan_in) throw SpecError(where + ": width mismatch");
                if (l.heads <= 0 || l.fan_in % l.heads != 0)
                    throw SpecError(where + ": hidden size " + std::to_string(l.fan_in) + " not divisible by " +
                                    std::to_string(l.heads) + " heads");
                current = l.fan_out;
                break;
            case LayerKind::residual: {
                if (l.residual_from < 0 || static_cast<std::size_t>(l.residual_from) >= i)
                    throw SpecError(where + ": residual source must be an earlier layer");
                if (group_before[static_cast<std::size_t>(l.residual_from)] != current)
                    throw SpecError(where + ": residual widths differ");
                break;
            }
        }
    }
}

std::vector<ParamTensor> ArchSpec::tensors() const {
    std::vector<ParamTensor> out;
    std::size_t offset = 0;
    auto push = [&](int layer, const std::string& name, std::size_t rows, std::size_t cols) {
        out.push_back(ParamTensor{name, layer, offset, rows, cols});
        offset += rows * cols;
    };
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerDesc& l = layers[i];
        const int li = static_cast<int>(i);
        const std::string base = l.name.empty() ? std::string(to_string(l.kind)) + std::to_string(i) : l.name;
        const auto in = static_cast<std::size_t>(l.fan_in), fo = static_cast<std::size_t>(l.fan_out);
        switch (l.kind) {
            case LayerKind::linear:
                push(li, base + ".weight", in, fo);
                if (l.bias) push(li, base + ".bias", 1, fo);
                break;
            case LayerKind::conv:
                push(li, base + ".weight", fo, in * static_cast<std::size_t>(l.kernel_h * l.kernel_w));
                if (l.bias) push(li, base + ".bias", 1, fo);
                break;
            case LayerKind::embedding:
                push(li, base + ".weight", in, fo);
                break;
            case LayerKind::layernorm:
                push(li, base + ".weight", 1, fo);
                if (l.bias) push(li, base + ".bias", 1, fo);
                break;
            case LayerKind::msa:
                push(li, base + ".q", in, in);
                push(li, base + ".k", in, in);
                push(li, base + ".v", in, in);
                push(li, base + ".o", in, in);
                if (l.bias) {
                    push(li, base + ".q_bias", 1, in);
                    push(li, base + ".k_bias", 1, in);
                    push(li, base + ".v_bias", 1, in);
                    push(li, base + ".o_bias", 1, in);
                }
                break;
            case LayerKind::residual: break;
        }
    }
    return out;
}

std::size_t ArchSpec::num_params() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += t.size();
    return n;
}

std::uint64_t ArchSpec::hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (8 * b)) & 0xffu;
            h *= 1099511628211ull;
        }
    };
    for (const LayerDesc& l : layers) {
        mix(static_cast<std::uint64_t>(l.kind));
        mix(static_cast<std::uint64_t>(l.fan_in));
        mix(static_cast<std::uint64_t>(l.fan_out));
        mix(static_cast<std::uint64_t>(l.kernel_h));
        mix(static_cast<std::uint64_t>(l.kernel_w));
        mix(static_cast<std::uint64_t>(l.heads));
        mix((l.bias ? 1u : 0u) | (l.merge ? 2u : 0u) | (l.word_positions ? 4u : 0u) | (l.lm_head ? 8u : 0u));
        mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(l.residual_from)));
    }
    return h;
}

std::string arch_to_json(const ArchSpec& spec) {
    nlohmann::ordered_json layers = nlohmann::ordered_json::array();
    for (const LayerDesc& l : spec.layers) {
        nlohmann::ordered_json j;
        j["kind"] = to_string(l.kind);
        j["name"] = l.name;
        j["fan_in"] = l.fan_in;
        j["fan_out"] = l.fan_out;
        j["kernel_h"] = l.kernel_h;
        j["kernel_w"] = l.kernel_w;
        j["heads"] = l.heads;
        j["bias"] = l.bias;
        j["merge"] = l.merge;
        j["word_positions"] = l.word_positions;
        j["lm_head"] = l.lm_head;
        j["residual_from"] = l.residual_from;
        layers.push_back(std::move(j));
    }
    return layers.dump();
}

ArchSpec arch_from_json(const std::string& text) {
    ArchSpec spec;
    const auto layers = nlohmann::json::parse(text);
    if (!layers.is_array()) throw SpecError("architecture JSON must be an array of layers");
    for (const auto& j : layers) {
        LayerDesc l;
        l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
        l.name = j.value("name", "");
        l.fan_in = j.value("fan_in", 0);
        l.fan_out = j.value("fan_out", 0);
        l.kernel_h = j.value("kernel_h", 1);
        l.kernel_w = j.value("kernel_w", 1);
        l.heads = j.value("heads", 1);
        l.bias = j.value("bias", true);
        l.merge = j.value("merge", false);
        l.word_positions = j.value("word_positions", true);
        l.lm_head = j.value("lm_head", false);
        l.residual_from = j.value("residual_from", -1);
        spec.layers.push_back(std::move(l));
    }
    spec.validate();
    return spec;
}

ArchSpec make_mlp(const std::vector<int>& widths, bool bias) {
    if (widths.size() < 2) throw SpecError("mlp needs at least two widths");
    ArchSpec spec;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        LayerDesc l;
        l.kind = LayerKind::linear;
        l.fan_in = widths[i];
        l.fan_out = widths[i + 1];
        l.bias = bias;
        l.name = "fc" + std::to_string(i + 1);
        spec.layers.push_back(l);
    }
    return spec;
}

ArchSpec make_cnn(int in_channels, const std::vector<int>& channels, int classes, int kernel) {
    ArchSpec spec;
    int prev = in_channels;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        LayerDesc l;
        l.kind = LayerKind::conv;
        l.fan_in = prev;
        l.fan_out = channels[i];
        l.kernel_h = kernel;
        l.kernel_w = kernel;
        l.name = "conv" + std::to_string(i + 1);
        spec.layers.push_back(l);
        prev = channels[i];
    }
    LayerDesc fc;
    fc.kind = LayerKind::linear;
    fc.fan_in = prev;
    fc.fan_out = classes;
    fc.name = "classifier";
    spec.layers.push_back(fc);
    return spec;
}

ArchSpec make_gpt(int vocab, int context, int layers, int width, int heads, bool untied_head) {
    ArchSpec spec;
    auto push = [&spec](LayerDesc l) {
        spec.layers.push_back(std::move(l));
        return static_cast<int>(spec.layers.size()) - 1;
    };
    LayerDesc wte;
    wte.kind = LayerKind::embedding;
    wte.fan_in = vocab;
    wte.fan_out = width;
    wte.bias = false;
    wte.name = "wte";
    push(wte);
    LayerDesc wpe = wte;
    wpe.fan_in = context;
    wpe.merge = true;
    wpe.word_positions = false;
    wpe.name = "wpe";
    push(wpe);
    for (int b = 0; b < layers; ++b) {
        const std::string p = "h" + std::to_string(b) + ".";
        LayerDesc ln;
        ln.kind = LayerKind::layernorm;
        ln.fan_in = ln.fan_out = width;
        ln.name = p + "ln_1";
        const int ln1 = push(ln);
        LayerDesc attn;
        attn.kind = LayerKind::msa;
        attn.fan_in = attn.fan_out = width;
        attn.heads = heads;
        attn.name = p + "attn";
        push(attn);
        LayerDesc res;
        res.kind = LayerKind::residual;
        res.residual_from = ln1;
        res.name = p + "res_1";
        push(res);
        ln.name = p + "ln_2";
        const int ln2 = push(ln);
        LayerDesc fc;
        fc.kind = LayerKind::linear;
        fc.fan_in = width;
        fc.fan_out = 4 * width;
        fc.name = p + "mlp.fc";
        push(fc);
        LayerDesc proj = fc;
        proj.fan_in = 4 * width;
        proj.fan_out = width;
        proj.name = p + "mlp.proj";
        push(proj);
        res.residual_from = ln2;
        res.name = p + "res_2";
        push(res);
    }
    LayerDesc lnf;
    lnf.kind = LayerKind::layernorm;
    lnf.fan_in = lnf.fan_out = width;
    lnf.name = "ln_f";
    push(lnf);
    if (untied_head) {
        LayerDesc head;
        head.kind = LayerKind::embedding;
        head.fan_in = width;
        head.fan_out = vocab;
        head.bias = false;
        head.lm_head = true;
        head.name = "lm_head";
        push(head);
    }
    return spec;
}

ArchSpec make_msa_only(int width, int heads, bool bias) {
    ArchSpec spec;
    LayerDesc attn;
    attn.kind = LayerKind::msa;
    attn.fan_in = attn.fan_out = width;
    attn.heads = heads;
    attn.bias = bias;
    attn.name = "attn";
    spec.layers.push_back(attn);
    return spec;
}

}  // namespace nino
