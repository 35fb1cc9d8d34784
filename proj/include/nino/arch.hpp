#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace nino {

enum class LayerKind { linear, conv, embedding, layernorm, msa, residual };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// One entry of an ordered architecture description. The network is a chain
/// of neuron groups: linear/conv/msa/embedding layers open a new group,
/// layernorm attaches to the current group, and a residual marker links the
/// group that was current before layer `residual_from` to the current group.
struct LayerDesc {
    LayerKind kind = LayerKind::linear;
    int fan_in = 0;
    int fan_out = 0;
    int kernel_h = 1;
    int kernel_w = 1;
    int heads = 1;
    bool bias = true;
    /// embedding: add into the current group instead of opening a new one
    /// (positional tables).
    bool merge = false;
    /// embedding: rows are ordered tokens and receive word-position features.
    bool word_positions = true;
    /// embedding: the table is an output projection d -> V (untied LM head).
    bool lm_head = false;
    int residual_from = -1;
    std::string name;
};

class SpecError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnsupportedArchitecture : public SpecError {
public:
    using SpecError::SpecError;
};

/// A contiguous named slice of a flat parameter vector, row-major [rows x cols].
struct ParamTensor {
    std::string name;
    int layer = -1;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t size() const { return rows * cols; }
};

struct ArchSpec {
    std::vector<LayerDesc> layers;

    /// Throws SpecError when adjacent layers disagree on widths, an MSA width
    /// is not divisible by its head count, or a residual marker is dangling.
    void validate() const;

    /// Flat layout shared by the task models and the neural graph builder:
    ///   linear    W [in x out], b [out]
    ///   conv      W [out x in*kh*kw] (kernel row-major), b [out]
    ///   embedding E [rows x dim] (lm_head: [dim x rows])
    ///   layernorm gamma [d], beta [d]
    ///   msa       Wq, Wk, Wv [d x d], Wo [d x d], then bq, bk, bv, bo
    std::vector<ParamTensor> tensors() const;
    std::size_t num_params() const;

    /// Stable content hash used in manifests.
    std::uint64_t hash() const;
};

/// JSON text of the layer list; arch_from_json validates the result.
std::string arch_to_json(const ArchSpec& spec);
ArchSpec arch_from_json(const std::string& text);

// Builders used by tests, the task zoo and the symmetry experiment.
ArchSpec make_mlp(const std::vector<int>& widths, bool bias = true);
ArchSpec make_cnn(int in_channels, const std::vector<int>& channels, int classes, int kernel = 3);
ArchSpec make_gpt(int vocab, int context, int layers, int width, int heads, bool untied_head = false);
ArchSpec make_msa_only(int width, int heads, bool bias = false);

}  // namespace nino
