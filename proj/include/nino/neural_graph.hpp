#pragma once

#include "nino/arch.hpp"
#include "nino/autograd.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nino {

using ad::Matrix;
using ad::Vector;

enum class GraphMode { ours, naive };

const char* to_string(GraphMode mode);
GraphMode graph_mode_from_string(const std::string& name);

enum class EdgeType : int {
    linear_w = 0,
    conv_w,
    bias,
    embed_w,
    lm_head_w,
    norm_scale,
    msa_q,
    msa_k,
    msa_v,
    msa_o,
    residual,
    head_link,
};
inline constexpr int kNumEdgeTypes = 12;
const char* to_string(EdgeType type);

enum class NodeRole { neuron, bias, head, norm, embedding_row };
const char* to_string(NodeRole role);

inline constexpr int kLpeDim = 8;

struct GraphNode {
    NodeRole role = NodeRole::neuron;
    int layer = -1;
    /// Neuron group id; neurons may only be permuted within their group.
    /// Auxiliary nodes (bias, norm, head) use -1.
    int group = -1;
    /// 1-based row index for word-embedding rows, 0 elsewhere.
    int word_pos = 0;
};

struct GraphEdge {
    int src = 0;
    int dst = 0;
    EdgeType type = EdgeType::linear_w;
    /// Range into NeuralGraphTemplate::slots.
    std::uint32_t slot_begin = 0;
    std::uint32_t slot_count = 0;
    bool auxiliary() const { return type == EdgeType::residual || type == EdgeType::head_link; }
};

struct NeuronGroup {
    int layer = -1;
    int head = -1;  // msa head index, -1 outside attention
    std::string kind;
    int first_node = 0;
    int size = 0;
};

struct NodeFeatures {
    Matrix lpe;                 // [|V| x kLpeDim]
    std::vector<int> word_pos;  // [|V|]
};

/// Static topology of the neural graph of one architecture.
class NeuralGraphTemplate {
public:
    GraphMode mode = GraphMode::ours;
    ArchSpec spec;
    std::vector<ParamTensor> tensors;
    std::vector<GraphNode> nodes;
    std::vector<GraphEdge> edges;
    std::vector<NeuronGroup> groups;
    /// Flat parameter index per edge channel, -1 for auxiliary channels.
    std::vector<std::int64_t> slots;
    /// Inverse of `slots`: (edge, channel) per flat parameter.
    std::vector<std::array<std::int32_t, 2>> param_slot;
    NodeFeatures features;
    /// Column views of `edges` used by the message-passing kernels.
    std::vector<int> edge_src, edge_dst, edge_type;

    std::size_t num_nodes() const { return nodes.size(); }
    std::size_t num_edges() const { return edges.size(); }
    std::size_t num_params() const { return param_slot.size(); }
    std::size_t num_aux() const;
    /// Largest channel count of any edge (h*w for conv, 3 for naive msa).
    int max_channels() const;

    /// Manifest record with a stable key order and edge order.
    std::string to_json() const;
    /// Refresh edge_src/edge_dst/edge_type from `edges`.
    void index_edges();
};

using TemplatePtr = std::shared_ptr<const NeuralGraphTemplate>;

/// Throws SpecError / UnsupportedArchitecture for invalid specs.
TemplatePtr build_template(const ArchSpec& spec, GraphMode mode);

/// A window of c checkpoints of one run, newest first: states.col(0) = theta_tau.
struct ParameterWindow {
    Matrix states;             // [n x c]
    std::vector<long> steps;   // optional step index per column
    int stride = 200;

    int context() const { return static_cast<int>(states.cols()); }
    std::size_t size() const { return static_cast<std::size_t>(states.rows()); }
};

struct NeuralGraph {
    TemplatePtr tmpl;
    int channels = 1;  // padded d_E
    int context = 1;   // c
    /// [edges x channels*context], element (e, ch*context + j) is channel ch of state j.
    Matrix edge_features;
    NodeFeatures node_features;

    std::size_t num_edges() const { return static_cast<std::size_t>(edge_features.rows()); }
    const std::vector<int>& src() const;
    const std::vector<int>& dst() const;
};

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// pad_channels <= 0 uses the template's own max_channels(); larger values
/// zero-pad every edge to a common width.
NeuralGraph attach_window(const TemplatePtr& tmpl, const ParameterWindow& window, int pad_channels = 0);
/// Single state convenience (c = 1).
NeuralGraph attach_state(const TemplatePtr& tmpl, std::span<const double> theta, int pad_channels = 0);

/// Eigenvectors of the symmetric normalized Laplacian of the undirected,
/// unweighted template. Vectors are taken from the subspace that is constant
/// on structurally-equivalent nodes (identical neighbour sets), skipping the
/// trivial ones; each is sign-fixed so its largest-magnitude entry (lowest
/// index on ties) is positive, and repeated eigenvalues get a basis built
/// from projections of node indicator vectors in node order, sorted
/// lexicographically. Missing slots are zero.
Matrix compute_lpe(const NeuralGraphTemplate& tmpl, int dims = kLpeDim);

/// Same, also returning the eigenvalue of each column (0 for padding).
Matrix compute_lpe(const NeuralGraphTemplate& tmpl, int dims, Vector* eigenvalues);

/// 1..rows on word-embedding rows (clamped at ceiling when > 0), 0 elsewhere.
std::vector<int> word_positions(const NeuralGraphTemplate& tmpl, int ceiling = 0);

/// Scatter one channel block [edges x >= max_channels] back to the flat layout.
Vector graph_inverse(const NeuralGraphTemplate& tmpl, const Matrix& edge_slice);

/// Extract the edge block of state j of a graph.
Matrix edge_state(const NeuralGraph& graph, int state);

/// Relabel nodes: node i becomes perm[i]. Only neurons may move and only
/// within their group; edge order and parameter slots are kept.
NeuralGraph permute_nodes(const NeuralGraph& graph, std::span<const int> perm);

/// Sorted (src, dst, type, features) records; equal for two graphs exactly
/// when their typed, featured edge multisets coincide under the identity map.
std::vector<std::vector<double>> canonical_edges(const NeuralGraph& graph);

/// Weisfeiler-Lehman colour-refinement signature over node roles, edge types,
/// directions and exact feature bits. Isomorphic graphs share a signature, so
/// differing signatures prove non-isomorphism.
std::uint64_t wl_signature(const NeuralGraph& graph, int rounds = 3);

}  // namespace nino
