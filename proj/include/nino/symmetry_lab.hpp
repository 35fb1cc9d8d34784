#pragma once

// Neuron-permutation experiment on a single multi-head self-attention layer:
// label hidden-neuron permutations by whether they preserve the layer's
// output, embed the permuted weights with a randomly initialized GNN on both
// graph constructions, and measure linear separability of the labels.

#include "nino/arch.hpp"
#include "nino/autograd.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace nino {

using ad::Matrix;
using ad::Vector;

/// x: [tokens x d]; weights [d x d] in x * W convention. Per head h (columns
/// h*d/H ...): A_h = softmax((x Wq_h)(x Wk_h)^T / sqrt(d)), output
/// sum_h A_h (x Wv_h) Wo_h with Wo_h the matching rows of Wo.
Matrix msa_forward(const Matrix& x, const Matrix& wq, const Matrix& wk, const Matrix& wv, const Matrix& wo, int heads);
/// Same on the flat parameters of make_msa_only(d, heads, bias = false).
Matrix msa_forward(const Matrix& x, std::span<const double> theta, int d, int heads);

/// Permutation of the hidden index: column j of Wq/Wk takes old column qk[j];
/// column j of Wv and row j of Wo take old index v[j].
struct HiddenPermutation {
    std::vector<int> qk;
    std::vector<int> v;
};

enum class PermKind {
    // function-preserving
    within_qk,    // joint Wq/Wk shuffle inside each head
    within_v,     // joint Wv/Wo shuffle inside each head
    within_both,  // independent qk and v shuffles inside each head
    head_swap,    // whole heads exchanged
    // function-changing (almost surely)
    cross_qk,     // qk neurons swapped across heads
    cross_v,      // v neurons swapped across heads
    cross_joint,  // the same cross-head swap on qk and v
    global        // unrestricted shuffles
};

const char* to_string(PermKind kind);
inline constexpr int kNumPermKinds = 8;
/// The four kinds that always preserve the function.
bool preserves_function(PermKind kind);

HiddenPermutation identity_permutation(int d);
/// True when qk and v both map every head block onto one head block, with
/// the same head mapping; exactly the permutations that keep the output.
bool head_consistent(const HiddenPermutation& perm, int heads);
/// Function-changing kinds are redrawn until they are not head-consistent.
HiddenPermutation sample_permutation(PermKind kind, int d, int heads, std::mt19937_64& rng);
std::vector<double> apply_permutation(std::span<const double> theta, int d, const HiddenPermutation& perm);

/// Max-abs output difference below tol on every one of n_inputs random inputs.
bool functionally_equivalent(std::span<const double> a, std::span<const double> b, int d, int heads,
                             std::mt19937_64& rng, int n_inputs = 8, int tokens = 5, double tol = 1e-5);

/// Both classes hold at least 10% of the labels.
bool labels_balanced(const std::vector<int>& labels);

struct LogisticFit {
    Vector weights;  // on standardized features
    double bias = 0;
    double accuracy = 0;
};

/// Newton iterations on the L2-regularized logistic loss; features are
/// standardized first. Accuracy is on the training samples.
LogisticFit fit_logistic(const Matrix& features, const std::vector<int>& labels, double l2 = 1e-4, int iterations = 50);

/// Rows projected onto the two leading principal components.
Matrix pca_2d(const Matrix& rows);

struct SymmetryConfig {
    int d = 12;
    int heads = 4;
    int permutations = 1000;
    int gnn_hidden = 32;
    int gnn_depth = 3;
    /// Init scale of the probe GNN (weights and biases U(+-gain/sqrt(fan_in))).
    double gnn_gain = 1.0;
    int inputs = 8;
    double tolerance = 1e-5;
    std::uint64_t seed = 0;
};

struct SymmetryMode {
    std::string mode;      // ours | naive
    double accuracy = 0;
    Matrix embeddings;     // [n x hidden]
    Matrix projection;     // [n x 2]
};

struct SymmetryResult {
    std::vector<PermKind> kinds;
    std::vector<int> labels;  // 1 = output preserved
    int good = 0;
    int resamples = 0;        // seeds rejected for label imbalance
    std::uint64_t seed = 0;   // seed actually used
    std::vector<SymmetryMode> modes;

    /// mode,accuracy,n,seed
    std::string summary_csv() const;
    /// mode,index,kind,label,x,y
    std::string projection_csv() const;
};

/// Stratified sampler (half preserving kinds, half changing kinds), labels
/// by functional equivalence, embeddings from one random GNN per seed.
/// A minority class under 10% advances the seed and resamples.
SymmetryResult run_symmetry_experiment(const SymmetryConfig& cfg);

}  // namespace nino
