#pragma once

// Target tasks: small MLPs, ConvNets and decoder-only Transformers on
// in-memory datasets, trained with Adam/AdamW on a flat parameter vector in
// ArchSpec::tensors() order.

#include "nino/arch.hpp"
#include "nino/autograd.hpp"
#include "nino/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nino {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NonFiniteLoss : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class OptimizerKind { adam, adamw };
enum class MetricKind { accuracy, perplexity };
enum class ModelKind { mlp, cnn, gpt };
enum class Split { train, val };

const char* to_string(OptimizerKind kind);
const char* to_string(MetricKind kind);
const char* to_string(ModelKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);
MetricKind metric_kind_from_string(const std::string& name);
ModelKind model_kind_from_string(const std::string& name);

struct TaskSpec {
    std::string id;
    /// blobs | fm-synth | fashion-mnist | char-synth | text:<path> | none
    std::string dataset = "fm-synth";
    ModelKind model = ModelKind::cnn;
    ArchSpec arch;
    int image_size = 16;    // fm-synth side length
    int conv_stride = 2;
    int seq_len = 32;       // gpt training window
    OptimizerKind optimizer = OptimizerKind::adam;
    double lr = 6e-3;
    double weight_decay = 0.0;
    int batch_size = 32;
    long total_steps = 2000;
    MetricKind metric = MetricKind::accuracy;
    double target = 0.0;
    int eval_every = 100;

    /// Accuracy targets are reached from below, perplexity targets from above.
    bool reached(double metric_value) const;
    AdamConfig adam_config() const;

    std::string to_json() const;
    static TaskSpec from_json(const std::string& text);
};

/// Named task presets: mlp-blobs, fm16 (CNN 16-32-32 on fm-synth),
/// fashion-mnist16 (same CNN on the real IDX files), char-2-32 (2-layer,
/// 32-wide Transformer on a character corpus) and gpt2-2-32 (parameter-count
/// reference with the 50257-token vocabulary; dataset none).
TaskSpec task_preset(const std::string& name);
std::vector<std::string> task_preset_names();

/// NINO_DATA_ROOT when set, otherwise ./data.
std::filesystem::path default_data_root();

struct ImageData {
    int channels = 1;
    int height = 1;
    int width = 1;
    int classes = 2;
    ad::Matrix train_x, val_x;  // [N x C*H*W]
    std::vector<int> train_y, val_y;
};

struct TokenData {
    int vocab = 0;
    std::vector<int> train, val;
};

/// Balanced 10-class images built from smooth class prototypes with random
/// shifts, cross-class blending and noise. Depends only on its arguments.
ImageData make_fm_synth(int size, int n_train, int n_val, std::uint64_t seed);
/// Gaussian clusters, one per class, in `dim` dimensions.
ImageData make_blobs(int classes, int dim, int n_train, int n_val, double spread, std::uint64_t seed);
/// FashionMNIST IDX files (raw or .gz) under root/fashion-mnist.
ImageData load_fashion_mnist(const std::filesystem::path& root);

/// Fixed character tokenizer: '\n' and printable ASCII, 96 tokens.
inline constexpr int kCharVocab = 96;
std::vector<int> encode_chars(const std::string& text);
std::string decode_chars(std::span<const int> tokens);
std::string make_char_corpus(std::size_t approx_chars, std::uint64_t seed);
TokenData tokenize_corpus(const std::string& text, double val_fraction = 0.1);

class Task {
public:
    /// Loads or generates the dataset; throws DataError when files are missing.
    static std::unique_ptr<Task> build(const TaskSpec& spec, const std::filesystem::path& data_root);

    virtual ~Task() = default;
    const TaskSpec& spec() const { return spec_; }
    std::size_t num_params() const { return spec_.arch.num_params(); }

    /// Deterministic under seed.
    std::vector<double> init_params(std::uint64_t seed) const;
    /// Mean loss of one random minibatch; the gradient is added into grad
    /// (may be empty).
    virtual double loss_grad(std::span<const double> theta, std::span<double> grad, std::mt19937_64& rng) const = 0;
    /// Accuracy in [0, 1] or perplexity, over the whole split.
    virtual double evaluate(std::span<const double> theta, Split split) const = 0;
    /// Mean loss over the whole split.
    virtual double mean_loss(std::span<const double> theta, Split split) const = 0;

protected:
    explicit Task(TaskSpec spec) : spec_(std::move(spec)) {}
    TaskSpec spec_;
};

struct TrainState {
    std::vector<double> theta;
    Adam opt;
    long step = 0;
    std::mt19937_64 rng;
};

TrainState make_train_state(const Task& task, std::uint64_t seed);

/// Exactly n optimizer steps; returns the minibatch losses. Throws
/// NonFiniteLoss (parameters left at the last finite state) on NaN/inf.
std::vector<double> train_steps(const Task& task, TrainState& state, long n);

}  // namespace nino
