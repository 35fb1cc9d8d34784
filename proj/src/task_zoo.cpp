#include "nino/task_zoo.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace nino {

namespace fs = std::filesystem;
using ad::Index;
using ad::Matrix;
using ad::Tape;
using ad::Var;

const char* to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "adamw"; }
const char* to_string(MetricKind kind) { return kind == MetricKind::accuracy ? "accuracy" : "perplexity"; }
const char* to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::mlp: return "mlp";
        case ModelKind::cnn: return "cnn";
        case ModelKind::gpt: return "gpt";
    }
    return "?";
}

OptimizerKind optimizer_kind_from_string(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "adamw") return OptimizerKind::adamw;
    throw std::invalid_argument("unknown optimizer '" + name + "' (expected adam or adamw)");
}

MetricKind metric_kind_from_string(const std::string& name) {
    if (name == "accuracy") return MetricKind::accuracy;
    if (name == "perplexity") return MetricKind::perplexity;
    throw std::invalid_argument("unknown metric '" + name + "' (expected accuracy or perplexity)");
}

ModelKind model_kind_from_string(const std::string& name) {
    if (name == "mlp") return ModelKind::mlp;
    if (name == "cnn") return ModelKind::cnn;
    if (name == "gpt") return ModelKind::gpt;
    throw std::invalid_argument("unknown model '" + name + "' (expected mlp, cnn or gpt)");
}

bool TaskSpec::reached(double v) const {
    if (!std::isfinite(v)) return false;
    return metric == MetricKind::accuracy ? v >= target : v <= target;
}

AdamConfig TaskSpec::adam_config() const {
    AdamConfig c;
    c.lr = lr;
    c.weight_decay = weight_decay;
    c.decoupled = optimizer == OptimizerKind::adamw;
    return c;
}

std::string TaskSpec::to_json() const {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["dataset"] = dataset;
    j["model"] = to_string(model);
    j["arch"] = nlohmann::ordered_json::parse(arch_to_json(arch));
    j["image_size"] = image_size;
    j["conv_stride"] = conv_stride;
    j["seq_len"] = seq_len;
    j["optimizer"] = to_string(optimizer);
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["batch_size"] = batch_size;
    j["total_steps"] = total_steps;
    j["metric"] = to_string(metric);
    j["target"] = target;
    j["eval_every"] = eval_every;
    return j.dump(2);
}

TaskSpec TaskSpec::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    static const std::set<std::string> known = {"id",        "dataset",      "model",      "arch",        "image_size",
                                                "conv_stride", "seq_len",    "optimizer",  "lr",          "weight_decay",
                                                "batch_size", "total_steps", "metric",     "target",      "eval_every",
                                                "preset"};
    std::string unknown;
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    if (!unknown.empty()) throw std::invalid_argument("task: unknown keys: " + unknown);
    TaskSpec s = j.contains("preset") ? task_preset(j.at("preset").get<std::string>()) : TaskSpec{};
    if (j.contains("id")) s.id = j.at("id").get<std::string>();
    if (j.contains("dataset")) s.dataset = j.at("dataset").get<std::string>();
    if (j.contains("model")) s.model = model_kind_from_string(j.at("model").get<std::string>());
    if (j.contains("arch")) s.arch = arch_from_json(j.at("arch").dump());
    if (j.contains("image_size")) s.image_size = j.at("image_size").get<int>();
    if (j.contains("conv_stride")) s.conv_stride = j.at("conv_stride").get<int>();
    if (j.contains("seq_len")) s.seq_len = j.at("seq_len").get<int>();
    if (j.contains("optimizer")) s.optimizer = optimizer_kind_from_string(j.at("optimizer").get<std::string>());
    if (j.contains("lr")) s.lr = j.at("lr").get<double>();
    if (j.contains("weight_decay")) s.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("batch_size")) s.batch_size = j.at("batch_size").get<int>();
    if (j.contains("total_steps")) s.total_steps = j.at("total_steps").get<long>();
    if (j.contains("metric")) s.metric = metric_kind_from_string(j.at("metric").get<std::string>());
    if (j.contains("target")) s.target = j.at("target").get<double>();
    if (j.contains("eval_every")) s.eval_every = j.at("eval_every").get<int>();
    if (s.arch.layers.empty()) throw std::invalid_argument("task '" + s.id + "': no architecture");
    return s;
}

TaskSpec task_preset(const std::string& name) {
    TaskSpec s;
    s.id = name;
    if (name == "mlp-blobs") {
        s.dataset = "blobs";
        s.model = ModelKind::mlp;
        s.arch = make_mlp({8, 32, 4});
        s.lr = 1e-2;
        s.total_steps = 400;
        s.target = 0.95;
        s.eval_every = 20;
    } else if (name == "fm16" || name == "fashion-mnist16") {
        s.dataset = name == "fm16" ? "fm-synth" : "fashion-mnist";
        s.model = ModelKind::cnn;
        s.arch = make_cnn(1, {16, 32, 32}, 10);
        s.lr = 3e-3;
        s.total_steps = 2000;
        s.target = 0.86;
        s.eval_every = 50;
    } else if (name == "char-2-32") {
        s.dataset = "char-synth";
        s.model = ModelKind::gpt;
        s.arch = make_gpt(kCharVocab, 32, 2, 32, 2);
        s.seq_len = 32;
        s.optimizer = OptimizerKind::adamw;
        s.lr = 3e-3;
        s.weight_decay = 1e-2;
        s.batch_size = 16;
        s.total_steps = 2000;
        s.metric = MetricKind::perplexity;
        s.target = 6.0;
        s.eval_every = 100;
    } else if (name == "gpt2-2-32") {
        s.dataset = "none";
        s.model = ModelKind::gpt;
        s.arch = make_gpt(50257, 1024, 2, 32, 2);
        s.seq_len = 64;
        s.optimizer = OptimizerKind::adamw;
        s.lr = 2e-4;
        s.weight_decay = 1e-2;
        s.metric = MetricKind::perplexity;
        s.eval_every = 500;
    } else {
        throw std::invalid_argument("unknown task preset '" + name + "'");
    }
    return s;
}

std::vector<std::string> task_preset_names() { return {"mlp-blobs", "fm16", "fashion-mnist16", "char-2-32", "gpt2-2-32"}; }

fs::path default_data_root() {
    if (const char* env = std::getenv("NINO_DATA_ROOT"); env && *env) return env;
    return "data";
}

// ---------------------------------------------------------------- datasets

namespace {

void standardize(ImageData& d) {
    const double mean = d.train_x.mean();
    const double sd = std::sqrt((d.train_x.array() - mean).square().mean());
    const double s = sd > 0 ? sd : 1.0;
    d.train_x = (d.train_x.array() - mean) / s;
    d.val_x = (d.val_x.array() - mean) / s;
}

}  // namespace

ImageData make_fm_synth(int size, int n_train, int n_val, std::uint64_t seed) {
    constexpr int classes = 10;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double unit = size / 16.0;

    std::vector<Matrix> proto(classes, Matrix::Zero(size, size));
    for (auto& p : proto) {
        for (int stroke = 0; stroke < 3; ++stroke) {
            const double cx = (0.2 + 0.6 * u(rng)) * size, cy = (0.2 + 0.6 * u(rng)) * size;
            const double angle = std::numbers::pi * u(rng);
            const double along = (1.5 + 2.5 * u(rng)) * unit, across = (0.6 + 0.6 * u(rng)) * unit;
            const double ca = std::cos(angle), sa = std::sin(angle);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double dx = x - cx, dy = y - cy;
                    const double a = (ca * dx + sa * dy) / along, b = (-sa * dx + ca * dy) / across;
                    p(y, x) += std::exp(-0.5 * (a * a + b * b));
                }
        }
        p /= p.maxCoeff();
    }

    const int max_shift = std::max(1, static_cast<int>(std::lround(2 * unit)));
    std::uniform_int_distribution<int> shift(-max_shift, max_shift);
    std::uniform_int_distribution<int> other(1, classes - 1);
    auto render = [&](int c) {
        Matrix img = Matrix::Zero(size, size);
        auto blit = [&](const Matrix& p, double w) {
            const int sx = shift(rng), sy = shift(rng);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const int yy = y - sy, xx = x - sx;
                    if (yy >= 0 && yy < size && xx >= 0 && xx < size) img(y, x) += w * p(yy, xx);
                }
        };
        blit(proto[c], 0.6 + 0.8 * u(rng));
        blit(proto[(c + other(rng)) % classes], 0.6 * u(rng));
        for (Index i = 0; i < img.size(); ++i) img.data()[i] += 0.4 * noise(rng);
        return img;
    };
    auto fill = [&](int n, Matrix& x, std::vector<int>& y) {
        x.resize(n, size * size);
        y.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = i % classes;
        std::shuffle(y.begin(), y.end(), rng);
        for (int i = 0; i < n; ++i) {
            const Matrix img = render(y[static_cast<std::size_t>(i)]);
            x.row(i) = Eigen::Map<const ad::Vector>(img.data(), img.size()).transpose();
        }
    };
    ImageData d;
    d.channels = 1;
    d.height = d.width = size;
    d.classes = classes;
    fill(n_train, d.train_x, d.train_y);
    fill(n_val, d.val_x, d.val_y);
    standardize(d);
    return d;
}

ImageData make_blobs(int classes, int dim, int n_train, int n_val, double spread, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix centers(classes, dim);
    for (Index i = 0; i < centers.size(); ++i) centers.data()[i] = 3.0 * g(rng);
    auto fill = [&](int n, Matrix& x, std::vector<int>& y) {
        x.resize(n, dim);
        y.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const int c = i % classes;
            y[static_cast<std::size_t>(i)] = c;
            for (int k = 0; k < dim; ++k) x(i, k) = centers(c, k) + spread * g(rng);
        }
    };
    ImageData d;
    d.width = dim;
    d.classes = classes;
    fill(n_train, d.train_x, d.train_y);
    fill(n_val, d.val_x, d.val_y);
    return d;
}

namespace {

std::string read_maybe_gz(const fs::path& base) {
    for (const fs::path& p : {base, fs::path(base.string() + ".gz")}) {
        if (!fs::exists(p)) continue;
        gzFile f = gzopen(p.string().c_str(), "rb");
        if (!f) throw DataError("cannot open " + p.string());
        std::string out;
        char buf[1 << 16];
        int n;
        while ((n = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
        gzclose(f);
        if (n < 0) throw DataError("corrupt gzip stream in " + p.string());
        return out;
    }
    throw DataError("missing " + base.string() +
                    "[.gz]. Download the four FashionMNIST IDX files "
                    "(train-images-idx3-ubyte.gz, train-labels-idx1-ubyte.gz, t10k-images-idx3-ubyte.gz, "
                    "t10k-labels-idx1-ubyte.gz) from https://github.com/zalandoresearch/fashion-mnist into " +
                    base.parent_path().string() + " or point NINO_DATA_ROOT at their parent directory.");
}

std::uint32_t be32(const std::string& s, std::size_t pos) {
    if (pos + 4 > s.size()) throw DataError("IDX header truncated");
    const auto* b = reinterpret_cast<const unsigned char*>(s.data() + pos);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | b[3];
}

void load_idx_pair(const fs::path& images, const fs::path& labels, Matrix& x, std::vector<int>& y, int& h, int& w) {
    const std::string im = read_maybe_gz(images), lb = read_maybe_gz(labels);
    if (be32(im, 0) != 0x803 || be32(lb, 0) != 0x801) throw DataError("bad IDX magic in " + images.string());
    const auto n = be32(im, 4);
    h = static_cast<int>(be32(im, 8));
    w = static_cast<int>(be32(im, 12));
    if (be32(lb, 4) != n) throw DataError("image/label count mismatch in " + images.string());
    const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    if (im.size() < 16 + n * plane || lb.size() < 8 + n) throw DataError("IDX data truncated in " + images.string());
    x.resize(n, static_cast<Index>(plane));
    y.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < plane; ++p)
            x(i, static_cast<Index>(p)) = static_cast<unsigned char>(im[16 + i * plane + p]) / 255.0;
        y[i] = static_cast<unsigned char>(lb[8 + i]);
    }
}

}  // namespace

ImageData load_fashion_mnist(const fs::path& root) {
    const fs::path dir = root / "fashion-mnist";
    ImageData d;
    d.classes = 10;
    load_idx_pair(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", d.train_x, d.train_y, d.height,
                  d.width);
    int h = 0, w = 0;
    load_idx_pair(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", d.val_x, d.val_y, h, w);
    if (h != d.height || w != d.width) throw DataError("train/test image sizes differ in " + dir.string());
    standardize(d);
    return d;
}

std::vector<int> encode_chars(const std::string& text) {
    std::vector<int> out;
    out.reserve(text.size());
    for (unsigned char ch : text) {
        if (ch == '\n') out.push_back(0);
        else if (ch >= 32 && ch < 127) out.push_back(ch - 31);
        else out.push_back('?' - 31);
    }
    return out;
}

std::string decode_chars(std::span<const int> tokens) {
    std::string out;
    for (int t : tokens) out.push_back(t == 0 ? '\n' : static_cast<char>(t + 31));
    return out;
}

std::string make_char_corpus(std::size_t approx_chars, std::uint64_t seed) {
    static const std::vector<std::string> det = {"the", "a", "every", "one", "that", "some"};
    static const std::vector<std::string> adj = {"small", "quiet", "red",  "old",    "bright", "heavy",
                                                 "quick", "calm",  "dark", "gentle", "wide",   "cold"};
    static const std::vector<std::string> noun = {"river", "garden", "window", "engine", "teacher", "market",
                                                  "forest", "letter", "bridge", "kettle", "lantern", "harbor"};
    static const std::vector<std::string> verb = {"watches", "carries", "finds", "follows", "paints", "opens",
                                                  "remembers", "builds", "crosses", "hears"};
    static const std::vector<std::string> adv = {"slowly", "today", "again", "at night", "with care", "in spring"};
    std::mt19937_64 rng(seed);
    auto pick = [&rng](const std::vector<std::string>& v) {
        return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
    };
    std::bernoulli_distribution coin(0.5);
    std::string out;
    while (out.size() < approx_chars) {
        std::string s = pick(det) + " ";
        if (coin(rng)) s += pick(adj) + " ";
        s += pick(noun) + " " + pick(verb) + " " + pick(det) + " ";
        if (coin(rng)) s += pick(adj) + " ";
        s += pick(noun);
        if (coin(rng)) s += " " + pick(adv);
        s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
        out += s + (coin(rng) ? ".\n" : ". ");
    }
    return out;
}

TokenData tokenize_corpus(const std::string& text, double val_fraction) {
    TokenData d;
    d.vocab = kCharVocab;
    const auto all = encode_chars(text);
    const auto split = static_cast<std::size_t>(std::lround(static_cast<double>(all.size()) * (1.0 - val_fraction)));
    d.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(split));
    d.val.assign(all.begin() + static_cast<std::ptrdiff_t>(split), all.end());
    return d;
}

// ---------------------------------------------------------------- models

namespace {

/// Walks the architecture in order; the same walk serves all model kinds.
class Network {
public:
    Network(const TaskSpec& spec, int in_channels, int height, int width)
        : spec_(spec), in_channels_(in_channels), height_(height), width_(width) {
        by_layer_.resize(spec.arch.layers.size());
        for (const auto& t : spec.arch.tensors()) by_layer_[static_cast<std::size_t>(t.layer)].push_back(t);
        act_ = spec.model == ModelKind::gpt ? Activation::gelu : Activation::relu;
    }

    /// Images: x [B x C*H*W]. Tokens: B rows of `seq` ids. Returns logits.
    Var forward(Tape& t, std::span<const double> theta, std::span<double> grad, const Matrix* x,
                std::span<const int> tokens, int batch, int seq) const {
        const auto& layers = spec_.arch.layers;
        auto param = [&](std::size_t layer, std::size_t k) {
            const ParamTensor& p = by_layer_[layer].at(k);
            return t.parameter(theta, p.offset, static_cast<Index>(p.rows), static_cast<Index>(p.cols), grad);
        };
        Var h = x ? t.constant(*x) : Var{};
        int c = in_channels_, hh = height_, ww = width_;
        bool spatial = spec_.model == ModelKind::cnn;
        std::vector<Var> before(layers.size());
        std::vector<int> positions;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const LayerDesc& l = layers[i];
            before[i] = h;
            const bool next_dense = i + 1 < layers.size() && layers[i + 1].kind == LayerKind::linear;
            switch (l.kind) {
                case LayerKind::linear: {
                    if (spatial) {
                        h = ad::global_avg_pool(h, c, hh * ww);
                        spatial = false;
                    }
                    h = ad::matmul(h, param(i, 0));
                    if (l.bias) h = ad::add_row(h, param(i, 1));
                    if (next_dense) h = activate(h, act_);
                    break;
                }
                case LayerKind::conv: {
                    ad::ConvGeometry g;
                    g.in_channels = c;
                    g.out_channels = l.fan_out;
                    g.height = hh;
                    g.width = ww;
                    g.kernel_h = l.kernel_h;
                    g.kernel_w = l.kernel_w;
                    g.stride = spec_.conv_stride;
                    g.pad = l.kernel_h / 2;
                    Var b = l.bias ? param(i, 1) : t.constant(Matrix::Zero(1, l.fan_out));
                    h = activate(ad::conv2d(h, param(i, 0), b, g), act_);
                    c = l.fan_out;
                    hh = g.out_height();
                    ww = g.out_width();
                    break;
                }
                case LayerKind::embedding: {
                    if (l.lm_head) {
                        h = ad::matmul(h, param(i, 0));
                    } else if (!l.merge) {
                        h = ad::gather_rows(param(i, 0), tokens);
                    } else {
                        if (positions.empty()) {
                            positions.resize(static_cast<std::size_t>(batch) * static_cast<std::size_t>(seq));
                            for (std::size_t r = 0; r < positions.size(); ++r)
                                positions[r] = static_cast<int>(r % static_cast<std::size_t>(seq));
                        }
                        h = ad::add(h, ad::gather_rows(param(i, 0), positions));
                    }
                    break;
                }
                case LayerKind::layernorm: {
                    Var beta = l.bias ? param(i, 1) : t.constant(Matrix::Zero(1, l.fan_out));
                    h = ad::layer_norm(h, param(i, 0), beta);
                    break;
                }
                case LayerKind::msa: {
                    auto proj = [&](std::size_t w, std::size_t b) {
                        Var y = ad::matmul(h, param(i, w));
                        return l.bias ? ad::add_row(y, param(i, b)) : y;
                    };
                    Var q = proj(0, 4), k = proj(1, 5), v = proj(2, 6);
                    const double dh = static_cast<double>(l.fan_in / l.heads);
                    Var y = ad::causal_attention(q, k, v, batch, seq, l.heads, 1.0 / std::sqrt(dh));
                    h = ad::matmul(y, param(i, 3));
                    if (l.bias) h = ad::add_row(h, param(i, 7));
                    break;
                }
                case LayerKind::residual: h = ad::add(h, before[static_cast<std::size_t>(l.residual_from)]); break;
            }
        }
        if (spec_.model == ModelKind::gpt && !layers.back().lm_head) h = ad::matmul(h, ad::transpose(param(0, 0)));
        return h;
    }

    void init(std::span<double> theta, std::mt19937_64& rng) const {
        std::normal_distribution<double> small(0.0, 0.02);
        const auto& layers = spec_.arch.layers;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const LayerDesc& l = layers[i];
            for (std::size_t k = 0; k < by_layer_[i].size(); ++k) {
                const ParamTensor& p = by_layer_[i][k];
                auto slice = theta.subspan(p.offset, p.size());
                const bool is_bias = p.rows == 1 && l.kind != LayerKind::layernorm;
                if (l.kind == LayerKind::layernorm) {
                    std::fill(slice.begin(), slice.end(), k == 0 ? 1.0 : 0.0);
                } else if (spec_.model == ModelKind::gpt) {
                    if (is_bias) std::fill(slice.begin(), slice.end(), 0.0);
                    else for (double& v : slice) v = small(rng);
                } else {
                    const double fan_in = l.kind == LayerKind::conv ? double(l.fan_in * l.kernel_h * l.kernel_w)
                                                                    : double(l.fan_in);
                    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
                    for (double& v : slice) v = u(rng);
                }
            }
        }
    }

private:
    const TaskSpec& spec_;
    int in_channels_, height_, width_;
    Activation act_;
    std::vector<std::vector<ParamTensor>> by_layer_;
};

class ImageTask : public Task {
public:
    ImageTask(TaskSpec spec, ImageData data)
        : Task(std::move(spec)), data_(std::move(data)), net_(spec_, data_.channels, data_.height, data_.width) {}

    double loss_grad(std::span<const double> theta, std::span<double> grad, std::mt19937_64& rng) const override {
        const int b = spec_.batch_size;
        std::uniform_int_distribution<Index> pick(0, data_.train_x.rows() - 1);
        Matrix x(b, data_.train_x.cols());
        std::vector<int> y(static_cast<std::size_t>(b));
        for (int i = 0; i < b; ++i) {
            const Index r = pick(rng);
            x.row(i) = data_.train_x.row(r);
            y[static_cast<std::size_t>(i)] = data_.train_y[static_cast<std::size_t>(r)];
        }
        Tape t;
        Var loss = ad::softmax_cross_entropy(net_.forward(t, theta, grad, &x, {}, b, 1), y);
        const double value = loss.value()(0, 0);
        if (!grad.empty() && std::isfinite(value)) t.backward(loss);
        return value;
    }

    double evaluate(std::span<const double> theta, Split split) const override { return sweep(theta, split).second; }
    double mean_loss(std::span<const double> theta, Split split) const override { return sweep(theta, split).first; }

private:
    std::pair<double, double> sweep(std::span<const double> theta, Split split) const {
        const Matrix& x = split == Split::train ? data_.train_x : data_.val_x;
        const auto& y = split == Split::train ? data_.train_y : data_.val_y;
        constexpr Index chunk = 500;
        double loss = 0, correct = 0;
        for (Index s = 0; s < x.rows(); s += chunk) {
            const Index n = std::min(chunk, x.rows() - s);
            const Matrix xb = x.middleRows(s, n);
            const std::span<const int> yb(y.data() + s, static_cast<std::size_t>(n));
            Tape t;
            Var logits = net_.forward(t, theta, {}, &xb, {}, static_cast<int>(n), 1);
            loss += ad::softmax_cross_entropy(logits, yb).value()(0, 0) * static_cast<double>(n);
            for (Index r = 0; r < n; ++r) {
                Index arg;
                logits.value().row(r).maxCoeff(&arg);
                correct += arg == yb[static_cast<std::size_t>(r)];
            }
        }
        const double n = static_cast<double>(x.rows());
        return {loss / n, correct / n};
    }

    ImageData data_;
    Network net_;
};

class TokenTask : public Task {
public:
    TokenTask(TaskSpec spec, TokenData data) : Task(std::move(spec)), data_(std::move(data)), net_(spec_, 1, 1, 1) {
        if (data_.train.size() < static_cast<std::size_t>(spec_.seq_len + 2) ||
            data_.val.size() < static_cast<std::size_t>(spec_.seq_len + 2))
            throw DataError("corpus too short for sequence length " + std::to_string(spec_.seq_len));
    }

    double loss_grad(std::span<const double> theta, std::span<double> grad, std::mt19937_64& rng) const override {
        const int b = spec_.batch_size, s = spec_.seq_len;
        std::uniform_int_distribution<std::size_t> start(0, data_.train.size() - static_cast<std::size_t>(s) - 1);
        std::vector<int> in, out;
        for (int i = 0; i < b; ++i) {
            const std::size_t p = start(rng);
            in.insert(in.end(), data_.train.begin() + static_cast<std::ptrdiff_t>(p),
                      data_.train.begin() + static_cast<std::ptrdiff_t>(p) + s);
            out.insert(out.end(), data_.train.begin() + static_cast<std::ptrdiff_t>(p) + 1,
                       data_.train.begin() + static_cast<std::ptrdiff_t>(p) + s + 1);
        }
        Tape t;
        Var loss = ad::softmax_cross_entropy(net_.forward(t, theta, grad, nullptr, in, b, s), out);
        const double value = loss.value()(0, 0);
        if (!grad.empty() && std::isfinite(value)) t.backward(loss);
        return value;
    }

    double evaluate(std::span<const double> theta, Split split) const override {
        return std::exp(mean_loss(theta, split));
    }

    /// Non-overlapping windows from the start of the split, at most 64.
    double mean_loss(std::span<const double> theta, Split split) const override {
        const auto& tok = split == Split::train ? data_.train : data_.val;
        const int s = spec_.seq_len;
        const int windows = static_cast<int>(std::min<std::size_t>(64, (tok.size() - 1) / static_cast<std::size_t>(s)));
        std::vector<int> in, out;
        for (int w = 0; w < windows; ++w) {
            const auto p = static_cast<std::ptrdiff_t>(w) * s;
            in.insert(in.end(), tok.begin() + p, tok.begin() + p + s);
            out.insert(out.end(), tok.begin() + p + 1, tok.begin() + p + s + 1);
        }
        Tape t;
        return ad::softmax_cross_entropy(net_.forward(t, theta, {}, nullptr, in, windows, s), out).value()(0, 0);
    }

private:
    TokenData data_;
    Network net_;
};

/// Model without data, for parameter accounting and initialization.
class BareTask : public Task {
public:
    explicit BareTask(TaskSpec spec) : Task(std::move(spec)) {}
    double loss_grad(std::span<const double>, std::span<double>, std::mt19937_64&) const override { fail(); }
    double evaluate(std::span<const double>, Split) const override { fail(); }
    double mean_loss(std::span<const double>, Split) const override { fail(); }

private:
    [[noreturn]] void fail() const { throw DataError("task '" + spec_.id + "' has no dataset"); }
};

constexpr std::uint64_t kDatasetSeed = 0x5eedda7a;

}  // namespace

std::unique_ptr<Task> Task::build(const TaskSpec& spec, const fs::path& data_root) {
    spec.arch.validate();
    if (spec.batch_size < 1) throw std::invalid_argument("task '" + spec.id + "': batch_size must be >= 1");
    const std::string& ds = spec.dataset;
    if (ds == "none") return std::make_unique<BareTask>(spec);
    if (spec.model == ModelKind::gpt) {
        std::string text;
        if (ds == "char-synth") {
            text = make_char_corpus(200000, kDatasetSeed);
        } else if (ds.rfind("text:", 0) == 0) {
            fs::path p = ds.substr(5);
            if (p.is_relative()) p = data_root / p;
            std::ifstream f(p);
            if (!f) throw DataError("missing text corpus " + p.string() + "; place a plain-text file there");
            std::ostringstream ss;
            ss << f.rdbuf();
            text = ss.str();
        } else {
            throw DataError("dataset '" + ds + "' is not a token corpus");
        }
        return std::make_unique<TokenTask>(spec, tokenize_corpus(text));
    }
    ImageData data;
    if (ds == "fm-synth") data = make_fm_synth(spec.image_size, 20000, 1000, kDatasetSeed);
    else if (ds == "fashion-mnist") data = load_fashion_mnist(data_root);
    else if (ds == "blobs") data = make_blobs(spec.arch.layers.back().fan_out, spec.arch.layers.front().fan_in, 1000, 400, 1.5, kDatasetSeed);
    else throw DataError("unknown dataset '" + ds + "'");
    const int features = data.channels * data.height * data.width;
    const LayerDesc& first = spec.arch.layers.front();
    const int expected = first.kind == LayerKind::conv ? first.fan_in * data.height * data.width : first.fan_in;
    if (features != expected || first.fan_in != (first.kind == LayerKind::conv ? data.channels : features))
        throw DataError("dataset '" + ds + "' inputs do not match the first layer of task '" + spec.id + "'");
    return std::make_unique<ImageTask>(spec, std::move(data));
}

std::vector<double> Task::init_params(std::uint64_t seed) const {
    std::vector<double> theta(num_params());
    std::mt19937_64 rng(seed);
    Network(spec_, 1, 1, 1).init(theta, rng);
    return theta;
}

TrainState make_train_state(const Task& task, std::uint64_t seed) {
    TrainState s;
    s.theta = task.init_params(seed);
    s.opt = Adam(s.theta.size(), task.spec().adam_config());
    s.rng.seed(seed ^ 0x9e3779b97f4a7c15ULL);
    return s;
}

std::vector<double> train_steps(const Task& task, TrainState& state, long n) {
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(std::max(0L, n)));
    std::vector<double> grad(state.theta.size());
    for (long i = 0; i < n; ++i) {
        std::fill(grad.begin(), grad.end(), 0.0);
        const double loss = task.loss_grad(state.theta, grad, state.rng);
        if (!std::isfinite(loss))
            throw NonFiniteLoss("non-finite training loss at step " + std::to_string(state.step) + " of task '" +
                                task.spec().id + "'");
        state.opt.step(state.theta, grad);
        ++state.step;
        losses.push_back(loss);
    }
    return losses;
}

}  // namespace nino
