#include "pertnet/models.hpp"

#include "byte_io.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

namespace pertnet {
namespace {

constexpr int kChannels = 3;
constexpr int kImageSide = 32;
constexpr int kVideoFrames = 8;
constexpr int kGeneratorBlocks = 3;
constexpr int kConvsPerBlock = 3;

int spatial_rank_of(SampleMode mode) { return mode == SampleMode::image ? 2 : 3; }

int64_t kernel_taps(int spatial_rank) { return spatial_rank == 2 ? 9 : 27; }

/// Transposed-convolution parameters share ConvSpec, but the weight layout is
/// [in, out, k...] as conv_transpose expects.
ConvSpec random_tconv_spec(int spatial_rank, int in_channels, int out_channels, Rng& rng) {
    ConvSpec s;
    s.spatial_rank = spatial_rank;
    s.in_channels = in_channels;
    s.out_channels = out_channels;
    Shape ws{in_channels, out_channels, 3, 3};
    if (spatial_rank == 3) ws.push_back(3);
    const float lim = std::sqrt(6.0f / static_cast<float>(in_channels * kernel_taps(spatial_rank)));
    s.weight = random_uniform(ws, rng, -lim, lim);
    s.bias = Tensor::full({out_channels}, 0.0f);
    return s;
}

void push_spec_leaves(Tape& t, const ConvSpec& s, bool trainable, std::vector<Var>& out) {
    out.push_back(t.leaf(s.weight, trainable));
    out.push_back(t.leaf(s.bias, trainable));
}

void check_sample(const Tensor& x, SampleMode mode, const char* op) {
    const Shape want = sample_shape(mode);
    if (x.shape() != want) {
        throw std::invalid_argument(std::string(op) + ": expected input shape " + shape_str(want) +
                                    ", got " + shape_str(x.shape()));
    }
}

int argmax_index(const Tensor& y) {
    int best = 0;
    for (int64_t i = 1; i < y.size(); ++i) {
        if (y[i] > y[best]) best = static_cast<int>(i);
    }
    return best;
}

uint64_t hash_chain(uint64_t h, const Tensor& t) {
    return fnv1a64(h, std::span<const float>(t.data(), static_cast<std::size_t>(t.size())));
}

constexpr uint64_t kHashBasis = 0xcbf29ce484222325ull;

}  // namespace

Shape sample_shape(SampleMode mode) {
    if (mode == SampleMode::image) return Shape{kChannels, kImageSide, kImageSide};
    return Shape{kChannels, kVideoFrames, kImageSide, kImageSide};
}

// ---------------------------------------------------------------------------
// Generator P
// ---------------------------------------------------------------------------

GeneratorP build_generator(SampleMode mode) {
    GeneratorP p;
    p.mode = mode;
    const int rank = spatial_rank_of(mode);
    p.layers.reserve(kGeneratorBlocks * kConvsPerBlock);
    for (int i = 0; i < kGeneratorBlocks * kConvsPerBlock; ++i) {
        p.layers.push_back(identity_init(make_conv_spec(rank, kChannels, kChannels)));
    }
    return p;
}

std::vector<Var> generator_leaves(Tape& t, const GeneratorP& p, bool trainable) {
    std::vector<Var> leaves;
    leaves.reserve(p.layers.size() * 2);
    for (const ConvSpec& s : p.layers) push_spec_leaves(t, s, trainable, leaves);
    return leaves;
}

Var generator_forward(Tape& t, const GeneratorP& p, std::span<const Var> leaves, Var x) {
    if (p.layers.size() != kGeneratorBlocks * kConvsPerBlock) {
        throw std::invalid_argument("generator_forward: generator must have 9 conv layers, has " +
                                    std::to_string(p.layers.size()));
    }
    if (leaves.size() != p.layers.size() * 2) {
        throw std::invalid_argument("generator_forward: expected " +
                                    std::to_string(p.layers.size() * 2) + " parameter leaves, got " +
                                    std::to_string(leaves.size()));
    }
    Var h = x;
    std::size_t li = 0;
    for (int block = 0; block < kGeneratorBlocks; ++block) {
        for (int c = 0; c < kConvsPerBlock; ++c) {
            h = conv(t, h, leaves[li], leaves[li + 1]);
            li += 2;
        }
        h = relu(t, h);
    }
    return h;
}

Var generator_forward(Tape& t, const GeneratorP& p, Var x) {
    return generator_forward(t, p, generator_leaves(t, p, false), x);
}

Tensor generator_apply(const GeneratorP& p, const Tensor& x) {
    Tape t;
    Var in = t.leaf(x, false);
    return t.value(generator_forward(t, p, in));
}

// ---------------------------------------------------------------------------
// Classifier M
// ---------------------------------------------------------------------------

ClassifierM build_classifier(SampleMode mode, int num_classes, Rng& rng) {
    if (num_classes < 8) {
        throw std::invalid_argument("build_classifier: num_classes must be >= 8, got " +
                                    std::to_string(num_classes));
    }
    ClassifierM m;
    m.mode = mode;
    m.num_classes = num_classes;
    const int rank = spatial_rank_of(mode);
    m.conv1 = random_conv_spec(rank, kChannels, 8, rng);
    m.conv2 = random_conv_spec(rank, 8, 16, rng);
    // Two pooling stages shrink every spatial dim by 4.
    const Shape in = sample_shape(mode);
    int64_t flat = 16;
    for (std::size_t i = 1; i < in.size(); ++i) flat *= in[i] / 4;
    // Quarter-scale relative to the conv init keeps random-init logits small,
    // so an untrained classifier scores near-uniform; Adam's per-parameter
    // step normalization makes the smaller starting scale harmless to train.
    const float lim = 0.25f * std::sqrt(6.0f / static_cast<float>(flat));
    m.dense_w = random_uniform({num_classes, static_cast<int>(flat)}, rng, -lim, lim);
    m.dense_b = Tensor::full({num_classes}, 0.0f);
    return m;
}

std::vector<Var> classifier_leaves(Tape& t, const ClassifierM& m, bool trainable) {
    if (trainable && m.frozen) {
        throw std::invalid_argument("classifier_leaves: classifier is frozen");
    }
    std::vector<Var> leaves;
    leaves.reserve(6);
    push_spec_leaves(t, m.conv1, trainable, leaves);
    push_spec_leaves(t, m.conv2, trainable, leaves);
    leaves.push_back(t.leaf(m.dense_w, trainable));
    leaves.push_back(t.leaf(m.dense_b, trainable));
    return leaves;
}

Var classifier_forward(Tape& t, const ClassifierM& m, std::span<const Var> leaves, Var x) {
    if (leaves.size() != 6) {
        throw std::invalid_argument("classifier_forward: expected 6 parameter leaves, got " +
                                    std::to_string(leaves.size()));
    }
    check_sample(t.value(x), m.mode, "classifier_forward");
    const Shape window = m.mode == SampleMode::image ? Shape{2, 2} : Shape{2, 2, 2};
    Var h = conv(t, x, leaves[0], leaves[1]);
    h = relu(t, h);
    h = maxpool(t, h, window);
    h = conv(t, h, leaves[2], leaves[3]);
    h = relu(t, h);
    h = maxpool(t, h, window);
    h = reshape(t, h, Shape{static_cast<int>(t.value(h).size())});
    Var logits = dense(t, leaves[4], leaves[5], h);
    return softmax(t, logits);
}

Var classifier_forward(Tape& t, const ClassifierM& m, Var x) {
    return classifier_forward(t, m, classifier_leaves(t, m, false), x);
}

Tensor classifier_scores(const ClassifierM& m, const Tensor& x) {
    Tape t;
    Var in = t.leaf(x, false);
    return t.value(classifier_forward(t, m, in));
}

FitReport fit_classifier(ClassifierM& m, const std::vector<Tensor>& xs,
                         const std::vector<int>& labels, const FitConfig& config) {
    if (m.frozen) throw std::invalid_argument("fit_classifier: classifier is frozen");
    if (xs.empty()) throw std::invalid_argument("fit_classifier: empty dataset");
    if (xs.size() != labels.size()) {
        throw std::invalid_argument("fit_classifier: " + std::to_string(xs.size()) + " samples vs " +
                                    std::to_string(labels.size()) + " labels");
    }
    if (config.epochs < 0) throw std::invalid_argument("fit_classifier: negative epoch count");
    if (config.batch_size < 1) throw std::invalid_argument("fit_classifier: batch_size must be >= 1");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= m.num_classes) {
            throw std::invalid_argument("fit_classifier: label " + std::to_string(labels[i]) +
                                        " out of range for " + std::to_string(m.num_classes) +
                                        " classes");
        }
        check_sample(xs[i], m.mode, "fit_classifier");
    }

    Tensor* params[6] = {&m.conv1.weight, &m.conv1.bias, &m.conv2.weight,
                         &m.conv2.bias,   &m.dense_w,    &m.dense_b};
    std::vector<Shape> shapes;
    shapes.reserve(6);
    for (Tensor* p : params) shapes.push_back(p->shape());
    AdamState opt(config.adam, shapes);

    Rng rng(config.seed);
    const int n = static_cast<int>(xs.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    FitReport report;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // Fisher-Yates shuffle driven by the deterministic Rng.
        for (int i = n - 1; i > 0; --i) {
            const int j = rng.uniform_int(i + 1);
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }
        double loss_sum = 0.0;
        int correct = 0;
        for (int start = 0; start < n; start += config.batch_size) {
            const int stop = std::min(n, start + config.batch_size);
            std::vector<Eigen::ArrayXd> acc(6);
            for (int k = 0; k < 6; ++k) acc[k] = Eigen::ArrayXd::Zero(params[k]->size());
            for (int bi = start; bi < stop; ++bi) {
                const int idx = order[static_cast<std::size_t>(bi)];
                Tape t;
                std::vector<Var> leaves = classifier_leaves(t, m, true);
                Var x = t.leaf(xs[static_cast<std::size_t>(idx)], false);
                Var probs = classifier_forward(t, m, leaves, x);
                Var loss = cross_entropy(t, probs, labels[static_cast<std::size_t>(idx)]);
                GradMap grads = t.backward(loss);
                loss_sum += static_cast<double>(t.value(loss).item());
                if (argmax_index(t.value(probs)) == labels[static_cast<std::size_t>(idx)]) ++correct;
                for (int k = 0; k < 6; ++k) {
                    acc[k] += grads.at(leaves[static_cast<std::size_t>(k)]).flat().cast<double>();
                }
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            std::vector<Tensor> gmean;
            gmean.reserve(6);
            for (int k = 0; k < 6; ++k) {
                gmean.push_back(Tensor(params[k]->shape(), (acc[k] * inv).cast<float>()));
            }
            const Tensor* gptrs[6] = {&gmean[0], &gmean[1], &gmean[2], &gmean[3], &gmean[4], &gmean[5]};
            adam_step(opt, std::span<Tensor* const>(params, 6),
                      std::span<const Tensor* const>(gptrs, 6));
        }
        report.epoch_loss.push_back(loss_sum / n);
        report.epoch_accuracy.push_back(static_cast<double>(correct) / n);
    }
    return report;
}

double accuracy(const ClassifierM& m, const std::vector<Tensor>& xs, const std::vector<int>& labels) {
    if (xs.empty()) throw std::invalid_argument("accuracy: empty dataset");
    if (xs.size() != labels.size()) {
        throw std::invalid_argument("accuracy: " + std::to_string(xs.size()) + " samples vs " +
                                    std::to_string(labels.size()) + " labels");
    }
    int correct = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (argmax_index(classifier_scores(m, xs[i])) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(xs.size());
}

// ---------------------------------------------------------------------------
// Reconstructor R
// ---------------------------------------------------------------------------

ReconstructorR build_reconstructor(SampleMode mode, Rng& rng) {
    ReconstructorR r;
    r.mode = mode;
    if (mode == SampleMode::image) {
        r.tconvs.push_back(random_tconv_spec(2, kChannels, 8, rng));
        r.tconvs.push_back(random_tconv_spec(2, 8, 8, rng));
        r.strides = {Shape{2, 2}, Shape{2, 2}};
        r.conv_out = random_conv_spec(2, 8, kChannels, rng);
        r.pools = {Shape{2, 2}, Shape{2, 2}};
    } else {
        // Lighter video stack: one spatial upsample and one pooling stage keep
        // single-core training runs tractable; frames are never resampled.
        r.tconvs.push_back(random_tconv_spec(3, kChannels, 8, rng));
        r.strides = {Shape{1, 2, 2}};
        r.conv_out = random_conv_spec(3, 8, kChannels, rng);
        r.pools = {Shape{1, 2, 2}};
    }
    return r;
}

std::vector<Var> reconstructor_leaves(Tape& t, const ReconstructorR& r, bool trainable) {
    std::vector<Var> leaves;
    leaves.reserve(r.tconvs.size() * 2 + 2);
    for (const ConvSpec& s : r.tconvs) push_spec_leaves(t, s, trainable, leaves);
    push_spec_leaves(t, r.conv_out, trainable, leaves);
    return leaves;
}

Var reconstructor_forward(Tape& t, const ReconstructorR& r, std::span<const Var> leaves, Var x) {
    if (r.tconvs.size() != r.strides.size()) {
        throw std::invalid_argument("reconstructor_forward: " + std::to_string(r.tconvs.size()) +
                                    " tconvs vs " + std::to_string(r.strides.size()) + " strides");
    }
    if (leaves.size() != r.tconvs.size() * 2 + 2) {
        throw std::invalid_argument("reconstructor_forward: expected " +
                                    std::to_string(r.tconvs.size() * 2 + 2) +
                                    " parameter leaves, got " + std::to_string(leaves.size()));
    }
    Var h = x;
    std::size_t li = 0;
    for (std::size_t i = 0; i < r.tconvs.size(); ++i) {
        h = conv_transpose(t, h, leaves[li], leaves[li + 1], r.strides[i]);
        h = relu(t, h);
        li += 2;
    }
    h = conv(t, h, leaves[li], leaves[li + 1]);
    for (const Shape& w : r.pools) h = maxpool(t, h, w);
    return h;
}

Var reconstructor_forward(Tape& t, const ReconstructorR& r, Var x) {
    return reconstructor_forward(t, r, reconstructor_leaves(t, r, false), x);
}

Tensor reconstructor_apply(const ReconstructorR& r, const Tensor& x) {
    Tape t;
    Var in = t.leaf(x, false);
    return t.value(reconstructor_forward(t, r, in));
}

// ---------------------------------------------------------------------------
// Hashing and WGT1 serialization
// ---------------------------------------------------------------------------

std::uint64_t weight_hash(const GeneratorP& p) {
    uint64_t h = kHashBasis;
    for (const ConvSpec& s : p.layers) {
        h = hash_chain(h, s.weight);
        h = hash_chain(h, s.bias);
    }
    return h;
}

std::uint64_t weight_hash(const ClassifierM& m) {
    uint64_t h = kHashBasis;
    h = hash_chain(h, m.conv1.weight);
    h = hash_chain(h, m.conv1.bias);
    h = hash_chain(h, m.conv2.weight);
    h = hash_chain(h, m.conv2.bias);
    h = hash_chain(h, m.dense_w);
    return hash_chain(h, m.dense_b);
}

std::uint64_t weight_hash(const ReconstructorR& r) {
    uint64_t h = kHashBasis;
    for (const ConvSpec& s : r.tconvs) {
        h = hash_chain(h, s.weight);
        h = hash_chain(h, s.bias);
    }
    h = hash_chain(h, r.conv_out.weight);
    return hash_chain(h, r.conv_out.bias);
}

namespace {

enum : uint8_t { kKindGenerator = 0, kKindClassifier = 1, kKindReconstructor = 2 };
enum : uint8_t { kLayerConv = 0, kLayerTConv = 1, kLayerDense = 2 };

void write_tensor_block(detail::ByteWriter& w, const Tensor& t) {
    w.u8(static_cast<uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) w.u32(static_cast<uint32_t>(t.dim(i)));
    w.bytes(t.data(), static_cast<std::size_t>(t.size()) * 4);
}

/// Reads a tensor block and requires its shape to equal `want` (architecture
/// mismatch is a file problem, reported with the offending offset).
Tensor read_tensor_block(detail::ByteReader& r, const Shape& want, const char* what) {
    const std::size_t at = r.offset();
    const int rank = r.u8(what);
    Shape shape(static_cast<std::size_t>(rank));
    for (int i = 0; i < rank; ++i) shape[static_cast<std::size_t>(i)] = static_cast<int>(r.u32(what));
    if (shape != want) {
        throw io_error(std::string(what) + ": tensor shape " + shape_str(shape) +
                           " does not match the declared architecture, expected " + shape_str(want),
                       at);
    }
    Tensor t(shape);
    r.read_f32_block(t.data(), static_cast<std::size_t>(t.size()), what);
    if (!t.all_finite()) throw io_error(std::string(what) + ": non-finite weight payload", at);
    return t;
}

void write_conv_layer(detail::ByteWriter& w, uint8_t type, const ConvSpec& s) {
    w.u8(type);
    w.u8(static_cast<uint8_t>(s.spatial_rank));
    w.u32(static_cast<uint32_t>(s.in_channels));
    w.u32(static_cast<uint32_t>(s.out_channels));
    write_tensor_block(w, s.weight);
    write_tensor_block(w, s.bias);
}

/// Reads one conv-style layer into `dst`, requiring the header and tensor
/// shapes to match the architecture skeleton already present in `dst`.
void read_conv_layer(detail::ByteReader& r, uint8_t want_type, ConvSpec& dst, const char* what) {
    const std::size_t at = r.offset();
    const uint8_t type = r.u8(what);
    if (type != want_type) {
        throw io_error(std::string(what) + ": layer type " + std::to_string(type) +
                           " does not match the declared architecture",
                       at);
    }
    const int rank = r.u8(what);
    const int in_ch = static_cast<int>(r.u32(what));
    const int out_ch = static_cast<int>(r.u32(what));
    if (rank != dst.spatial_rank || in_ch != dst.in_channels || out_ch != dst.out_channels) {
        throw io_error(std::string(what) + ": layer dims (rank " + std::to_string(rank) + ", " +
                           std::to_string(in_ch) + "->" + std::to_string(out_ch) +
                           ") do not match the declared architecture",
                       at);
    }
    dst.weight = read_tensor_block(r, dst.weight.shape(), what);
    dst.bias = read_tensor_block(r, dst.bias.shape(), what);
}

void read_dense_layer(detail::ByteReader& r, Tensor& weight, Tensor& bias, const char* what) {
    const std::size_t at = r.offset();
    const uint8_t type = r.u8(what);
    if (type != kLayerDense) {
        throw io_error(std::string(what) + ": layer type " + std::to_string(type) +
                           " does not match the declared architecture",
                       at);
    }
    const int rank = r.u8(what);
    const int in_dim = static_cast<int>(r.u32(what));
    const int out_dim = static_cast<int>(r.u32(what));
    if (rank != 0 || in_dim != weight.dim(1) || out_dim != weight.dim(0)) {
        throw io_error(std::string(what) + ": dense dims " + std::to_string(in_dim) + "->" +
                           std::to_string(out_dim) + " do not match the declared architecture",
                       at);
    }
    weight = read_tensor_block(r, weight.shape(), what);
    bias = read_tensor_block(r, bias.shape(), what);
}

SampleMode mode_from_byte(uint8_t b, std::size_t at, const char* what) {
    if (b > 1) throw io_error(std::string(what) + ": bad mode byte " + std::to_string(b), at);
    return b == 0 ? SampleMode::image : SampleMode::video;
}

}  // namespace

std::vector<std::uint8_t> model_to_bytes(const Model& m) {
    detail::ByteWriter w;
    w.magic("WGT1");
    if (const auto* p = std::get_if<GeneratorP>(&m)) {
        w.u8(kKindGenerator);
        w.u8(static_cast<uint8_t>(p->mode));
        w.u32(0);
        w.u32(static_cast<uint32_t>(p->layers.size()));
        for (const ConvSpec& s : p->layers) write_conv_layer(w, kLayerConv, s);
    } else if (const auto* c = std::get_if<ClassifierM>(&m)) {
        w.u8(kKindClassifier);
        w.u8(static_cast<uint8_t>(c->mode));
        w.u32(static_cast<uint32_t>(c->num_classes));
        w.u32(3);
        write_conv_layer(w, kLayerConv, c->conv1);
        write_conv_layer(w, kLayerConv, c->conv2);
        w.u8(kLayerDense);
        w.u8(0);
        w.u32(static_cast<uint32_t>(c->dense_w.dim(1)));
        w.u32(static_cast<uint32_t>(c->dense_w.dim(0)));
        write_tensor_block(w, c->dense_w);
        write_tensor_block(w, c->dense_b);
    } else {
        const auto& r = std::get<ReconstructorR>(m);
        w.u8(kKindReconstructor);
        w.u8(static_cast<uint8_t>(r.mode));
        w.u32(0);
        w.u32(static_cast<uint32_t>(r.tconvs.size() + 1));
        for (const ConvSpec& s : r.tconvs) write_conv_layer(w, kLayerTConv, s);
        write_conv_layer(w, kLayerConv, r.conv_out);
    }
    return w.data();
}

Model model_from_bytes(std::span<const std::uint8_t> bytes) {
    constexpr const char* what = "WGT1";
    detail::ByteReader r(bytes);
    r.magic("WGT1", what);
    const std::size_t kind_at = r.offset();
    const uint8_t kind = r.u8(what);
    const std::size_t mode_at = r.offset();
    const SampleMode mode = mode_from_byte(r.u8(what), mode_at, what);
    const std::size_t meta_at = r.offset();
    const uint32_t meta = r.u32(what);
    const std::size_t count_at = r.offset();
    const uint32_t layer_count = r.u32(what);

    if (kind == kKindGenerator) {
        GeneratorP p = build_generator(mode);
        if (layer_count != p.layers.size()) {
            throw io_error(std::string(what) + ": generator layer count " +
                               std::to_string(layer_count) + ", expected " +
                               std::to_string(p.layers.size()),
                           count_at);
        }
        for (ConvSpec& s : p.layers) read_conv_layer(r, kLayerConv, s, what);
        r.expect_end(what);
        return p;
    }
    if (kind == kKindClassifier) {
        if (meta < 8) {
            throw io_error(std::string(what) + ": classifier class count " + std::to_string(meta) +
                               " out of range",
                           meta_at);
        }
        Rng rng(0);
        ClassifierM c = build_classifier(mode, static_cast<int>(meta), rng);
        if (layer_count != 3) {
            throw io_error(std::string(what) + ": classifier layer count " +
                               std::to_string(layer_count) + ", expected 3",
                           count_at);
        }
        read_conv_layer(r, kLayerConv, c.conv1, what);
        read_conv_layer(r, kLayerConv, c.conv2, what);
        read_dense_layer(r, c.dense_w, c.dense_b, what);
        r.expect_end(what);
        return c;
    }
    if (kind == kKindReconstructor) {
        Rng rng(0);
        ReconstructorR rec = build_reconstructor(mode, rng);
        if (layer_count != rec.tconvs.size() + 1) {
            throw io_error(std::string(what) + ": reconstructor layer count " +
                               std::to_string(layer_count) + ", expected " +
                               std::to_string(rec.tconvs.size() + 1),
                           count_at);
        }
        for (ConvSpec& s : rec.tconvs) read_conv_layer(r, kLayerTConv, s, what);
        read_conv_layer(r, kLayerConv, rec.conv_out, what);
        r.expect_end(what);
        return rec;
    }
    throw io_error(std::string(what) + ": unknown model kind " + std::to_string(kind), kind_at);
}

void save_weights(const Model& m, const std::string& path) {
    detail::write_file_bytes(path, model_to_bytes(m));
}

Model load_weights(const std::string& path) {
    return model_from_bytes(detail::read_file_bytes(path));
}

namespace {

template <typename T>
T load_kind(const std::string& path, const char* name) {
    Model m = load_weights(path);
    if (auto* p = std::get_if<T>(&m)) return std::move(*p);
    // The kind byte sits right after the 4-byte magic.
    throw io_error("WGT1: file does not hold a " + std::string(name), 4);
}

}  // namespace

GeneratorP load_generator(const std::string& path) {
    return load_kind<GeneratorP>(path, "generator");
}

ClassifierM load_classifier(const std::string& path) {
    return load_kind<ClassifierM>(path, "classifier");
}

ReconstructorR load_reconstructor(const std::string& path) {
    return load_kind<ReconstructorR>(path, "reconstructor");
}

}  // namespace pertnet
