#include "pertnet/wavelet.hpp"

#include "byte_io.hpp"
#include "pertnet/autodiff.hpp"
#include "pertnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace pertnet {

namespace {

constexpr float kInvSqrt2 = 0.70710678118654752440f;

void check_levels(int levels) {
    if (levels < 1 || levels > kMaxWaveletLevels) {
        throw std::invalid_argument("wavelet: levels must be in [1," +
                                    std::to_string(kMaxWaveletLevels) + "], got " +
                                    std::to_string(levels));
    }
}

int64_t round_up(int64_t n, int64_t multiple) { return ((n + multiple - 1) / multiple) * multiple; }

/// One forward Haar level on the top-left h x w block of a row-major
/// stride-W buffer: rows first, then columns.
void haar_level_forward(float* a, int64_t W, int h, int w, std::vector<float>& tmp) {
    tmp.resize(static_cast<std::size_t>(std::max(h, w)));
    for (int r = 0; r < h; ++r) {
        float* row = a + r * W;
        for (int j = 0; j < w / 2; ++j) {
            const float x0 = row[2 * j], x1 = row[2 * j + 1];
            tmp[static_cast<std::size_t>(j)] = (x0 + x1) * kInvSqrt2;
            tmp[static_cast<std::size_t>(w / 2 + j)] = (x0 - x1) * kInvSqrt2;
        }
        std::copy(tmp.begin(), tmp.begin() + w, row);
    }
    for (int c = 0; c < w; ++c) {
        float* col = a + c;
        for (int j = 0; j < h / 2; ++j) {
            const float x0 = col[(2 * j) * W], x1 = col[(2 * j + 1) * W];
            tmp[static_cast<std::size_t>(j)] = (x0 + x1) * kInvSqrt2;
            tmp[static_cast<std::size_t>(h / 2 + j)] = (x0 - x1) * kInvSqrt2;
        }
        for (int j = 0; j < h; ++j) col[j * W] = tmp[static_cast<std::size_t>(j)];
    }
}

/// Inverse of haar_level_forward: columns first, then rows.
void haar_level_inverse(float* a, int64_t W, int h, int w, std::vector<float>& tmp) {
    tmp.resize(static_cast<std::size_t>(std::max(h, w)));
    for (int c = 0; c < w; ++c) {
        float* col = a + c;
        for (int j = 0; j < h / 2; ++j) {
            const float s = col[j * W], d = col[(h / 2 + j) * W];
            tmp[static_cast<std::size_t>(2 * j)] = (s + d) * kInvSqrt2;
            tmp[static_cast<std::size_t>(2 * j + 1)] = (s - d) * kInvSqrt2;
        }
        for (int j = 0; j < h; ++j) col[j * W] = tmp[static_cast<std::size_t>(j)];
    }
    for (int r = 0; r < h; ++r) {
        float* row = a + r * W;
        for (int j = 0; j < w / 2; ++j) {
            const float s = row[j], d = row[w / 2 + j];
            tmp[static_cast<std::size_t>(2 * j)] = (s + d) * kInvSqrt2;
            tmp[static_cast<std::size_t>(2 * j + 1)] = (s - d) * kInvSqrt2;
        }
        std::copy(tmp.begin(), tmp.begin() + w, row);
    }
}

struct CoeffGeometry {
    int64_t slices;  // product of leading dims
    int64_t H, W;    // original spatial dims
    int64_t Hp, Wp;  // padded spatial dims
};

CoeffGeometry geometry(const Shape& shape, int levels) {
    check_levels(levels);
    if (shape.size() < 2) {
        throw std::invalid_argument("wavelet: tensor rank must be >= 2, got shape " +
                                    shape_str(shape));
    }
    for (int64_t d : shape) {
        if (d < 1) throw std::invalid_argument("wavelet: non-positive dim in shape " + shape_str(shape));
        if (d > (int64_t{1} << 20)) {
            throw std::invalid_argument("wavelet: dim " + std::to_string(d) + " in shape " +
                                        shape_str(shape) + " exceeds the supported range");
        }
    }
    CoeffGeometry g;
    g.H = shape[shape.size() - 2];
    g.W = shape[shape.size() - 1];
    const int64_t block = int64_t{1} << levels;
    g.Hp = round_up(g.H, block);
    g.Wp = round_up(g.W, block);
    const int64_t index_cap = static_cast<int64_t>(std::numeric_limits<uint32_t>::max());
    g.slices = 1;
    for (std::size_t i = 0; i + 2 < shape.size(); ++i) {
        g.slices *= shape[i];
        if (g.slices > index_cap) {
            throw std::invalid_argument("wavelet: shape " + shape_str(shape) +
                                        " exceeds the 32-bit index space");
        }
    }
    // slices <= 2^32 and each padded dim <= 2^21 here, so this cannot overflow.
    if (g.slices * g.Hp > index_cap || g.slices * g.Hp * g.Wp > index_cap) {
        throw std::invalid_argument("wavelet: padded coefficient count for shape " +
                                    shape_str(shape) + " exceeds the 32-bit index space");
    }
    return g;
}

/// Validates the full WaveletCoeffs contract: geometry plus canonical
/// (strictly ascending, in-bounds, finite) entries.
CoeffGeometry check_coeffs(const WaveletCoeffs& c, const char* who) {
    const CoeffGeometry g = geometry(c.shape, c.levels);
    const int64_t total = g.slices * g.Hp * g.Wp;
    int64_t prev = -1;
    for (const auto& [idx, val] : c.entries) {
        const int64_t i = static_cast<int64_t>(idx);
        if (i >= total) {
            throw std::invalid_argument(std::string(who) + ": coefficient index " +
                                        std::to_string(i) + " out of bounds (total " +
                                        std::to_string(total) + ")");
        }
        if (i <= prev) {
            throw std::invalid_argument(std::string(who) +
                                        ": entry indices must be strictly ascending");
        }
        if (!std::isfinite(val)) {
            throw std::invalid_argument(std::string(who) + ": non-finite coefficient at index " +
                                        std::to_string(i));
        }
        prev = i;
    }
    return g;
}

}  // namespace

Shape padded_coeff_shape(const Shape& shape, int levels) {
    const CoeffGeometry g = geometry(shape, levels);
    Shape out = shape;
    out[out.size() - 2] = g.Hp;
    out[out.size() - 1] = g.Wp;
    return out;
}

int64_t coeff_count(const Shape& shape, int levels) {
    const CoeffGeometry g = geometry(shape, levels);
    return g.slices * g.Hp * g.Wp;
}

WaveletCoeffs wavelet_forward(const Tensor& x, int levels) {
    const CoeffGeometry g = geometry(x.shape(), levels);
    if (!x.all_finite()) throw std::domain_error("wavelet_forward: non-finite input");

    WaveletCoeffs c;
    c.shape = x.shape();
    c.levels = levels;

    std::vector<float> buf(static_cast<std::size_t>(g.Hp * g.Wp));
    std::vector<float> tmp;
    const float* src = x.data();
    for (int64_t s = 0; s < g.slices; ++s) {
        std::fill(buf.begin(), buf.end(), 0.0f);
        for (int64_t r = 0; r < g.H; ++r) {
            std::copy(src + (s * g.H + r) * g.W, src + (s * g.H + r + 1) * g.W,
                      buf.begin() + static_cast<std::size_t>(r * g.Wp));
        }
        int h = static_cast<int>(g.Hp), w = static_cast<int>(g.Wp);
        for (int l = 0; l < levels; ++l) {
            haar_level_forward(buf.data(), g.Wp, h, w, tmp);
            h /= 2;
            w /= 2;
        }
        const int64_t base = s * g.Hp * g.Wp;
        for (int64_t i = 0; i < g.Hp * g.Wp; ++i) {
            const float v = buf[static_cast<std::size_t>(i)];
            if (v != 0.0f) c.entries.emplace_back(static_cast<uint32_t>(base + i), v);
        }
    }
    return c;
}

Tensor wavelet_inverse(const WaveletCoeffs& c) {
    const CoeffGeometry g = check_coeffs(c, "wavelet_inverse");

    Tensor out(c.shape);
    std::vector<float> buf(static_cast<std::size_t>(g.Hp * g.Wp));
    std::vector<float> tmp;
    auto entry = c.entries.begin();
    float* dst = out.data();
    for (int64_t s = 0; s < g.slices; ++s) {
        const int64_t base = s * g.Hp * g.Wp;
        const int64_t end = base + g.Hp * g.Wp;
        std::fill(buf.begin(), buf.end(), 0.0f);
        while (entry != c.entries.end() && static_cast<int64_t>(entry->first) < end) {
            buf[static_cast<std::size_t>(entry->first - base)] = entry->second;
            ++entry;
        }
        for (int l = c.levels - 1; l >= 0; --l) {
            const int h = static_cast<int>(g.Hp >> l), w = static_cast<int>(g.Wp >> l);
            haar_level_inverse(buf.data(), g.Wp, h, w, tmp);
        }
        for (int64_t r = 0; r < g.H; ++r) {
            std::copy(buf.begin() + static_cast<std::size_t>(r * g.Wp),
                      buf.begin() + static_cast<std::size_t>(r * g.Wp + g.W),
                      dst + (s * g.H + r) * g.W);
        }
    }
    return out;
}

WaveletCoeffs threshold_coeffs(const WaveletCoeffs& c, const ThresholdPolicy& policy) {
    check_coeffs(c, "threshold_coeffs");
    WaveletCoeffs out;
    out.shape = c.shape;
    out.levels = c.levels;
    out.norm = c.norm;

    if (const auto* keep = std::get_if<KeepTopFraction>(&policy)) {
        const float f = keep->fraction;
        if (!(f > 0.0f && f <= 1.0f) || !std::isfinite(f)) {
            throw std::invalid_argument("threshold_coeffs: keep fraction must be in (0,1], got " +
                                        std::to_string(f));
        }
        const std::size_t n = c.entries.size();
        const std::size_t k =
            std::min(n, static_cast<std::size_t>(std::ceil(f * static_cast<double>(n))));
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        // Magnitude descending; ties go to the lower index. Entries are
        // index-ascending, so stable_sort keeps exactly that tie order.
        std::stable_sort(order.begin(), order.end(), [&c](std::size_t a, std::size_t b) {
            return std::fabs(c.entries[a].second) > std::fabs(c.entries[b].second);
        });
        order.resize(k);
        std::sort(order.begin(), order.end());
        out.entries.reserve(k);
        for (std::size_t i : order) out.entries.push_back(c.entries[i]);
        return out;
    }

    const auto& abs = std::get<AbsoluteThreshold>(policy);
    if (!(abs.tau >= 0.0f) || !std::isfinite(abs.tau)) {
        throw std::invalid_argument("threshold_coeffs: tau must be finite and >= 0, got " +
                                    std::to_string(abs.tau));
    }
    for (const auto& e : c.entries) {
        if (std::fabs(e.second) >= abs.tau) out.entries.push_back(e);
    }
    return out;
}

std::vector<uint8_t> encode(const WaveletCoeffs& c) {
    check_coeffs(c, "encode");
    detail::ByteWriter w;
    w.magic("SWC1");
    w.u32(static_cast<uint32_t>(c.shape.size()));
    for (int64_t d : c.shape) w.u32(static_cast<uint32_t>(d));
    w.u8(static_cast<uint8_t>(c.levels));
    w.u32(static_cast<uint32_t>(c.entries.size()));
    for (const auto& [idx, val] : c.entries) {
        w.u32(idx);
        w.f32(val);
    }
    return w.data();
}

WaveletCoeffs decode(std::span<const uint8_t> bytes) {
    detail::ByteReader r(bytes);
    r.magic("SWC1", "coefficient stream");
    const std::size_t rank_at = r.offset();
    const uint32_t rank = r.u32("rank");
    if (rank < 2 || rank > 8) {
        throw io_error("SWC1: rank " + std::to_string(rank) + " out of range [2,8]", rank_at);
    }
    WaveletCoeffs c;
    c.shape.resize(rank);
    for (uint32_t i = 0; i < rank; ++i) {
        const std::size_t dim_at = r.offset();
        const uint32_t d = r.u32("shape dim");
        if (d == 0 || d > (1u << 20)) {
            throw io_error("SWC1: bad dim " + std::to_string(d), dim_at);
        }
        c.shape[i] = static_cast<int64_t>(d);
    }
    const std::size_t levels_at = r.offset();
    c.levels = static_cast<int>(r.u8("levels"));
    int64_t total = 0;
    try {
        total = coeff_count(c.shape, c.levels);
    } catch (const std::invalid_argument& e) {
        throw io_error(std::string("SWC1: ") + e.what(), levels_at);
    }
    const std::size_t count_at = r.offset();
    const uint32_t count = r.u32("entry count");
    if (static_cast<int64_t>(count) > total) {
        throw io_error("SWC1: entry count " + std::to_string(count) + " exceeds coefficient count " +
                           std::to_string(total),
                       count_at);
    }
    c.entries.reserve(count);
    int64_t prev = -1;
    for (uint32_t i = 0; i < count; ++i) {
        const std::size_t idx_at = r.offset();
        const uint32_t idx = r.u32("entry index");
        if (static_cast<int64_t>(idx) >= total) {
            throw io_error("SWC1: entry index " + std::to_string(idx) + " out of bounds", idx_at);
        }
        if (static_cast<int64_t>(idx) <= prev) {
            throw io_error("SWC1: entry indices must be strictly ascending", idx_at);
        }
        prev = static_cast<int64_t>(idx);
        const std::size_t val_at = r.offset();
        const float val = r.f32("entry value");
        if (!std::isfinite(val)) throw io_error("SWC1: non-finite coefficient value", val_at);
        c.entries.emplace_back(idx, val);
    }
    r.expect_end("coefficient stream");
    return c;
}

void save_coeffs(const WaveletCoeffs& c, const std::string& path) {
    const std::vector<uint8_t> bytes = encode(c);
    detail::write_file_bytes(path, bytes);
}

WaveletCoeffs load_coeffs(const std::string& path) {
    const std::vector<uint8_t> bytes = detail::read_file_bytes(path);
    return decode(bytes);
}

Tensor make_gamma(const Tensor& delta, int levels, const ThresholdPolicy& policy) {
    return wavelet_inverse(threshold_coeffs(wavelet_forward(delta, levels), policy));
}

ReconTrainReport train_reconstructor(ReconstructorR& r, const std::vector<Tensor>& gammas,
                                     const std::vector<Tensor>& xs,
                                     const ReconTrainConfig& config) {
    if (gammas.empty()) throw std::invalid_argument("train_reconstructor: no training pairs");
    if (gammas.size() != xs.size()) {
        throw std::invalid_argument("train_reconstructor: " + std::to_string(gammas.size()) +
                                    " gammas vs " + std::to_string(xs.size()) + " targets");
    }
    // The convolutional stack is spatial-size agnostic; require a uniform
    // corpus whose rank matches the mode and let the conv ops police the rest.
    const Shape want = gammas[0].shape();
    const std::size_t want_rank = r.mode == SampleMode::video ? 4 : 3;
    if (want.size() != want_rank) {
        throw std::invalid_argument("train_reconstructor: rank " + std::to_string(want.size()) +
                                    " input for a " +
                                    (r.mode == SampleMode::video ? std::string("video")
                                                                 : std::string("image")) +
                                    " reconstructor");
    }
    for (std::size_t i = 0; i < gammas.size(); ++i) {
        if (gammas[i].shape() != want || xs[i].shape() != want) {
            throw std::invalid_argument("train_reconstructor: pair " + std::to_string(i) +
                                        " does not match the corpus shape " + shape_str(want));
        }
    }
    if (config.epochs < 0) throw std::invalid_argument("train_reconstructor: negative epochs");
    if (config.batch_size < 1) throw std::invalid_argument("train_reconstructor: batch size < 1");
    if (!(config.beta >= 0.0f) || !std::isfinite(config.beta)) {
        throw std::invalid_argument("train_reconstructor: beta must be finite and >= 0");
    }
    const bool use_beta = r.mode == SampleMode::video && config.beta > 0.0f;
    if (use_beta && want[1] < 2) {
        throw std::invalid_argument(
            "train_reconstructor: frame-continuity penalty needs at least 2 frames");
    }

    // Deliberate overfitting trains on everything; otherwise hold out every
    // fifth pair for the validation curve.
    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t i = 0; i < gammas.size(); ++i) {
        if (!config.overfit && i % 5 == 4) {
            val_idx.push_back(i);
        } else {
            train_idx.push_back(i);
        }
    }

    // Parameter tensors in reconstructor_leaves order.
    std::vector<Tensor*> params;
    for (ConvSpec& spec : r.tconvs) {
        params.push_back(&spec.weight);
        params.push_back(&spec.bias);
    }
    params.push_back(&r.conv_out.weight);
    params.push_back(&r.conv_out.bias);
    std::vector<Shape> shapes;
    shapes.reserve(params.size());
    for (const Tensor* p : params) shapes.push_back(p->shape());
    AdamState adam(config.adam, shapes);

    auto pair_loss = [&](Tape& t, std::size_t i, bool trainable,
                         std::vector<Var>* leaves_out) -> Var {
        std::vector<Var> leaves = reconstructor_leaves(t, r, trainable);
        Var out = reconstructor_forward(t, r, leaves, t.leaf(gammas[i], false));
        Var loss = mse(t, out, t.leaf(xs[i], false));
        if (use_beta) loss = add(t, loss, mul_scalar(t, frame_continuity(t, out), config.beta));
        if (leaves_out) *leaves_out = std::move(leaves);
        return loss;
    };

    ReconTrainReport report;
    Rng rng(config.seed);
    std::vector<std::size_t> order = train_idx;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.uniform_int(static_cast<uint32_t>(i))]);
        }
        double epoch_sum = 0.0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t bend = std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
            std::vector<Eigen::ArrayXd> acc(params.size());
            for (std::size_t p = 0; p < params.size(); ++p) {
                acc[p] = Eigen::ArrayXd::Zero(params[p]->size());
            }
            for (std::size_t s = b; s < bend; ++s) {
                Tape t;
                std::vector<Var> leaves;
                Var loss = pair_loss(t, order[s], true, &leaves);
                epoch_sum += t.value(loss).item();
                GradMap grads = t.backward(loss);
                for (std::size_t p = 0; p < params.size(); ++p) {
                    acc[p] += grads.at(leaves[p]).flat().cast<double>();
                }
            }
            const double inv = 1.0 / static_cast<double>(bend - b);
            std::vector<Tensor> mean_grads;
            mean_grads.reserve(params.size());
            std::vector<const Tensor*> grad_ptrs;
            for (std::size_t p = 0; p < params.size(); ++p) {
                mean_grads.emplace_back(params[p]->shape(), (acc[p] * inv).cast<float>());
            }
            for (const Tensor& gt : mean_grads) grad_ptrs.push_back(&gt);
            adam_step(adam, params, grad_ptrs);
        }
        report.epoch_loss.push_back(
            order.empty() ? 0.0f : static_cast<float>(epoch_sum / static_cast<double>(order.size())));
        if (!config.overfit && !val_idx.empty()) {
            double val_sum = 0.0;
            for (std::size_t i : val_idx) {
                Tape t;
                val_sum += t.value(pair_loss(t, i, false, nullptr)).item();
            }
            report.val_loss.push_back(static_cast<float>(val_sum / static_cast<double>(val_idx.size())));
        }
    }
    return report;
}

Tensor reconstruct(const WaveletCoeffs& omega, const ReconstructorR& r) {
    const std::size_t want_rank = r.mode == SampleMode::video ? 4 : 3;
    if (omega.shape.size() != want_rank) {
        throw std::invalid_argument("reconstruct: coefficient shape " + shape_str(omega.shape) +
                                    " has the wrong rank for a " +
                                    (r.mode == SampleMode::video ? std::string("video")
                                                                 : std::string("image")) +
                                    " reconstructor");
    }
    return reconstructor_apply(r, wavelet_inverse(omega));
}

}  // namespace pertnet
