#pragma once

// Orthonormal multi-level 2D Haar wavelet compression of difference maps:
// forward/inverse transforms, sparse thresholding, the SWC1 byte codec, and
// reconstruction-network training/inference on compressed inputs.
//
// The transform treats the last two dimensions of a tensor as spatial and
// applies an independent 2D decomposition to every leading slice (per channel
// for images, per channel and frame for videos). Spatial dims that are not
// divisible by 2^levels are zero-padded up to the next multiple; the original
// shape is kept in the coefficient metadata and padding is stripped on
// inversion.

#include "pertnet/models.hpp"
#include "pertnet/optim.hpp"
#include "pertnet/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace pertnet {

/// Sparse multi-level 2D Haar decomposition of one tensor.
///
/// `entries` lists the nonzero coefficients as (flat index, value) pairs where
/// the flat index addresses the zero-padded coefficient array (same layout as
/// the input tensor, spatial dims padded up to multiples of 2^levels; see
/// padded_coeff_shape). Invariants: indices strictly ascending (hence unique),
/// in bounds, values finite. All producers in this module emit canonical
/// (ascending) entries, and consumers reject violations.
struct WaveletCoeffs {
    enum class Norm : std::uint8_t { orthonormal = 0 };

    Shape shape;     ///< original (unpadded) tensor shape, rank >= 2
    int levels = 1;  ///< decomposition depth, in [1, kMaxWaveletLevels]
    Norm norm = Norm::orthonormal;
    std::vector<std::pair<std::uint32_t, float>> entries;

    bool operator==(const WaveletCoeffs&) const = default;
};

/// Deepest supported decomposition; bounds the zero-padding blow-up.
inline constexpr int kMaxWaveletLevels = 12;

/// Shape of the padded coefficient array for a tensor of `shape` at `levels`:
/// the last two dims are rounded up to multiples of 2^levels, leading dims
/// are unchanged. Rejects rank < 2 or levels outside [1, kMaxWaveletLevels].
Shape padded_coeff_shape(const Shape& shape, int levels);

/// Total number of coefficients (product of padded_coeff_shape dims).
std::int64_t coeff_count(const Shape& shape, int levels);

/// W: orthonormal multi-level 2D Haar decomposition, applied per leading
/// slice over the (zero-padded) last two dims. Exact zeros are dropped from
/// the entry list. Energy is preserved (Parseval). Rejects rank < 2, levels
/// outside [1, kMaxWaveletLevels], and non-finite input.
WaveletCoeffs wavelet_forward(const Tensor& x, int levels);

/// W^-1: exact left inverse of wavelet_forward (up to f32 round-off);
/// densifies the entries, inverts each slice, and strips the padding.
/// Rejects malformed coeffs (bad shape/levels, out-of-bounds, unordered or
/// duplicate indices, non-finite values).
Tensor wavelet_inverse(const WaveletCoeffs& c);

/// Keep the ceil(f * N) largest-magnitude entries of the N present entries;
/// magnitude ties break toward the lower index. f in (0, 1].
struct KeepTopFraction {
    float fraction = 1.0f;
};

/// Drop every entry with |value| < tau; tau >= 0.
struct AbsoluteThreshold {
    float tau = 0.0f;
};

using ThresholdPolicy = std::variant<KeepTopFraction, AbsoluteThreshold>;

/// T: sparsify the coefficient list under `policy`. Retained entries are
/// bit-identical to their inputs; the result stays canonically ordered.
WaveletCoeffs threshold_coeffs(const WaveletCoeffs& c, const ThresholdPolicy& policy);

/// SWC1 codec: "SWC1" magic, u32 rank, u32 dims[rank], u8 levels,
/// u32 entry count, then (u32 index, f32 value) pairs; little-endian.
/// decode(encode(c)) == c exactly for every valid c.
std::vector<std::uint8_t> encode(const WaveletCoeffs& c);
WaveletCoeffs decode(std::span<const std::uint8_t> bytes);

/// File convenience wrappers around the SWC1 codec.
void save_coeffs(const WaveletCoeffs& c, const std::string& path);
WaveletCoeffs load_coeffs(const std::string& path);

/// gamma = W^-1(T(W(delta))): the image-like lossy rendition of a difference
/// map that reconstruction networks consume.
Tensor make_gamma(const Tensor& delta, int levels, const ThresholdPolicy& policy);

/// Training configuration for train_reconstructor.
struct ReconTrainConfig {
    int epochs = 50;
    int batch_size = 8;
    AdamConfig adam;
    /// Frame-continuity penalty weight (video reconstructors only): adds
    /// beta * mean |out[t+1] - out[t]| over adjacent output frames.
    float beta = 0.1f;
    /// Deliberate-overfitting mode: train on every pair (the intended use;
    /// the network is meant to memorize its corpus). When false, every fifth
    /// pair is held out and its loss recorded per epoch in val_loss.
    bool overfit = true;
    std::uint64_t seed = 0;
};

struct ReconTrainReport {
    std::vector<float> epoch_loss;  ///< mean training loss per epoch
    std::vector<float> val_loss;    ///< per-epoch held-out loss; empty when overfitting
};

/// Fit R to map lossy difference renditions gamma[i] to the original samples
/// xs[i] by MSE (plus the beta frame penalty for video) using Adam. The
/// corpus must be non-empty and share one shape whose rank matches R's mode
/// (the conv stack itself is spatial-size agnostic).
ReconTrainReport train_reconstructor(ReconstructorR& r, const std::vector<Tensor>& gammas,
                                     const std::vector<Tensor>& xs,
                                     const ReconTrainConfig& config);

/// chi = R(W^-1(omega)). Rejects coeffs whose rank does not match R's mode;
/// R must have been trained for omega's sample shape to produce useful output.
Tensor reconstruct(const WaveletCoeffs& omega, const ReconstructorR& r);

}  // namespace pertnet
