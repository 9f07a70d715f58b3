#pragma once

#include "pertnet/layers.hpp"
#include "pertnet/optim.hpp"
#include "pertnet/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace pertnet {

enum class SampleMode : std::uint8_t { image = 0, video = 1 };

/// Canonical sample shape: {3,32,32} for images, {3,8,32,32} for videos.
Shape sample_shape(SampleMode mode);

// ---------------------------------------------------------------------------
// Generator P: 3 blocks of 3 convolutions, 3 channels throughout, relu after
// each block. Identity-initialized, so a fresh P maps any non-negative input
// to itself bit-exactly.
// ---------------------------------------------------------------------------

struct GeneratorP {
    SampleMode mode = SampleMode::image;
    std::vector<ConvSpec> layers;  // 9 convs, in = out = 3 channels
};

GeneratorP build_generator(SampleMode mode);

/// Enter P's parameters on the tape in layer order (weight then bias per
/// conv). trainable=true marks them for gradient accumulation.
std::vector<Var> generator_leaves(Tape& t, const GeneratorP& p, bool trainable);

/// Forward through the block structure using previously entered parameter
/// leaves (from generator_leaves, same order).
Var generator_forward(Tape& t, const GeneratorP& p, std::span<const Var> leaves, Var x);

/// Forward with the parameters entered as constants.
Var generator_forward(Tape& t, const GeneratorP& p, Var x);

/// Pure forward pass outside any caller-visible tape.
Tensor generator_apply(const GeneratorP& p, const Tensor& x);

// ---------------------------------------------------------------------------
// Classifier M: conv(3->8) relu pool + conv(8->16) relu pool + dense softmax.
// Images use 2D convs with {2,2} pooling, videos 3D convs with {2,2,2}.
// ---------------------------------------------------------------------------

struct ClassifierM {
    SampleMode mode = SampleMode::image;
    int num_classes = 8;
    bool frozen = false;
    ConvSpec conv1;  // 3 -> 8
    ConvSpec conv2;  // 8 -> 16
    Tensor dense_w;  // [num_classes, flattened conv output]
    Tensor dense_b;  // [num_classes]
};

/// Randomly initialized classifier. num_classes must be >= 2.
ClassifierM build_classifier(SampleMode mode, int num_classes, Rng& rng);

/// Enter M's parameters on the tape (conv1 w,b, conv2 w,b, dense w,b).
/// trainable=true is rejected for a frozen classifier.
std::vector<Var> classifier_leaves(Tape& t, const ClassifierM& m, bool trainable);

/// Forward to a length-num_classes probability vector using previously
/// entered parameter leaves.
Var classifier_forward(Tape& t, const ClassifierM& m, std::span<const Var> leaves, Var x);

/// Forward with the parameters entered as constants (safe on a frozen M).
Var classifier_forward(Tape& t, const ClassifierM& m, Var x);

/// Pure forward pass; returns the probability vector.
Tensor classifier_scores(const ClassifierM& m, const Tensor& x);

struct FitConfig {
    int epochs = 10;
    int batch_size = 16;
    AdamConfig adam{};  // lr defaults to 1e-3
    std::uint32_t seed = 0;
};

struct FitReport {
    std::vector<double> epoch_loss;      // mean cross-entropy per epoch
    std::vector<double> epoch_accuracy;  // training accuracy per epoch
};

/// Minibatch Adam training on (sample, label) pairs with cross-entropy loss.
/// Deterministic for a fixed seed. Rejects a frozen classifier.
FitReport fit_classifier(ClassifierM& m, const std::vector<Tensor>& xs,
                         const std::vector<int>& labels, const FitConfig& config);

/// Fraction of samples whose argmax score equals the label.
double accuracy(const ClassifierM& m, const std::vector<Tensor>& xs,
                const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Reconstructor R: transposed-conv upsampling, then convolution + maxpool
// stages back down to the original sample dims.
// ---------------------------------------------------------------------------

struct ReconstructorR {
    SampleMode mode = SampleMode::image;
    std::vector<ConvSpec> tconvs;   // weight layout [in, out, k...]; relu after each
    std::vector<Shape> strides;     // per-tconv upsampling factors
    ConvSpec conv_out;              // back to 3 channels
    std::vector<Shape> pools;       // maxpool windows applied after conv_out
};

ReconstructorR build_reconstructor(SampleMode mode, Rng& rng);

/// Enter R's parameters on the tape (each tconv w,b, then conv_out w,b).
std::vector<Var> reconstructor_leaves(Tape& t, const ReconstructorR& r, bool trainable);

Var reconstructor_forward(Tape& t, const ReconstructorR& r, std::span<const Var> leaves, Var x);
Var reconstructor_forward(Tape& t, const ReconstructorR& r, Var x);
Tensor reconstructor_apply(const ReconstructorR& r, const Tensor& x);

// ---------------------------------------------------------------------------
// Weight hashing and the WGT1 weight file format.
// ---------------------------------------------------------------------------

/// FNV-1a over every parameter tensor in serialization order; bit-identical
/// parameters give identical hashes.
std::uint64_t weight_hash(const GeneratorP& p);
std::uint64_t weight_hash(const ClassifierM& m);
std::uint64_t weight_hash(const ReconstructorR& r);

using Model = std::variant<GeneratorP, ClassifierM, ReconstructorR>;

std::vector<std::uint8_t> model_to_bytes(const Model& m);
Model model_from_bytes(std::span<const std::uint8_t> bytes);

void save_weights(const Model& m, const std::string& path);
Model load_weights(const std::string& path);

/// Kind-checked loads; a file holding a different model kind is rejected
/// with the offset of the kind byte.
GeneratorP load_generator(const std::string& path);
ClassifierM load_classifier(const std::string& path);
ReconstructorR load_reconstructor(const std::string& path);

}  // namespace pertnet
