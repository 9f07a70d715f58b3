#pragma once

#include "pertnet/autodiff.hpp"

namespace pertnet {

/// Convolution parameters. The kernel extent is 3 along every spatial axis
/// and padding is always "same" (zero-filled), so spatial dims are preserved.
struct ConvSpec {
    int spatial_rank = 2;  // 2 for images, 3 for videos
    int in_channels = 0;
    int out_channels = 0;
    Tensor weight;  // [out, in, 3, 3] or [out, in, 3, 3, 3]
    Tensor bias;    // [out]
};

/// Zero-initialized spec. spatial_rank must be 2 or 3, channels positive.
ConvSpec make_conv_spec(int spatial_rank, int in_channels, int out_channels);

/// Kaiming-uniform weights, zero bias.
ConvSpec random_conv_spec(int spatial_rank, int in_channels, int out_channels, Rng& rng);

/// Center-tap delta weights and zero bias, so the convolution is the exact
/// identity map. Requires in_channels == out_channels.
ConvSpec identity_init(const ConvSpec& spec);

/// Same-padding cross-correlation. x is [C,H,W] or [C,T,H,W]; weight is
/// [O,C,k...] with odd kernel extents; bias is [O]. Output keeps the spatial
/// dims and has O channels.
Var conv(Tape& t, Var x, Var weight, Var bias);

/// conv() with the spec's parameters entered on the tape as constants.
Var conv_forward(Tape& t, const ConvSpec& spec, Var x);

/// Transposed convolution (fractionally strided). x is [C,S...]; weight is
/// [C,O,k...] with odd kernel extents; bias is [O]; stride has one entry >= 1
/// per spatial axis. Output spatial dims are the input dims times the stride.
Var conv_transpose(Tape& t, Var x, Var weight, Var bias, const Shape& stride);

/// Elementwise max(x, 0). Gradient at exactly 0 is 0.
Var relu(Tape& t, Var x);

/// Non-overlapping max pooling. x is [C,H,W] or [C,T,H,W]; window has one
/// entry per spatial axis, each >= 1 and no larger than the matching dim.
/// Output spatial dims are floor(dim / window). Gradients route to the max
/// position of each window; ties go to the lowest flat index.
Var maxpool(Tape& t, Var x, const Shape& window);

/// Fully connected layer: weight [O,I] times x [I] plus bias [O].
Var dense(Tape& t, Var weight, Var bias, Var x);

/// Max-subtracted softmax over a 1-D logit vector.
Var softmax(Tape& t, Var logits);

/// -log(p[label]) with p clamped to >= 1e-12.
Var cross_entropy(Tape& t, Var probs, int label);

/// Mean over elements of |a - b|. The gradient of |.| at 0 is 0.
Var l1_distance(Tape& t, Var a, Var b);

/// Mean over elements of (a - b)^2.
Var mse(Tape& t, Var a, Var b);

/// Mean absolute difference between consecutive frames of a [C,T,H,W] video
/// (normalized by C*(T-1)*H*W). Requires T >= 2.
Var frame_continuity(Tape& t, Var video);

}  // namespace pertnet
