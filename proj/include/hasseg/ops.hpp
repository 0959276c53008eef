#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hasseg/tape.hpp"
#include "hasseg/tensor.hpp"

namespace hasseg {

enum class Mode { Train, Eval };

/// Running statistics owned by one batch-norm layer.
template <typename T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  bool ready = false;  // set by the first train-mode step
};

}  // namespace hasseg

/// Differentiable volumetric operators. Every op takes the tape that records
/// it; tensors are 5-d N x C x D x H x W unless stated otherwise.
namespace hasseg::ops {

/// Cross-correlation with cubic kernel. `bias` may be undefined (no bias).
template <typename T>
Tensor<T> conv3d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride, int padding);

/// Transposed convolution, kernel 2^3, stride 2. Weight is C_in x C_out x 2 x 2 x 2.
template <typename T>
Tensor<T> conv_transpose3d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight);

/// 2^3 window, stride 2. Odd extents are padded with -inf (output is ceil(n/2)).
/// Ties route the gradient to the first maximum in scan order.
template <typename T>
Tensor<T> maxpool3d(Tape<T>& tape, const Tensor<T>& input);

/// Per-channel batch normalization over N, D, H, W.
/// Train mode updates `stats` as running = momentum * running + (1 - momentum) * batch;
/// the first train step copies the batch statistics. Eval mode requires stats.ready.
template <typename T>
Tensor<T> batchnorm3d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gamma,
                      const Tensor<T>& beta, BatchNormStats<T>& stats, Mode mode,
                      T eps = T(1e-5), T momentum = T(0.9));

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& input);

/// Softmax across the channel axis at every (n, d, h, w).
template <typename T>
Tensor<T> softmax_channels(Tape<T>& tape, const Tensor<T>& input);

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& input, T factor);

/// Sum of all elements, as a 1-element tensor.
template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& input);

template <typename T>
Tensor<T> sum_squares(Tape<T>& tape, const Tensor<T>& input);

/// Mean over voxels of -log softmax(logits)[label]. `labels` holds one class
/// index per (n, d, h, w) in W-fastest order; every label must be < C.
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                        std::span<const std::uint8_t> labels);

}  // namespace hasseg::ops
