#pragma once

#include <vector>

#include "nusg/tensor.hpp"

namespace nusg {

struct Conv2dOptions {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
};

/// Zero-padded cross-correlation. x: N x Cin x H x W, weight: Cout x Cin x k x k,
/// bias: Cout. Output spatial size is
/// floor((H + 2*padding - dilation*(k-1) - 1) / stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dOptions opt = {});

/// Max over k x k windows. Padding cells hold -inf and never win; on ties
/// the first cell in row-major window order receives the gradient.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int kernel, int stride, int padding = 0);

/// Bilinear resize with half-pixel centers: src = (dst + 0.5) * in/out - 0.5,
/// clamped to the valid range.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int64_t out_h, int64_t out_w);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
/// Same-shape elementwise sum; no broadcasting.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
/// Same-shape elementwise product; no broadcasting.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s);
/// x multiplied by a learnable one-element tensor (the only broadcast form).
template <typename T>
Tensor<T> gate(const Tensor<T>& x, const Tensor<T>& alpha);
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

enum class NormMode { kTrain, kEval };

struct BatchNormOptions {
    NormMode mode = NormMode::kTrain;
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Per-channel batch normalization over N x H x W. Train mode normalizes with
/// batch statistics (biased variance) and folds them into the running buffers
/// (unbiased variance) by exponential moving average; eval mode reads the
/// running buffers. Running buffers are plain tensors, never differentiated.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x,
                      const Tensor<T>& gamma,
                      const Tensor<T>& beta,
                      Tensor<T>& running_mean,
                      Tensor<T>& running_var,
                      BatchNormOptions opt = {});

/// Forces N x C x H x W, throwing with `what` in the message otherwise.
void require_4d(const Shape& shape, const char* what);

}  // namespace nusg
