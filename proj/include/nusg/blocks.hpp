#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nusg/gradcheck.hpp"
#include "nusg/ops.hpp"
#include "nusg/tensor.hpp"

namespace nusg::nn {

/// One named tensor of a module's state. Learnable entries are optimized and
/// counted as parameters; the rest (batch-norm running statistics) are
/// buffers that travel with checkpoints only.
template <typename T>
struct StateEntry {
    std::string name;
    Tensor<T> tensor;
    bool learnable = true;
};

template <typename T>
using StateList = std::vector<StateEntry<T>>;

/// Seeds every learnable tensor from (seed, name): conv weights get a
/// fan-in Kaiming normal, everything else keeps its constructed default.
/// Two tensors with the same name and shape always get the same values.
template <typename T>
void init_parameters(StateList<T>& state, uint64_t seed);

struct ConvBlockSpec {
    int c_in = 0;
    int c_out = 0;
    int kernel = 3;
    int dilation = 1;

    int padding() const { return dilation * (kernel - 1) / 2; }
};

/// Convolution with bias, stride 1, padding that keeps H x W.
template <typename T>
class Conv2dLayer {
public:
    Conv2dLayer() = default;
    explicit Conv2dLayer(ConvBlockSpec spec);

    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(const std::string& prefix, StateList<T>& out) const;

    const ConvBlockSpec& spec() const { return spec_; }
    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }

private:
    ConvBlockSpec spec_;
    Tensor<T> weight_;
    Tensor<T> bias_;
};

/// conv -> batch norm -> relu, H x W preserved.
template <typename T>
class ConvBnRelu {
public:
    ConvBnRelu() = default;
    explicit ConvBnRelu(ConvBlockSpec spec);

    Tensor<T> forward(const Tensor<T>& x, NormMode mode) const;
    void collect(const std::string& prefix, StateList<T>& out) const;

    const ConvBlockSpec& spec() const { return conv_.spec(); }
    Conv2dLayer<T>& conv() { return conv_; }
    Tensor<T>& gamma() { return gamma_; }
    Tensor<T>& beta() { return beta_; }
    Tensor<T>& running_mean() { return running_mean_; }
    Tensor<T>& running_var() { return running_var_; }

private:
    Conv2dLayer<T> conv_;
    Tensor<T> gamma_, beta_;
    mutable Tensor<T> running_mean_, running_var_;
};

struct RsuSpec {
    int height = 4;  // L
    int c_in = 0;
    int c_mid = 0;
    int c_out = 0;
    bool dilated = false;  // the "F" variant: dilation instead of pooling

    /// Regular blocks pool L-2 times.
    int64_t spatial_divisor() const { return dilated ? 1 : int64_t{1} << (height - 2); }
    std::string label() const;
};

/// Residual U-block. Layers are stored as: in, enc1..enc{L-1}, bottom,
/// dec{L-1}..dec1 (the F variant always has L = 4).
template <typename T>
class RsuBlock {
public:
    RsuBlock() = default;
    explicit RsuBlock(RsuSpec spec);

    Tensor<T> forward(const Tensor<T>& x, NormMode mode) const;
    void collect(const std::string& prefix, StateList<T>& out) const;

    const RsuSpec& spec() const { return spec_; }
    std::vector<ConvBnRelu<T>>& layers() { return layers_; }
    const std::vector<std::string>& layer_names() const { return names_; }

private:
    Tensor<T> forward_pooled(const Tensor<T>& x0, NormMode mode) const;
    Tensor<T> forward_dilated(const Tensor<T>& x0, NormMode mode) const;

    RsuSpec spec_;
    std::vector<ConvBnRelu<T>> layers_;
    std::vector<std::string> names_;
};

struct ResConnectSpec {
    int c_in = 0;
    int c_out = 0;
};

/// Residual soft connection wrapped around an encoder stage:
///   p = proj(x_in); f = maxpool3x3/s1(x_out + p); out = x_out + alpha * refine(f)
/// where proj and refine are 1x1 convs with bias and alpha is a learnable
/// scalar starting at 1.
template <typename T>
class ResConnect {
public:
    ResConnect() = default;
    explicit ResConnect(ResConnectSpec spec);

    Tensor<T> forward(const Tensor<T>& x_in, const Tensor<T>& x_out) const;
    void collect(const std::string& prefix, StateList<T>& out) const;

    const ResConnectSpec& spec() const { return spec_; }
    Conv2dLayer<T>& proj() { return proj_; }
    Conv2dLayer<T>& refine() { return refine_; }
    Tensor<T>& alpha() { return alpha_; }

private:
    ResConnectSpec spec_;
    Conv2dLayer<T> proj_;
    Conv2dLayer<T> refine_;
    Tensor<T> alpha_;
};

/// Finite-difference cases for the composite blocks in 64-bit: conv_bn_relu,
/// RSU-4, RSU-4F and ResConnect. Learnable tensors are checked except conv
/// biases that train-mode batch norm cancels.
std::vector<GradCheckCase> block_grad_cases();

}  // namespace nusg::nn
