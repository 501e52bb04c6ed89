#include "nusg/blocks.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace nusg::nn {

namespace {

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
void check_channels(const Tensor<T>& x, int expected, const std::string& where) {
    require_4d(x.shape(), where.c_str());
    if (x.dim(1) != expected) {
        throw std::invalid_argument(where + " expects " + std::to_string(expected) + " input channels, got " +
                                    shape_str(x.shape()));
    }
}

}  // namespace

template <typename T>
void init_parameters(StateList<T>& state, uint64_t seed) {
    for (auto& entry : state) {
        if (!entry.learnable || !ends_with(entry.name, "/weight") || entry.tensor.rank() != 4) continue;
        const Shape& s = entry.tensor.shape();
        const double fan_in = static_cast<double>(s[1] * s[2] * s[3]);
        std::mt19937_64 rng(splitmix64(seed ^ fnv1a(entry.name)));
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (T& v : entry.tensor.data()) v = static_cast<T>(dist(rng));
    }
}

template <typename T>
Conv2dLayer<T>::Conv2dLayer(ConvBlockSpec spec)
    : spec_(spec),
      weight_(Shape{spec.c_out, spec.c_in, spec.kernel, spec.kernel}, T(0), true),
      bias_(Shape{spec.c_out}, T(0), true) {
    if (spec.c_in < 1 || spec.c_out < 1 || spec.kernel < 1 || spec.dilation < 1) {
        throw std::invalid_argument("conv block needs positive channels, kernel and dilation");
    }
    if (spec.kernel % 2 == 0) throw std::invalid_argument("conv block kernel must be odd to preserve H x W");
}

template <typename T>
Tensor<T> Conv2dLayer<T>::forward(const Tensor<T>& x) const {
    return conv2d(x, weight_, bias_, {.stride = 1, .padding = spec_.padding(), .dilation = spec_.dilation});
}

template <typename T>
void Conv2dLayer<T>::collect(const std::string& prefix, StateList<T>& out) const {
    out.push_back({prefix + "/weight", weight_, true});
    out.push_back({prefix + "/bias", bias_, true});
}

template <typename T>
ConvBnRelu<T>::ConvBnRelu(ConvBlockSpec spec)
    : conv_(spec),
      gamma_(Shape{spec.c_out}, T(1), true),
      beta_(Shape{spec.c_out}, T(0), true),
      running_mean_(Shape{spec.c_out}, T(0)),
      running_var_(Shape{spec.c_out}, T(1)) {}

template <typename T>
Tensor<T> ConvBnRelu<T>::forward(const Tensor<T>& x, NormMode mode) const {
    check_channels(x, conv_.spec().c_in, "conv_bn_relu");
    Tensor<T> y = conv_.forward(x);
    y = batchnorm2d(y, gamma_, beta_, running_mean_, running_var_, {.mode = mode});
    return relu(y);
}

template <typename T>
void ConvBnRelu<T>::collect(const std::string& prefix, StateList<T>& out) const {
    conv_.collect(prefix + "/conv", out);
    out.push_back({prefix + "/bn/gamma", gamma_, true});
    out.push_back({prefix + "/bn/beta", beta_, true});
    out.push_back({prefix + "/bn/running_mean", running_mean_, false});
    out.push_back({prefix + "/bn/running_var", running_var_, false});
}

std::string RsuSpec::label() const {
    return "RSU-" + std::to_string(height) + (dilated ? "F" : "") + "(" + std::to_string(c_in) + "," +
           std::to_string(c_mid) + "," + std::to_string(c_out) + ")";
}

template <typename T>
RsuBlock<T>::RsuBlock(RsuSpec spec) : spec_(spec) {
    if (spec.height < 2) throw std::invalid_argument("RSU height must be >= 2, got " + std::to_string(spec.height));
    if (spec.dilated && spec.height != 4) throw std::invalid_argument("the dilated RSU variant has height 4");
    const int l = spec.height;
    auto push = [this](std::string name, int ci, int co, int dil) {
        names_.push_back(std::move(name));
        layers_.emplace_back(ConvBlockSpec{ci, co, 3, dil});
    };
    push("in", spec.c_in, spec.c_out, 1);
    push("enc1", spec.c_out, spec.c_mid, 1);
    if (spec.dilated) {
        push("enc2", spec.c_mid, spec.c_mid, 2);
        push("enc3", spec.c_mid, spec.c_mid, 4);
        push("bottom", spec.c_mid, spec.c_mid, 8);
        push("dec3", 2 * spec.c_mid, spec.c_mid, 4);
        push("dec2", 2 * spec.c_mid, spec.c_mid, 2);
        push("dec1", 2 * spec.c_mid, spec.c_out, 1);
    } else {
        for (int i = 2; i <= l - 1; ++i) push("enc" + std::to_string(i), spec.c_mid, spec.c_mid, 1);
        push("bottom", spec.c_mid, spec.c_mid, 2);
        for (int i = l - 1; i >= 2; --i) push("dec" + std::to_string(i), 2 * spec.c_mid, spec.c_mid, 1);
        push("dec1", 2 * spec.c_mid, spec.c_out, 1);
    }
}

template <typename T>
Tensor<T> RsuBlock<T>::forward(const Tensor<T>& x, NormMode mode) const {
    check_channels(x, spec_.c_in, spec_.label());
    const int64_t div = spec_.spatial_divisor();
    if (x.dim(2) % div != 0 || x.dim(3) % div != 0) {
        throw std::invalid_argument(spec_.label() + " needs H and W divisible by " + std::to_string(div) + ", got " +
                                    shape_str(x.shape()));
    }
    Tensor<T> x0 = layers_[0].forward(x, mode);
    Tensor<T> d1 = spec_.dilated ? forward_dilated(x0, mode) : forward_pooled(x0, mode);
    return add(x0, d1);
}

template <typename T>
Tensor<T> RsuBlock<T>::forward_pooled(const Tensor<T>& x0, NormMode mode) const {
    const int l = spec_.height;
    // layers_: [0]=in, [1..l-1]=enc1..enc{l-1}, [l]=bottom, [l+1..2l-1]=dec{l-1}..dec1
    std::vector<Tensor<T>> enc;
    enc.reserve(l - 1);
    enc.push_back(layers_[1].forward(x0, mode));
    for (int i = 2; i <= l - 1; ++i) enc.push_back(layers_[i].forward(maxpool2d(enc.back(), 2, 2), mode));
    Tensor<T> bottom = layers_[l].forward(enc.back(), mode);
    Tensor<T> d = layers_[l + 1].forward(concat_channels<T>({bottom, enc.back()}), mode);
    for (int i = l - 2; i >= 1; --i) {
        const Tensor<T>& skip = enc[i - 1];
        Tensor<T> up = upsample_bilinear(d, skip.dim(2), skip.dim(3));
        d = layers_[2 * l - i].forward(concat_channels<T>({up, skip}), mode);
    }
    return d;
}

template <typename T>
Tensor<T> RsuBlock<T>::forward_dilated(const Tensor<T>& x0, NormMode mode) const {
    Tensor<T> e1 = layers_[1].forward(x0, mode);
    Tensor<T> e2 = layers_[2].forward(e1, mode);
    Tensor<T> e3 = layers_[3].forward(e2, mode);
    Tensor<T> b = layers_[4].forward(e3, mode);
    Tensor<T> d3 = layers_[5].forward(concat_channels<T>({b, e3}), mode);
    Tensor<T> d2 = layers_[6].forward(concat_channels<T>({d3, e2}), mode);
    return layers_[7].forward(concat_channels<T>({d2, e1}), mode);
}

template <typename T>
void RsuBlock<T>::collect(const std::string& prefix, StateList<T>& out) const {
    for (size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + "/" + names_[i], out);
}

template <typename T>
ResConnect<T>::ResConnect(ResConnectSpec spec)
    : spec_(spec),
      proj_(ConvBlockSpec{spec.c_in, spec.c_out, 1, 1}),
      refine_(ConvBlockSpec{spec.c_out, spec.c_out, 1, 1}),
      alpha_(Tensor<T>::scalar(T(1), true)) {}

template <typename T>
Tensor<T> ResConnect<T>::forward(const Tensor<T>& x_in, const Tensor<T>& x_out) const {
    check_channels(x_in, spec_.c_in, "res_connect input");
    check_channels(x_out, spec_.c_out, "res_connect output");
    if (x_in.dim(0) != x_out.dim(0) || x_in.dim(2) != x_out.dim(2) || x_in.dim(3) != x_out.dim(3)) {
        throw std::invalid_argument("res_connect spatial mismatch: " + shape_str(x_in.shape()) + " vs " +
                                    shape_str(x_out.shape()));
    }
    Tensor<T> p = proj_.forward(x_in);
    Tensor<T> f = maxpool2d(add(x_out, p), 3, 1, 1);
    Tensor<T> r = refine_.forward(f);
    return add(x_out, gate(r, alpha_));
}

template <typename T>
void ResConnect<T>::collect(const std::string& prefix, StateList<T>& out) const {
    proj_.collect(prefix + "/proj", out);
    refine_.collect(prefix + "/refine", out);
    out.push_back({prefix + "/alpha", alpha_, true});
}

template void init_parameters(StateList<float>&, uint64_t);
template void init_parameters(StateList<double>&, uint64_t);
template class Conv2dLayer<float>;
template class Conv2dLayer<double>;
template class ConvBnRelu<float>;
template class ConvBnRelu<double>;
template class RsuBlock<float>;
template class RsuBlock<double>;
template class ResConnect<float>;
template class ResConnect<double>;

}  // namespace nusg::nn
