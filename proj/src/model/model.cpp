#include "nusg/model.hpp"

#include <stdexcept>

#include "nusg/cost.hpp"

namespace nusg {

namespace {

const std::vector<std::pair<std::string, Arch>>& arch_table() {
    static const std::vector<std::pair<std::string, Arch>> table{{"u2net", Arch::kU2Net},
                                                                  {"res-u2net", Arch::kResU2Net},
                                                                  {"u2net-lite", Arch::kU2NetLite},
                                                                  {"res-u2net-lite", Arch::kResU2NetLite}};
    return table;
}

// Sides come out of De1..De5 and En6; logits keep their stage resolution
// until upsampled to the input size.
template <typename T>
Tensor<T> to_size(const Tensor<T>& x, int64_t h, int64_t w) {
    if (x.dim(2) == h && x.dim(3) == w) return x;
    return upsample_bilinear(x, h, w);
}

}  // namespace

Arch parse_arch(const std::string& id) {
    for (const auto& [name, arch] : arch_table())
        if (name == id) return arch;
    std::string valid;
    for (const auto& [name, arch] : arch_table()) valid += (valid.empty() ? "" : ", ") + name;
    throw std::invalid_argument("unknown architecture '" + id + "'; valid ids: " + valid);
}

std::string arch_id(Arch arch) {
    for (const auto& [name, a] : arch_table())
        if (a == arch) return name;
    throw std::logic_error("unhandled architecture");
}

const std::vector<std::string>& arch_ids() {
    static const std::vector<std::string> ids = [] {
        std::vector<std::string> v;
        for (const auto& entry : arch_table()) v.push_back(entry.first);
        return v;
    }();
    return ids;
}

bool has_res_connect(Arch arch) { return arch == Arch::kResU2Net || arch == Arch::kResU2NetLite; }
bool is_lite(Arch arch) { return arch == Arch::kU2NetLite || arch == Arch::kResU2NetLite; }

ModelSpec ModelSpec::for_arch(Arch arch) {
    using nn::RsuSpec;
    ModelSpec s;
    s.arch = arch;
    s.res_connect = has_res_connect(arch);
    if (is_lite(arch)) {
        s.encoders = {RsuSpec{7, 3, 16, 64},  RsuSpec{6, 64, 16, 64},       RsuSpec{5, 64, 16, 64},
                      RsuSpec{4, 64, 16, 64}, RsuSpec{4, 64, 16, 64, true}, RsuSpec{4, 64, 16, 64, true}};
        s.decoders = {RsuSpec{7, 128, 16, 64}, RsuSpec{6, 128, 16, 64}, RsuSpec{5, 128, 16, 64},
                      RsuSpec{4, 128, 16, 64}, RsuSpec{4, 128, 16, 64, true}};
    } else {
        s.encoders = {RsuSpec{7, 3, 32, 64},    RsuSpec{6, 64, 32, 128},        RsuSpec{5, 128, 64, 256},
                      RsuSpec{4, 256, 128, 512}, RsuSpec{4, 512, 256, 512, true}, RsuSpec{4, 512, 256, 512, true}};
        s.decoders = {RsuSpec{7, 128, 16, 64},   RsuSpec{6, 256, 32, 64}, RsuSpec{5, 512, 64, 128},
                      RsuSpec{4, 1024, 128, 256}, RsuSpec{4, 1024, 256, 512, true}};
    }
    s.validate();
    return s;
}

void ModelSpec::validate() const {
    for (size_t i = 1; i < encoders.size(); ++i) {
        if (encoders[i].c_in != encoders[i - 1].c_out) {
            throw std::invalid_argument("encoder " + std::to_string(i + 1) + " input channels do not match encoder " +
                                        std::to_string(i) + " output");
        }
    }
    for (size_t i = 0; i < decoders.size(); ++i) {
        const int deeper = i + 1 < decoders.size() ? decoders[i + 1].c_out : encoders[5].c_out;
        if (decoders[i].c_in != encoders[i].c_out + deeper) {
            throw std::invalid_argument("decoder " + std::to_string(i + 1) + " expects " +
                                        std::to_string(decoders[i].c_in) + " channels but is fed " +
                                        std::to_string(encoders[i].c_out + deeper));
        }
    }
}

void require_model_input(const Shape& shape) {
    require_4d(shape, "model input");
    if (shape[1] != 3) throw std::invalid_argument("model input needs 3 channels, got " + shape_str(shape));
    if (shape[2] % 32 != 0 || shape[3] % 32 != 0 || shape[2] < 64 || shape[3] < 64) {
        throw std::invalid_argument("model input needs H and W divisible by 32 and at least 64, got " +
                                    shape_str(shape));
    }
}

template <typename T>
Model<T>::Model(Arch arch) : spec_(ModelSpec::for_arch(arch)), fuse_(nn::ConvBlockSpec{6, 1, 1, 1}) {
    for (const auto& e : spec_.encoders) encoders_.emplace_back(e);
    for (const auto& d : spec_.decoders) decoders_.emplace_back(d);
    if (spec_.res_connect) {
        for (size_t i = 0; i < 5; ++i) res_.emplace_back(nn::ResConnectSpec{spec_.encoders[i].c_in, spec_.encoders[i].c_out});
    }
    for (const auto& d : spec_.decoders) side_.emplace_back(nn::ConvBlockSpec{d.c_out, 1, 3, 1});
    side_.emplace_back(nn::ConvBlockSpec{spec_.encoders[5].c_out, 1, 3, 1});
}

template <typename T>
Model<T> Model<T>::build(Arch arch, uint64_t seed) {
    Model m(arch);
    nn::StateList<T> s = m.state();
    nn::init_parameters(s, seed);
    return m;
}

template <typename T>
SideOutputs<T> Model<T>::forward(const Tensor<T>& x, NormMode mode) const {
    require_model_input(x.shape());
    const int64_t h = x.dim(2), w = x.dim(3);

    std::array<Tensor<T>, 6> enc;
    std::array<Tensor<T>, 5> skip;
    Tensor<T> in = x;
    for (size_t i = 0; i < 6; ++i) {
        if (i > 0) in = maxpool2d(enc[i - 1], 2, 2);
        enc[i] = encoders_[i].forward(in, mode);
        if (i < 5) skip[i] = res_.empty() ? enc[i] : res_[i].forward(in, enc[i]);
    }

    std::array<Tensor<T>, 5> dec;
    Tensor<T> deeper = enc[5];
    for (int i = 4; i >= 0; --i) {
        Tensor<T> up = to_size(deeper, skip[i].dim(2), skip[i].dim(3));
        dec[i] = decoders_[i].forward(concat_channels<T>({up, skip[i]}), mode);
        deeper = dec[i];
    }

    SideOutputs<T> out;
    std::vector<Tensor<T>> logits;
    for (size_t m = 0; m < 6; ++m) {
        const Tensor<T>& feat = m < 5 ? dec[m] : enc[5];
        logits.push_back(to_size(side_[m].forward(feat), h, w));
        out.sides[m] = sigmoid(logits.back());
    }
    out.fused = sigmoid(fuse_.forward(concat_channels<T>(logits)));
    return out;
}

template <typename T>
nn::StateList<T> Model<T>::state() const {
    nn::StateList<T> s;
    for (size_t i = 0; i < 6; ++i) {
        const std::string stage = "en" + std::to_string(i + 1);
        encoders_[i].collect(stage + "/rsu", s);
        if (i < res_.size()) res_[i].collect(stage + "/res", s);
    }
    for (int i = 4; i >= 0; --i) decoders_[i].collect("de" + std::to_string(i + 1) + "/rsu", s);
    for (size_t m = 0; m < 6; ++m) side_[m].collect("side" + std::to_string(m + 1), s);
    fuse_.collect("fuse", s);
    return s;
}

template <typename T>
nn::StateList<T> Model<T>::parameters() const {
    nn::StateList<T> all = state(), out;
    for (auto& e : all)
        if (e.learnable) out.push_back(std::move(e));
    return out;
}

template <typename T>
void Model<T>::set_res_gates(T value) {
    for (auto& r : res_) r.alpha().data()[0] = value;
}

template <typename T>
ParamCount count_params(const nn::StateList<T>& state) {
    ParamCount pc;
    for (const auto& e : state)
        if (e.learnable) pc.count += e.tensor.numel();
    pc.megabytes = static_cast<double>(pc.count) * 4.0 / (1024.0 * 1024.0);
    return pc;
}

template <typename T>
ParamCount count_params(const Model<T>& model) {
    return count_params(model.state());
}

std::string FlopReport::convention() const {
    return "flops: 2 per conv multiply-accumulate plus one per bias add, plus one per output element of batch norm, "
           "relu, sigmoid, pooling, upsampling, add and gate; concat is free. macs: conv multiply-accumulates only.";
}

template <typename T>
FlopReport count_flops(const Model<T>& model, const Shape& input_shape) {
    require_model_input(input_shape);
    NoGradGuard no_grad;
    CostTrace trace(true);
    model.forward(Tensor<T>(input_shape), NormMode::kEval);
    FlopReport r;
    r.flops = trace.counts().flops;
    r.macs = trace.counts().macs;
    r.conv_layers = trace.counts().conv_layers;
    r.input_shape = input_shape;
    return r;
}

template class Model<float>;
template class Model<double>;
template ParamCount count_params(const nn::StateList<float>&);
template ParamCount count_params(const nn::StateList<double>&);
template ParamCount count_params(const Model<float>&);
template ParamCount count_params(const Model<double>&);
template FlopReport count_flops(const Model<float>&, const Shape&);
template FlopReport count_flops(const Model<double>&, const Shape&);

}  // namespace nusg
