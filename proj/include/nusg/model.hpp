#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nusg/blocks.hpp"

namespace nusg {

enum class Arch { kU2Net, kResU2Net, kU2NetLite, kResU2NetLite };

/// Accepts "u2net", "res-u2net", "u2net-lite", "res-u2net-lite"; throws
/// std::invalid_argument listing the valid ids otherwise.
Arch parse_arch(const std::string& id);
std::string arch_id(Arch arch);
const std::vector<std::string>& arch_ids();
bool has_res_connect(Arch arch);
bool is_lite(Arch arch);

/// Stage table: encoders En1..En6, decoders De5..De1 (stored De1 first).
struct ModelSpec {
    Arch arch = Arch::kU2Net;
    std::array<nn::RsuSpec, 6> encoders;
    std::array<nn::RsuSpec, 5> decoders;  // decoders[i] is De(i+1)
    bool res_connect = false;

    static ModelSpec for_arch(Arch arch);
    /// Checks the channel wiring: De(i) input = En(i) output + De(i+1) output
    /// (En6 output for De5).
    void validate() const;
};

/// Seven probability maps at input resolution: sides[0..4] from De1..De5,
/// sides[5] from En6, plus the fused map.
template <typename T>
struct SideOutputs {
    std::array<Tensor<T>, 6> sides;
    Tensor<T> fused;

    std::array<Tensor<T>, 7> all() const {
        return {sides[0], sides[1], sides[2], sides[3], sides[4], sides[5], fused};
    }
};

template <typename T>
class Model {
public:
    /// Allocates the architecture with default-initialized tensors (zero
    /// conv weights). Use build() for a seeded, trainable model.
    explicit Model(Arch arch);
    static Model build(Arch arch, uint64_t seed);

    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    /// x: N x 3 x H x W with H, W multiples of 32 and at least 64.
    SideOutputs<T> forward(const Tensor<T>& x, NormMode mode) const;

    /// All named tensors, learnable and buffers, in a fixed order.
    nn::StateList<T> state() const;
    nn::StateList<T> parameters() const;

    const ModelSpec& spec() const { return spec_; }
    Arch arch() const { return spec_.arch; }

    std::vector<nn::ResConnect<T>>& res_connects() { return res_; }
    void set_res_gates(T value);

private:
    ModelSpec spec_;
    std::vector<nn::RsuBlock<T>> encoders_;
    std::vector<nn::RsuBlock<T>> decoders_;
    std::vector<nn::ResConnect<T>> res_;
    std::vector<nn::Conv2dLayer<T>> side_;
    nn::Conv2dLayer<T> fuse_;
};

/// Validates the spatial contract of Model::forward.
void require_model_input(const Shape& shape);

struct ParamCount {
    int64_t count = 0;
    double megabytes = 0.0;  // count * 4 bytes / 2^20
};

/// Learnable values only: conv weights and biases, batch-norm gamma/beta,
/// gates. Running statistics are excluded.
template <typename T>
ParamCount count_params(const nn::StateList<T>& state);
template <typename T>
ParamCount count_params(const Model<T>& model);

struct FlopReport {
    double flops = 0.0;  // 2 per conv MAC + bias + 1 per elementwise output
    double macs = 0.0;   // conv multiply-accumulates only
    int64_t conv_layers = 0;
    Shape input_shape;

    double gflops() const { return flops / 1e9; }
    double gmacs() const { return macs / 1e9; }
    std::string convention() const;
};

/// Traces a forward pass at `input_shape` without doing the arithmetic.
template <typename T>
FlopReport count_flops(const Model<T>& model, const Shape& input_shape);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace nusg
