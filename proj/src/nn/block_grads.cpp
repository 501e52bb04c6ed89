#include <random>

#include "nusg/blocks.hpp"

namespace nusg::nn {

namespace {

// Input tensors for grad_check: x first, then every learnable tensor of the
// block. The handles share storage with the block, so perturbations land in
// the live parameters.
// In train mode a conv bias feeding batch norm is cancelled by the batch mean,
// so its gradient is exactly zero and a relative error would only measure
// finite-difference noise. Those biases are skipped when `skip_bn_bias`.
template <typename Block>
std::vector<Tensor64> checked_inputs(const Block& block, Tensor64 x, uint64_t seed, bool skip_bn_bias = false) {
    StateList<double> state;
    block.collect("b", state);
    init_parameters(state, seed);
    std::mt19937_64 rng(seed + 1);
    std::vector<Tensor64> in{std::move(x)};
    for (auto& e : state) {
        if (!e.learnable) continue;
        // Non-default gamma/beta/bias so their gradients are exercised away
        // from the trivial values.
        if (e.tensor.rank() == 1 && e.tensor.numel() > 1) {
            std::uniform_real_distribution<double> d(0.5, 1.5);
            for (double& v : e.tensor.data()) v = d(rng) * (e.name.ends_with("gamma") ? 1.0 : 0.2);
        }
        if (skip_bn_bias && e.name.ends_with("/conv/bias")) continue;
        in.push_back(e.tensor);
    }
    return in;
}

}  // namespace

std::vector<GradCheckCase> block_grad_cases() {
    std::vector<GradCheckCase> cases;
    cases.push_back({"conv_bn_relu", [] {
                         ConvBnRelu<double> block({2, 3, 3, 2});
                         std::mt19937_64 rng(201);
                         auto in = checked_inputs(block, random_tensor({2, 2, 6, 5}, rng), 201, true);
                         RandomProjection probe({2, 3, 6, 5}, 21);
                         return grad_check([&] { return probe(block.forward(in[0], NormMode::kTrain)); }, in);
                     }});
    cases.push_back({"conv_bn_relu_eval", [] {
                         ConvBnRelu<double> block({2, 3, 3, 1});
                         std::mt19937_64 rng(205);
                         auto in = checked_inputs(block, random_tensor({2, 2, 5, 5}, rng), 205);
                         std::uniform_real_distribution<double> d(0.5, 1.5);
                         for (double& v : block.running_var().data()) v = d(rng);
                         for (double& v : block.running_mean().data()) v = d(rng) - 1.0;
                         RandomProjection probe({2, 3, 5, 5}, 25);
                         return grad_check([&] { return probe(block.forward(in[0], NormMode::kEval)); }, in);
                     }});
    cases.push_back({"rsu4", [] {
                         RsuBlock<double> block({4, 2, 3, 2, false});
                         std::mt19937_64 rng(202);
                         auto in = checked_inputs(block, random_tensor({2, 2, 8, 8}, rng), 202, true);
                         RandomProjection probe({2, 2, 8, 8}, 22);
                         return grad_check([&] { return probe(block.forward(in[0], NormMode::kTrain)); }, in);
                     }});
    cases.push_back({"rsu4f", [] {
                         RsuBlock<double> block({4, 2, 3, 2, true});
                         std::mt19937_64 rng(203);
                         auto in = checked_inputs(block, random_tensor({2, 2, 5, 5}, rng), 203, true);
                         RandomProjection probe({2, 2, 5, 5}, 23);
                         return grad_check([&] { return probe(block.forward(in[0], NormMode::kTrain)); }, in);
                     }});
    cases.push_back({"res_connect", [] {
                         ResConnect<double> block({3, 2});
                         std::mt19937_64 rng(204);
                         auto in = checked_inputs(block, random_tensor({2, 3, 5, 4}, rng), 204);
                         in.insert(in.begin() + 1, random_tensor({2, 2, 5, 4}, rng));
                         block.alpha().data()[0] = 0.7;
                         RandomProjection probe({2, 2, 5, 4}, 24);
                         return grad_check([&] { return probe(block.forward(in[0], in[1])); }, in);
                     }});
    return cases;
}

}  // namespace nusg::nn
