#include <random>

#include "nusg/loss.hpp"
#include "nusg/ops.hpp"

namespace nusg {

namespace {

Tensor64 random_mask(const Shape& shape, std::mt19937_64& rng) {
    std::bernoulli_distribution fg(0.3);
    Tensor64 t(shape);
    for (double& v : t.data()) v = fg(rng) ? 1.0 : 0.0;
    return t;
}

}  // namespace

std::vector<GradCheckCase> loss_grad_cases() {
    std::vector<GradCheckCase> cases;
    cases.push_back({"bce", [] {
                         std::mt19937_64 rng(301);
                         std::vector<Tensor64> in{random_tensor({2, 1, 4, 4}, rng, -3.0, 3.0)};
                         Tensor64 gt = random_mask({2, 1, 4, 4}, rng);
                         return grad_check([&] { return bce(sigmoid(in[0]), gt); }, in);
                     }});
    cases.push_back({"focal_term", [] {
                         std::mt19937_64 rng(302);
                         std::vector<Tensor64> in{random_tensor({2, 1, 4, 4}, rng, -3.0, 3.0)};
                         Tensor64 gt = random_mask({2, 1, 4, 4}, rng);
                         const auto w = focal_image_weights(gt, FocalOptions{});
                         return grad_check([&] { return focal_term(sigmoid(in[0]), gt, w, 2.0, 0.25); }, in);
                     }});
    cases.push_back({"deep_supervision_loss", [] {
                         std::mt19937_64 rng(303);
                         std::vector<Tensor64> in;
                         for (int m = 0; m < 7; ++m) in.push_back(random_tensor({2, 1, 4, 4}, rng, -3.0, 3.0));
                         Tensor64 gt = random_mask({2, 1, 4, 4}, rng);
                         return grad_check(
                             [&] {
                                 SideOutputs<double> out;
                                 for (int m = 0; m < 6; ++m) out.sides[m] = sigmoid(in[m]);
                                 out.fused = sigmoid(in[6]);
                                 return deep_supervision_loss(out, gt);
                             },
                             in);
                     }});
    return cases;
}

}  // namespace nusg
