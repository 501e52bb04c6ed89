#include <doctest.h>

#include <cmath>
#include <random>

#include "nusg/loss.hpp"
#include "nusg/ops.hpp"

using namespace nusg;

namespace {

Tensor64 mask(const Shape& s, double frac, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution fg(frac);
    Tensor64 t(s);
    for (double& v : t.data()) v = fg(rng) ? 1.0 : 0.0;
    return t;
}

Tensor64 probs(const Shape& s, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(0.02, 0.98);
    Tensor64 t(s);
    for (double& v : t.data()) v = d(rng);
    return t;
}

SideOutputs<double> same_maps(const Tensor64& p) {
    SideOutputs<double> o;
    for (auto& s : o.sides) s = p;
    o.fused = p;
    return o;
}

// Direct per-pixel evaluation.
double bce_oracle(const Tensor64& p, const Tensor64& g) {
    double acc = 0.0;
    for (int64_t i = 0; i < p.numel(); ++i) {
        const double q = std::clamp(p.data()[i], 1e-7, 1.0 - 1e-7);
        acc += -(g.data()[i] * std::log(q) + (1.0 - g.data()[i]) * std::log(1.0 - q));
    }
    return acc / static_cast<double>(p.numel());
}

}  // namespace

TEST_CASE("bce at 0.5 is ln 2 for any target") {
    for (uint64_t seed : {1, 2, 3}) CHECK(bce(Tensor64({1, 1, 4, 4}, 0.5), mask({1, 1, 4, 4}, 0.4, seed)).item() ==
                                          doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("bce of a perfect prediction is at most 1e-6") {
    Tensor64 g = mask({2, 1, 5, 5}, 0.5, 4);
    CHECK(bce(g.clone(), g).item() <= 1e-6);
}

TEST_CASE("bce single pixel 0.8 against 1 is -ln 0.8") {
    CHECK(bce(Tensor64({1}, 0.8), Tensor64({1}, 1.0)).item() == doctest::Approx(-std::log(0.8)).epsilon(1e-12));
}

TEST_CASE("bce matches a per-pixel oracle") {
    Tensor64 p = probs({3, 1, 6, 6}, 5), g = mask({3, 1, 6, 6}, 0.3, 6);
    CHECK(bce(p, g).item() == doctest::Approx(bce_oracle(p, g)).epsilon(1e-12));
}

TEST_CASE("bce rejects non-binary targets and shape mismatches") {
    CHECK_THROWS_AS(bce(Tensor64({4}, 0.5), Tensor64({4}, 0.5)), std::invalid_argument);
    CHECK_THROWS_AS(bce(Tensor64({4}, 0.5), Tensor64({5}, 1.0)), std::invalid_argument);
}

TEST_CASE("bce over constant predictions is minimized at the target mean") {
    for (uint64_t seed = 10; seed < 15; ++seed) {
        Tensor64 g = mask({1, 1, 20, 20}, 0.1 + 0.15 * static_cast<double>(seed - 10), seed);
        double mean = 0.0;
        for (double v : g.data()) mean += v;
        mean /= static_cast<double>(g.numel());
        double best_p = 0.0, best = INFINITY;
        for (int k = 1; k < 1000; ++k) {
            const double p = k * 1e-3;
            const double l = bce(Tensor64(g.shape(), p), g).item();
            if (l < best) best = l, best_p = p;
        }
        CHECK(std::abs(best_p - mean) <= 1e-3);
    }
}

TEST_CASE("bce gradient is zero where the clamp is active") {
    Tensor64 p({3}, std::vector<double>{0.0, 1.0, 0.5}, true);
    Tensor64 g({3}, std::vector<double>{1.0, 0.0, 1.0});
    backward(bce(p, g));
    CHECK(p.grad()[0] == 0.0);
    CHECK(p.grad()[1] == 0.0);
    CHECK(p.grad()[2] == doctest::Approx(-1.0 / (3 * 0.5)));
}

TEST_CASE("deep supervision over seven equal maps is seven times bce") {
    Tensor64 p = probs({2, 1, 4, 4}, 7), g = mask({2, 1, 4, 4}, 0.5, 8);
    CHECK(deep_supervision_loss(same_maps(p), g).item() == doctest::Approx(7.0 * bce_oracle(p, g)).epsilon(1e-12));
    CHECK(deep_supervision_loss(same_maps(g.clone()), g).item() <= 7e-6);
}

TEST_CASE("deep supervision gradient on a fused-conv weight matches finite differences") {
    auto model = Model<double>::build(Arch::kU2NetLite, 9);
    std::mt19937_64 rng(10);
    Tensor64 x = random_tensor({1, 3, 64, 64}, rng, -1.0, 1.0, false);
    Tensor64 g = mask({1, 1, 64, 64}, 0.3, 11);
    std::vector<Tensor64> in;
    for (auto& e : model.parameters())
        if (e.name == "fuse/weight" || e.name == "fuse/bias") in.push_back(e.tensor);
    REQUIRE(in.size() == 2);
    auto r = grad_check([&] { return deep_supervision_loss(model.forward(x, NormMode::kEval), g); }, in);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("focal image weights follow the clamped foreground ratio") {
    Tensor64 g({4, 1, 2, 2});
    // foreground counts 0, 1, 2, 4 out of 4 pixels
    const int counts[4] = {0, 1, 2, 4};
    for (int i = 0; i < 4; ++i)
        for (int k = 0; k < counts[i]; ++k) g.data()[i * 4 + k] = 1.0;
    auto w = focal_image_weights(g, FocalOptions{});
    CHECK(w[0] == 3.0);
    CHECK(w[1] == 1.0);
    CHECK(w[2] == 1.0);
    CHECK(w[3] == 1.0);
    Tensor64 sparse({1, 1, 1, 10});
    sparse.data()[0] = 1.0;
    CHECK(focal_image_weights(sparse, FocalOptions{})[0] == doctest::Approx(2.5));
    FocalOptions fixed;
    fixed.lambda = 1.7;
    CHECK(focal_image_weights(sparse, fixed)[0] == 1.7);
}

TEST_CASE("focal loss single pixel example") {
    Tensor64 p({1, 1, 1, 1}, 0.9), g({1, 1, 1, 1}, 1.0);
    const double expect = -0.25 * 0.1 * 0.1 * std::log(0.9);
    CHECK(focal_term(p, g, {1.0}, 2.0, 0.25).item() == doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect == doctest::Approx(2.634e-4).epsilon(1e-3));
}

TEST_CASE("focal loss with confident correct predictions is zero") {
    Tensor64 g = mask({1, 1, 4, 4}, 0.5, 12);
    CHECK(weighted_focal_loss(same_maps(g.clone()), g).item() < 1e-12);
}

TEST_CASE("focal loss with gamma 0 and alpha 0.5 is half the weighted bce") {
    Tensor64 p = probs({1, 1, 8, 8}, 13), g = mask({1, 1, 8, 8}, 0.1, 14);
    auto maps = same_maps(p);
    const double ds = deep_supervision_loss(maps, g).item();
    FocalOptions opt;
    opt.gamma = 0.0;
    opt.alpha = 0.5;
    opt.lambda = 1.0;
    CHECK(std::abs(weighted_focal_loss(maps, g, opt).item() - 0.5 * ds) <= 1e-9);
    opt.lambda.reset();
    const double lambda = focal_image_weights(g, opt)[0];
    CHECK(lambda > 1.0);
    CHECK(std::abs(weighted_focal_loss(maps, g, opt).item() - 0.5 * lambda * ds) <= 1e-9);
}

TEST_CASE("loss finite-difference suite") {
    auto report = run_grad_suite(loss_grad_cases());
    for (const auto& [name, r] : report.rows) {
        INFO(name, " rel err ", r.max_rel_error);
        CHECK(r.max_rel_error < 1e-4);
    }
}
