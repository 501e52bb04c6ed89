#include "nusg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "nusg/ops.hpp"

namespace nusg {

GradCheckResult grad_check(const std::function<Tensor64()>& f,
                           std::span<Tensor64> inputs,
                           double eps,
                           int64_t max_coords) {
    for (auto& in : inputs) in.zero_grad();
    {
        Tensor64 loss = f();
        backward(loss);
    }

    GradCheckResult result;
    NoGradGuard no_grad;
    for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor64& in = inputs[k];
        const std::vector<double> analytic(in.grad().begin(), in.grad().end());
        const int64_t n = in.numel();
        const int64_t stride = (max_coords > 0 && n > max_coords) ? (n + max_coords - 1) / max_coords : 1;
        for (int64_t i = 0; i < n; i += stride) {
            double& x = in.data()[i];
            const double saved = x;
            x = saved + eps;
            const double up = f().item();
            x = saved - eps;
            const double down = f().item();
            x = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double err = std::abs(a - numeric) / denom;
            ++result.coordinates;
            if (result.worst_index < 0 || err > result.max_rel_error) {
                result.max_rel_error = err;
                result.worst_input = k;
                result.worst_index = i;
                result.analytic = a;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

RandomProjection::RandomProjection(const Shape& shape, uint64_t seed) {
    std::mt19937_64 rng(seed);
    weights_ = random_tensor(shape, rng, -1.0, 1.0, false);
}

Tensor64 RandomProjection::operator()(const Tensor64& out) const { return sum(mul(out, weights_)); }

Tensor64 random_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi, bool requires_grad) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& x : v) x = dist(rng);
    return Tensor64(shape, std::move(v), requires_grad);
}

bool GradCheckReport::passed() const {
    return std::all_of(rows.begin(), rows.end(),
                       [this](const auto& row) { return row.second.max_rel_error < tolerance; });
}

GradCheckReport run_grad_suite(const std::vector<GradCheckCase>& cases, double tolerance) {
    GradCheckReport report;
    report.tolerance = tolerance;
    for (const auto& c : cases) report.rows.emplace_back(c.name, c.run());
    return report;
}

namespace {

// Values bounded away from zero so relu is probed off its kink.
Tensor64 off_kink_tensor(const Shape& shape, std::mt19937_64& rng) {
    Tensor64 t = random_tensor(shape, rng, 0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (double& v : t.data())
        if (sign(rng)) v = -v;
    return t;
}

// Distinct values so maxpool windows have no ties.
Tensor64 distinct_tensor(const Shape& shape, std::mt19937_64& rng) {
    Tensor64 t(shape, 0.0, true);
    std::vector<double> v(static_cast<size_t>(t.numel()));
    for (size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * static_cast<double>(i);
    std::shuffle(v.begin(), v.end(), rng);
    std::copy(v.begin(), v.end(), t.data().begin());
    return t;
}

}  // namespace

std::vector<GradCheckCase> tensor_grad_cases() {
    std::vector<GradCheckCase> cases;
    cases.push_back({"conv2d", [] {
                         std::mt19937_64 rng(101);
                         std::vector<Tensor64> in{random_tensor({2, 3, 7, 6}, rng), random_tensor({4, 3, 3, 3}, rng),
                                                  random_tensor({4}, rng)};
                         RandomProjection probe({2, 4, 4, 3}, 7);
                         return grad_check(
                             [&] { return probe(conv2d(in[0], in[1], in[2], {.stride = 2, .padding = 2, .dilation = 2})); },
                             in);
                     }});
    cases.push_back({"maxpool2d", [] {
                         std::mt19937_64 rng(102);
                         std::vector<Tensor64> in{distinct_tensor({2, 2, 6, 6}, rng)};
                         RandomProjection probe({2, 2, 6, 6}, 8);
                         return grad_check([&] { return probe(maxpool2d(in[0], 3, 1, 1)); }, in);
                     }});
    cases.push_back({"upsample_bilinear", [] {
                         std::mt19937_64 rng(103);
                         std::vector<Tensor64> in{random_tensor({1, 2, 3, 4}, rng)};
                         RandomProjection probe({1, 2, 7, 8}, 9);
                         return grad_check([&] { return probe(upsample_bilinear(in[0], 7, 8)); }, in);
                     }});
    cases.push_back({"concat_channels", [] {
                         std::mt19937_64 rng(104);
                         std::vector<Tensor64> in{random_tensor({2, 1, 4, 4}, rng), random_tensor({2, 3, 4, 4}, rng)};
                         RandomProjection probe({2, 4, 4, 4}, 10);
                         return grad_check([&] { return probe(concat_channels<double>({in[0], in[1]})); }, in);
                     }});
    cases.push_back({"relu", [] {
                         std::mt19937_64 rng(105);
                         std::vector<Tensor64> in{off_kink_tensor({2, 3, 4, 4}, rng)};
                         RandomProjection probe({2, 3, 4, 4}, 11);
                         return grad_check([&] { return probe(relu(in[0])); }, in);
                     }});
    cases.push_back({"sigmoid", [] {
                         std::mt19937_64 rng(106);
                         std::vector<Tensor64> in{random_tensor({2, 3, 4, 4}, rng, -4.0, 4.0)};
                         RandomProjection probe({2, 3, 4, 4}, 12);
                         return grad_check([&] { return probe(sigmoid(in[0])); }, in);
                     }});
    cases.push_back({"add", [] {
                         std::mt19937_64 rng(107);
                         std::vector<Tensor64> in{random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 2, 3, 3}, rng)};
                         RandomProjection probe({2, 2, 3, 3}, 13);
                         return grad_check([&] { return probe(add(in[0], in[1])); }, in);
                     }});
    cases.push_back({"mul", [] {
                         std::mt19937_64 rng(108);
                         std::vector<Tensor64> in{random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 2, 3, 3}, rng)};
                         RandomProjection probe({2, 2, 3, 3}, 14);
                         return grad_check([&] { return probe(mul(in[0], in[1])); }, in);
                     }});
    cases.push_back({"scale", [] {
                         std::mt19937_64 rng(109);
                         std::vector<Tensor64> in{random_tensor({2, 2, 3, 3}, rng)};
                         RandomProjection probe({2, 2, 3, 3}, 15);
                         return grad_check([&] { return probe(scale(in[0], -1.7)); }, in);
                     }});
    cases.push_back({"gate", [] {
                         std::mt19937_64 rng(110);
                         std::vector<Tensor64> in{random_tensor({2, 2, 3, 3}, rng), random_tensor({1}, rng)};
                         RandomProjection probe({2, 2, 3, 3}, 16);
                         return grad_check([&] { return probe(gate(in[0], in[1])); }, in);
                     }});
    cases.push_back({"sum", [] {
                         std::mt19937_64 rng(111);
                         std::vector<Tensor64> in{random_tensor({2, 2, 3, 3}, rng)};
                         return grad_check([&] { return sum(in[0]); }, in);
                     }});
    cases.push_back({"mean", [] {
                         std::mt19937_64 rng(112);
                         std::vector<Tensor64> in{random_tensor({2, 2, 3, 3}, rng)};
                         return grad_check([&] { return mean(in[0]); }, in);
                     }});
    cases.push_back({"batchnorm2d", [] {
                         std::mt19937_64 rng(113);
                         std::vector<Tensor64> in{random_tensor({2, 3, 4, 4}, rng, -2.0, 2.0),
                                                  random_tensor({3}, rng, 0.5, 1.5), random_tensor({3}, rng)};
                         Tensor64 rm({3}, 0.0), rv({3}, 1.0);
                         RandomProjection probe({2, 3, 4, 4}, 17);
                         return grad_check([&] { return probe(batchnorm2d(in[0], in[1], in[2], rm, rv)); }, in);
                     }});
    cases.push_back({"batchnorm2d_eval", [] {
                         std::mt19937_64 rng(114);
                         std::vector<Tensor64> in{random_tensor({2, 3, 4, 4}, rng, -2.0, 2.0),
                                                  random_tensor({3}, rng, 0.5, 1.5), random_tensor({3}, rng)};
                         Tensor64 rm = random_tensor({3}, rng, -0.5, 0.5, false);
                         Tensor64 rv = random_tensor({3}, rng, 0.5, 2.0, false);
                         RandomProjection probe({2, 3, 4, 4}, 18);
                         return grad_check(
                             [&] {
                                 return probe(batchnorm2d(in[0], in[1], in[2], rm, rv, {.mode = NormMode::kEval}));
                             },
                             in);
                     }});
    return cases;
}

}  // namespace nusg
