#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nusg/tensor.hpp"

namespace nusg {

struct GradCheckResult {
    double max_rel_error = 0.0;
    size_t worst_input = 0;
    int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    int64_t coordinates = 0;
};

/// Central-difference check of `f` against its backward pass.
///
/// `f` closes over `inputs`; each coordinate is perturbed in place by +-eps.
/// Relative error is |a - n| / max(|a|, |n|, 1e-8). At most `max_coords`
/// coordinates per input are probed (evenly strided), 0 means all.
GradCheckResult grad_check(const std::function<Tensor64()>& f,
                           std::span<Tensor64> inputs,
                           double eps = 1e-6,
                           int64_t max_coords = 0);

/// Scalar probe sum(out * weights) with fixed random weights, so every output
/// element contributes a distinct gradient.
class RandomProjection {
public:
    RandomProjection(const Shape& shape, uint64_t seed);
    Tensor64 operator()(const Tensor64& out) const;

private:
    Tensor64 weights_;
};

Tensor64 random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                       bool requires_grad = true);

/// One named entry of the finite-difference suite.
struct GradCheckCase {
    std::string name;
    std::function<GradCheckResult()> run;
};

struct GradCheckReport {
    std::vector<std::pair<std::string, GradCheckResult>> rows;
    double tolerance = 1e-4;
    bool passed() const;
};

GradCheckReport run_grad_suite(const std::vector<GradCheckCase>& cases, double tolerance = 1e-4);

/// Tensor-core ops: conv2d, maxpool2d, upsample_bilinear, concat_channels,
/// relu, sigmoid, add, mul, scale, gate, sum, mean, batchnorm2d.
std::vector<GradCheckCase> tensor_grad_cases();

}  // namespace nusg
