#pragma once

#include <optional>

#include "nusg/gradcheck.hpp"
#include "nusg/model.hpp"
#include "nusg/tensor.hpp"

namespace nusg {

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] inside the logs;
/// the gradient is zero where the clamp is active.
inline constexpr double kProbClamp = 1e-7;

/// Mean binary cross-entropy over all elements. gt must hold only 0 and 1.
template <typename T>
Tensor<T> bce(const Tensor<T>& pred, const Tensor<T>& gt);

/// Sum of bce over the six side maps and the fused map, each weighted 1.
template <typename T>
Tensor<T> deep_supervision_loss(const SideOutputs<T>& outputs, const Tensor<T>& gt);

struct FocalOptions {
    double gamma = 2.0;
    double alpha = 0.25;       // weight of the foreground term
    double mu_ref = 0.25;      // reference foreground fraction
    double lambda_max = 3.0;
    std::optional<double> lambda;  // overrides the per-image weight when set
};

/// Per-image weight clamp(mu_ref / mu, 1, lambda_max) where mu is the
/// foreground fraction of that image; mu = 0 gives lambda_max.
template <typename T>
std::vector<double> focal_image_weights(const Tensor<T>& gt, const FocalOptions& opt);

/// (1/N) sum_i w_i * mean over pixels of image i of
/// -alpha_t (1 - p_t)^gamma log p_t.
template <typename T>
Tensor<T> focal_term(const Tensor<T>& pred, const Tensor<T>& gt, const std::vector<double>& image_weights,
                     double gamma, double alpha);

/// Focal deep supervision: the image weights multiply each image's focal
/// mean, summed over all seven maps.
template <typename T>
Tensor<T> weighted_focal_loss(const SideOutputs<T>& outputs, const Tensor<T>& gt, const FocalOptions& opt = {});

/// Finite-difference cases in 64-bit for bce, focal_term and
/// deep_supervision_loss, differentiated through sigmoid maps built from
/// random logits.
std::vector<GradCheckCase> loss_grad_cases();

}  // namespace nusg
