#include "nusg/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "../tensor/detail.hpp"

namespace nusg {

namespace {

template <typename T>
void require_binary_target(const Tensor<T>& pred, const Tensor<T>& gt, const char* what) {
    if (pred.shape() != gt.shape()) {
        throw std::invalid_argument(std::string(what) + " shape mismatch: prediction " + shape_str(pred.shape()) +
                                    " vs target " + shape_str(gt.shape()));
    }
    for (T g : gt.data()) {
        if (g != T(0) && g != T(1)) {
            throw std::invalid_argument(std::string(what) + " target must be 0 or 1, found " + std::to_string(g));
        }
    }
}

template <typename T>
void require_maps(const SideOutputs<T>& outputs) {
    for (const auto& m : outputs.all())
        if (m.numel() == 0) throw std::invalid_argument("deep supervision needs all seven maps");
}

}  // namespace

template <typename T>
Tensor<T> bce(const Tensor<T>& pred, const Tensor<T>& gt) {
    require_binary_target(pred, gt, "bce");
    const T lo = static_cast<T>(kProbClamp), hi = static_cast<T>(1.0 - kProbClamp);
    const auto p = pred.data();
    const auto g = gt.data();
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p[i], lo, hi);
        acc -= g[i] == T(1) ? std::log(q) : std::log1p(-q);
    }
    const double n = static_cast<double>(p.size());
    return make_result<T>("bce", Shape{1}, {static_cast<T>(acc / n)}, {pred},
                          [gt, lo, hi, n](TensorImpl<T>& node) {
                              std::vector<T>* dp = detail::input_grad(node, 0);
                              if (!dp) return;
                              const std::vector<T>& pv = node.inputs[0]->data;
                              const auto g = gt.data();
                              const T scale = node.grad[0] / static_cast<T>(n);
                              for (size_t i = 0; i < pv.size(); ++i) {
                                  if (pv[i] < lo || pv[i] > hi) continue;
                                  (*dp)[i] += g[i] == T(1) ? -scale / pv[i] : scale / (T(1) - pv[i]);
                              }
                          });
}

template <typename T>
Tensor<T> deep_supervision_loss(const SideOutputs<T>& outputs, const Tensor<T>& gt) {
    require_maps(outputs);
    Tensor<T> total;
    for (const auto& m : outputs.all()) {
        Tensor<T> term = bce(m, gt);
        total = total.numel() == 0 ? term : add(total, term);
    }
    return total;
}

template <typename T>
std::vector<double> focal_image_weights(const Tensor<T>& gt, const FocalOptions& opt) {
    if (gt.rank() < 1 || gt.numel() == 0) throw std::invalid_argument("focal weights need a non-empty target");
    const int64_t n = gt.dim(0), per = gt.numel() / n;
    std::vector<double> w(static_cast<size_t>(n), opt.lambda.value_or(0.0));
    if (opt.lambda) return w;
    const auto g = gt.data();
    for (int64_t i = 0; i < n; ++i) {
        double fg = 0.0;
        for (int64_t k = 0; k < per; ++k) fg += g[i * per + k];
        const double mu = fg / static_cast<double>(per);
        w[i] = mu <= 0.0 ? opt.lambda_max : std::clamp(opt.mu_ref / mu, 1.0, opt.lambda_max);
    }
    return w;
}

template <typename T>
Tensor<T> focal_term(const Tensor<T>& pred, const Tensor<T>& gt, const std::vector<double>& image_weights,
                     double gamma, double alpha) {
    require_binary_target(pred, gt, "focal loss");
    const int64_t n = pred.dim(0), per = pred.numel() / n;
    if (static_cast<int64_t>(image_weights.size()) != n) {
        throw std::invalid_argument("focal loss got " + std::to_string(image_weights.size()) +
                                    " image weights for a batch of " + std::to_string(n));
    }
    const double lo = kProbClamp, hi = 1.0 - kProbClamp;
    const auto p = pred.data();
    const auto g = gt.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double img = 0.0;
        for (int64_t k = 0; k < per; ++k) {
            const size_t j = static_cast<size_t>(i * per + k);
            const double q = std::clamp(static_cast<double>(p[j]), lo, hi);
            const bool fg = g[j] == T(1);
            const double pt = fg ? q : 1.0 - q;
            img -= (fg ? alpha : 1.0 - alpha) * std::pow(1.0 - pt, gamma) * std::log(pt);
        }
        acc += image_weights[i] * img / static_cast<double>(per);
    }
    return make_result<T>(
        "focal", Shape{1}, {static_cast<T>(acc / static_cast<double>(n))}, {pred},
        [gt, image_weights, gamma, alpha, n, per, lo, hi](TensorImpl<T>& node) {
            std::vector<T>* dp = detail::input_grad(node, 0);
            if (!dp) return;
            const std::vector<T>& pv = node.inputs[0]->data;
            const auto g = gt.data();
            for (int64_t i = 0; i < n; ++i) {
                const double s = static_cast<double>(node.grad[0]) * image_weights[i] / static_cast<double>(n * per);
                for (int64_t k = 0; k < per; ++k) {
                    const size_t j = static_cast<size_t>(i * per + k);
                    const double q = static_cast<double>(pv[j]);
                    if (q < lo || q > hi) continue;
                    const bool fg = g[j] == T(1);
                    const double pt = fg ? q : 1.0 - q;
                    const double at = fg ? alpha : 1.0 - alpha;
                    // d/dp_t of -a (1-p_t)^g log p_t
                    double d = -at * std::pow(1.0 - pt, gamma) / pt;
                    if (gamma != 0.0) d += at * gamma * std::pow(1.0 - pt, gamma - 1.0) * std::log(pt);
                    (*dp)[j] += static_cast<T>(s * (fg ? d : -d));
                }
            }
        });
}

template <typename T>
Tensor<T> weighted_focal_loss(const SideOutputs<T>& outputs, const Tensor<T>& gt, const FocalOptions& opt) {
    require_maps(outputs);
    const std::vector<double> w = focal_image_weights(gt, opt);
    Tensor<T> total;
    for (const auto& m : outputs.all()) {
        Tensor<T> term = focal_term(m, gt, w, opt.gamma, opt.alpha);
        total = total.numel() == 0 ? term : add(total, term);
    }
    return total;
}

template Tensor<float> bce(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> bce(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> deep_supervision_loss(const SideOutputs<float>&, const Tensor<float>&);
template Tensor<double> deep_supervision_loss(const SideOutputs<double>&, const Tensor<double>&);
template std::vector<double> focal_image_weights(const Tensor<float>&, const FocalOptions&);
template std::vector<double> focal_image_weights(const Tensor<double>&, const FocalOptions&);
template Tensor<float> focal_term(const Tensor<float>&, const Tensor<float>&, const std::vector<double>&, double,
                                  double);
template Tensor<double> focal_term(const Tensor<double>&, const Tensor<double>&, const std::vector<double>&, double,
                                   double);
template Tensor<float> weighted_focal_loss(const SideOutputs<float>&, const Tensor<float>&, const FocalOptions&);
template Tensor<double> weighted_focal_loss(const SideOutputs<double>&, const Tensor<double>&, const FocalOptions&);

}  // namespace nusg
