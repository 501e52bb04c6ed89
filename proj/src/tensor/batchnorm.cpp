#include <cmath>
#include <stdexcept>

#include "detail.hpp"
#include "nusg/cost.hpp"
#include "nusg/ops.hpp"

namespace nusg {

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x,
                      const Tensor<T>& gamma,
                      const Tensor<T>& beta,
                      Tensor<T>& running_mean,
                      Tensor<T>& running_var,
                      BatchNormOptions opt) {
    require_4d(x.shape(), "batchnorm2d input");
    const int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    const Shape per_channel{c};
    for (const Tensor<T>* t : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var}) {
        if (t->shape() != per_channel) {
            throw std::invalid_argument("batchnorm2d parameter " + shape_str(t->shape()) + " does not match " +
                                        std::to_string(c) + " channels of input " + shape_str(x.shape()));
        }
    }
    if (!(opt.eps > 0.0)) throw std::invalid_argument("batchnorm2d eps must be positive");
    const bool training = opt.mode == NormMode::kTrain;
    const int64_t count = n * plane;
    if (training && count < 2) {
        throw std::invalid_argument("batchnorm2d in train mode needs more than one value per channel, got " +
                                    shape_str(x.shape()));
    }
    CostTrace::add_elementwise(static_cast<double>(x.numel()));
    if (CostTrace::skipping_compute()) return Tensor<T>(x.shape());

    const T* xv = x.data().data();
    std::vector<T> mu(c), inv_std(c);
    for (int64_t ch = 0; ch < c; ++ch) {
        if (training) {
            double s = 0.0;
            for (int64_t b = 0; b < n; ++b) {
                const T* p = xv + (b * c + ch) * plane;
                for (int64_t i = 0; i < plane; ++i) s += p[i];
            }
            const double m = s / static_cast<double>(count);
            double ss = 0.0;
            for (int64_t b = 0; b < n; ++b) {
                const T* p = xv + (b * c + ch) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const double d = p[i] - m;
                    ss += d * d;
                }
            }
            const double var = ss / static_cast<double>(count);
            mu[ch] = static_cast<T>(m);
            inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + opt.eps));
            const double unbiased = ss / static_cast<double>(count - 1);
            T& rm = running_mean.data()[ch];
            T& rv = running_var.data()[ch];
            rm = static_cast<T>((1.0 - opt.momentum) * rm + opt.momentum * m);
            rv = static_cast<T>((1.0 - opt.momentum) * rv + opt.momentum * unbiased);
        } else {
            mu[ch] = running_mean.data()[ch];
            inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var.data()[ch]) + opt.eps));
        }
    }

    // The normalized input is kept for the backward pass.
    std::vector<T> xhat(x.values().size());
    std::vector<T> out(x.values().size());
    const T* g = gamma.data().data();
    const T* bt = beta.data().data();
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t ch = 0; ch < c; ++ch) {
            const int64_t off = (b * c + ch) * plane;
            for (int64_t i = 0; i < plane; ++i) {
                const T h = (xv[off + i] - mu[ch]) * inv_std[ch];
                xhat[off + i] = h;
                out[off + i] = g[ch] * h + bt[ch];
            }
        }
    }

    return make_result<T>(
        "batchnorm2d", x.shape(), std::move(out), {x, gamma, beta},
        [xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, plane, training](TensorImpl<T>& node) {
            const std::vector<T>& gy = node.grad;
            const std::vector<T>& gam = node.inputs[1]->data;
            std::vector<T>* dx = detail::input_grad(node, 0);
            std::vector<T>* dgamma = detail::input_grad(node, 1);
            std::vector<T>* dbeta = detail::input_grad(node, 2);
            const double count = static_cast<double>(n * plane);
            for (int64_t ch = 0; ch < c; ++ch) {
                double sum_g = 0.0, sum_gh = 0.0;
                for (int64_t b = 0; b < n; ++b) {
                    const int64_t off = (b * c + ch) * plane;
                    for (int64_t i = 0; i < plane; ++i) {
                        sum_g += gy[off + i];
                        sum_gh += static_cast<double>(gy[off + i]) * xhat[off + i];
                    }
                }
                if (dgamma) (*dgamma)[ch] += static_cast<T>(sum_gh);
                if (dbeta) (*dbeta)[ch] += static_cast<T>(sum_g);
                if (!dx) continue;
                const T k = gam[ch] * inv_std[ch];
                if (training) {
                    const T mean_g = static_cast<T>(sum_g / count);
                    const T mean_gh = static_cast<T>(sum_gh / count);
                    for (int64_t b = 0; b < n; ++b) {
                        const int64_t off = (b * c + ch) * plane;
                        for (int64_t i = 0; i < plane; ++i)
                            (*dx)[off + i] += k * (gy[off + i] - mean_g - xhat[off + i] * mean_gh);
                    }
                } else {
                    for (int64_t b = 0; b < n; ++b) {
                        const int64_t off = (b * c + ch) * plane;
                        for (int64_t i = 0; i < plane; ++i) (*dx)[off + i] += k * gy[off + i];
                    }
                }
            }
        });
}

template Tensor<float> batchnorm2d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, Tensor<float>&,
                                   Tensor<float>&, BatchNormOptions);
template Tensor<double> batchnorm2d(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                    Tensor<double>&, Tensor<double>&, BatchNormOptions);

}  // namespace nusg
