#include <limits>
#include <stdexcept>
#include <string>

#include "detail.hpp"
#include "nusg/cost.hpp"
#include "nusg/ops.hpp"

namespace nusg {

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int kernel, int stride, int padding) {
    require_4d(x.shape(), "maxpool2d input");
    if (kernel < 1) throw std::invalid_argument("maxpool2d kernel must be >= 1, got " + std::to_string(kernel));
    if (stride < 1) throw std::invalid_argument("maxpool2d stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0 || 2 * padding > kernel) {
        throw std::invalid_argument("maxpool2d padding must be in [0, kernel/2], got " + std::to_string(padding));
    }
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h + 2 * padding < kernel || w + 2 * padding < kernel) {
        throw std::invalid_argument("maxpool2d window " + std::to_string(kernel) + " larger than padded input " +
                                    shape_str(x.shape()));
    }
    const int64_t ho = (h + 2 * padding - kernel) / stride + 1;
    const int64_t wo = (w + 2 * padding - kernel) / stride + 1;
    const Shape out_shape{n, c, ho, wo};
    CostTrace::add_elementwise(static_cast<double>(n * c * ho * wo));
    if (CostTrace::skipping_compute()) return Tensor<T>(out_shape);

    std::vector<T> out(static_cast<size_t>(n * c * ho * wo));
    // Flat input index of each winner, used to route the gradient.
    std::vector<int64_t> argmax(out.size());
    const T* xv = x.data().data();
    for (int64_t plane = 0; plane < n * c; ++plane) {
        const T* src = xv + plane * h * w;
        for (int64_t oy = 0; oy < ho; ++oy) {
            for (int64_t ox = 0; ox < wo; ++ox) {
                T best = -std::numeric_limits<T>::infinity();
                int64_t best_idx = -1;
                for (int64_t ky = 0; ky < kernel; ++ky) {
                    const int64_t iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int64_t kx = 0; kx < kernel; ++kx) {
                        const int64_t ix = ox * stride - padding + kx;
                        if (ix < 0 || ix >= w) continue;
                        const T v = src[iy * w + ix];
                        if (best_idx < 0 || v > best) {
                            best = v;
                            best_idx = iy * w + ix;
                        }
                    }
                }
                const size_t o = static_cast<size_t>((plane * ho + oy) * wo + ox);
                out[o] = best;
                argmax[o] = plane * h * w + best_idx;
            }
        }
    }

    return make_result<T>("maxpool2d", out_shape, std::move(out), {x},
                          [argmax = std::move(argmax)](TensorImpl<T>& node) {
                              std::vector<T>* dx = detail::input_grad(node, 0);
                              if (!dx) return;
                              for (size_t o = 0; o < argmax.size(); ++o) (*dx)[argmax[o]] += node.grad[o];
                          });
}

template Tensor<float> maxpool2d(const Tensor<float>&, int, int, int);
template Tensor<double> maxpool2d(const Tensor<double>&, int, int, int);

}  // namespace nusg
