#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "detail.hpp"
#include "nusg/cost.hpp"
#include "nusg/ops.hpp"

namespace nusg {

namespace {

struct AxisTaps {
    std::vector<int64_t> lo, hi;
    std::vector<double> frac;  // weight of `hi`
};

AxisTaps half_pixel_taps(int64_t in, int64_t out) {
    AxisTaps taps;
    taps.lo.resize(out);
    taps.hi.resize(out);
    taps.frac.resize(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t d = 0; d < out; ++d) {
        double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const int64_t lo = static_cast<int64_t>(std::floor(src));
        taps.lo[d] = lo;
        taps.hi[d] = std::min(lo + 1, in - 1);
        taps.frac[d] = src - static_cast<double>(lo);
    }
    return taps;
}

}  // namespace

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int64_t out_h, int64_t out_w) {
    require_4d(x.shape(), "upsample_bilinear input");
    if (out_h < 1 || out_w < 1) {
        throw std::invalid_argument("upsample_bilinear target " + std::to_string(out_h) + "x" +
                                    std::to_string(out_w) + " must be positive");
    }
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const Shape out_shape{n, c, out_h, out_w};
    CostTrace::add_elementwise(static_cast<double>(n * c * out_h * out_w));
    if (CostTrace::skipping_compute()) return Tensor<T>(out_shape);

    AxisTaps ty = half_pixel_taps(h, out_h);
    AxisTaps tx = half_pixel_taps(w, out_w);
    std::vector<T> out(static_cast<size_t>(n * c * out_h * out_w));
    const T* xv = x.data().data();
    for (int64_t plane = 0; plane < n * c; ++plane) {
        const T* src = xv + plane * h * w;
        T* dst = out.data() + plane * out_h * out_w;
        for (int64_t oy = 0; oy < out_h; ++oy) {
            const T fy = static_cast<T>(ty.frac[oy]);
            const T* r0 = src + ty.lo[oy] * w;
            const T* r1 = src + ty.hi[oy] * w;
            for (int64_t ox = 0; ox < out_w; ++ox) {
                const T fx = static_cast<T>(tx.frac[ox]);
                const T top = r0[tx.lo[ox]] * (T(1) - fx) + r0[tx.hi[ox]] * fx;
                const T bottom = r1[tx.lo[ox]] * (T(1) - fx) + r1[tx.hi[ox]] * fx;
                dst[oy * out_w + ox] = top * (T(1) - fy) + bottom * fy;
            }
        }
    }

    return make_result<T>(
        "upsample_bilinear", out_shape, std::move(out), {x},
        [ty = std::move(ty), tx = std::move(tx), n, c, h, w, out_h, out_w](TensorImpl<T>& node) {
            std::vector<T>* dx = detail::input_grad(node, 0);
            if (!dx) return;
            for (int64_t plane = 0; plane < n * c; ++plane) {
                const T* g = node.grad.data() + plane * out_h * out_w;
                T* d = dx->data() + plane * h * w;
                for (int64_t oy = 0; oy < out_h; ++oy) {
                    const T fy = static_cast<T>(ty.frac[oy]);
                    T* r0 = d + ty.lo[oy] * w;
                    T* r1 = d + ty.hi[oy] * w;
                    for (int64_t ox = 0; ox < out_w; ++ox) {
                        const T fx = static_cast<T>(tx.frac[ox]);
                        const T go = g[oy * out_w + ox];
                        r0[tx.lo[ox]] += go * (T(1) - fy) * (T(1) - fx);
                        r0[tx.hi[ox]] += go * (T(1) - fy) * fx;
                        r1[tx.lo[ox]] += go * fy * (T(1) - fx);
                        r1[tx.hi[ox]] += go * fy * fx;
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_channels needs at least one tensor");
    for (const auto& t : xs) require_4d(t.shape(), "concat_channels operand");
    const int64_t n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
    int64_t c_total = 0;
    std::vector<int64_t> channels;
    for (const auto& t : xs) {
        if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w) {
            throw std::invalid_argument("concat_channels operand " + shape_str(t.shape()) + " does not match " +
                                        shape_str(xs[0].shape()) + " in N/H/W");
        }
        channels.push_back(t.dim(1));
        c_total += t.dim(1);
    }
    const Shape out_shape{n, c_total, h, w};
    if (CostTrace::skipping_compute()) return Tensor<T>(out_shape);

    const int64_t plane = h * w;
    std::vector<T> out(static_cast<size_t>(n * c_total * plane));
    for (int64_t b = 0; b < n; ++b) {
        int64_t offset = 0;
        for (size_t i = 0; i < xs.size(); ++i) {
            const int64_t block = channels[i] * plane;
            const T* src = xs[i].data().data() + b * block;
            std::copy(src, src + block, out.data() + (b * c_total + offset) * plane);
            offset += channels[i];
        }
    }

    return make_result<T>("concat_channels", out_shape, std::move(out), xs,
                          [channels, n, c_total, plane](TensorImpl<T>& node) {
                              int64_t offset = 0;
                              for (size_t i = 0; i < channels.size(); ++i) {
                                  std::vector<T>* dx = detail::input_grad(node, i);
                                  if (dx) {
                                      const int64_t block = channels[i] * plane;
                                      for (int64_t b = 0; b < n; ++b) {
                                          const T* g = node.grad.data() + (b * c_total + offset) * plane;
                                          T* d = dx->data() + b * block;
                                          for (int64_t k = 0; k < block; ++k) d[k] += g[k];
                                      }
                                  }
                                  offset += channels[i];
                              }
                          });
}

template Tensor<float> upsample_bilinear(const Tensor<float>&, int64_t, int64_t);
template Tensor<double> upsample_bilinear(const Tensor<double>&, int64_t, int64_t);
template Tensor<float> concat_channels(const std::vector<Tensor<float>>&);
template Tensor<double> concat_channels(const std::vector<Tensor<double>>&);

}  // namespace nusg
