#include <algorithm>
#include <stdexcept>
#include <string>

#include "detail.hpp"
#include "nusg/cost.hpp"
#include "nusg/ops.hpp"

namespace nusg {

void require_4d(const Shape& shape, const char* what) {
    if (shape.size() != 4) {
        throw std::invalid_argument(std::string(what) + " must be N x C x H x W, got " + shape_str(shape));
    }
}

namespace {

struct ConvGeometry {
    int64_t n, cin, h, w;
    int64_t cout, k;
    int64_t stride, pad, dil;
    int64_t ho, wo;

    int64_t patch() const { return cin * k * k; }
    int64_t out_plane() const { return ho * wo; }
    bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Keeps each im2col tile around 4M elements regardless of layer size.
constexpr int64_t kColumnBudget = int64_t{1} << 22;

int64_t tile_columns(const ConvGeometry& g) {
    return std::clamp<int64_t>(kColumnBudget / std::max<int64_t>(g.patch(), 1), 1, g.out_plane());
}

template <typename T>
void im2col(const T* xn, const ConvGeometry& g, int64_t p0, int64_t cols, T* col) {
    for (int64_t ci = 0; ci < g.cin; ++ci) {
        const T* plane = xn + ci * g.h * g.w;
        for (int64_t ki = 0; ki < g.k; ++ki) {
            for (int64_t kj = 0; kj < g.k; ++kj) {
                T* row = col + ((ci * g.k + ki) * g.k + kj) * cols;
                int64_t oy = p0 / g.wo;
                int64_t ox = p0 % g.wo;
                for (int64_t p = 0; p < cols;) {
                    const int64_t seg = std::min(g.wo - ox, cols - p);
                    const int64_t iy = oy * g.stride - g.pad + ki * g.dil;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(row + p, row + p + seg, T(0));
                    } else {
                        const T* src = plane + iy * g.w;
                        int64_t ix = ox * g.stride - g.pad + kj * g.dil;
                        for (int64_t s = 0; s < seg; ++s, ix += g.stride) {
                            row[p + s] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
                        }
                    }
                    p += seg;
                    ox = 0;
                    ++oy;
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, int64_t p0, int64_t cols, T* dxn) {
    for (int64_t ci = 0; ci < g.cin; ++ci) {
        T* plane = dxn + ci * g.h * g.w;
        for (int64_t ki = 0; ki < g.k; ++ki) {
            for (int64_t kj = 0; kj < g.k; ++kj) {
                const T* row = col + ((ci * g.k + ki) * g.k + kj) * cols;
                int64_t oy = p0 / g.wo;
                int64_t ox = p0 % g.wo;
                for (int64_t p = 0; p < cols;) {
                    const int64_t seg = std::min(g.wo - ox, cols - p);
                    const int64_t iy = oy * g.stride - g.pad + ki * g.dil;
                    if (iy >= 0 && iy < g.h) {
                        T* dst = plane + iy * g.w;
                        int64_t ix = ox * g.stride - g.pad + kj * g.dil;
                        for (int64_t s = 0; s < seg; ++s, ix += g.stride) {
                            if (ix >= 0 && ix < g.w) dst[ix] += row[p + s];
                        }
                    }
                    p += seg;
                    ox = 0;
                    ++oy;
                }
            }
        }
    }
}

ConvGeometry make_geometry(const Shape& xs, const Shape& ws, const Shape& bs, Conv2dOptions opt) {
    require_4d(xs, "conv2d input");
    require_4d(ws, "conv2d weight");
    if (ws[1] != xs[1]) {
        throw std::invalid_argument("conv2d channel mismatch: input " + shape_str(xs) + " has " +
                                    std::to_string(xs[1]) + " channels but weight " + shape_str(ws) + " expects " +
                                    std::to_string(ws[1]));
    }
    if (ws[2] != ws[3]) throw std::invalid_argument("conv2d needs a square kernel, got weight " + shape_str(ws));
    if (bs.size() != 1 || bs[0] != ws[0]) {
        throw std::invalid_argument("conv2d bias " + shape_str(bs) + " does not match weight " + shape_str(ws));
    }
    if (opt.stride < 1) throw std::invalid_argument("conv2d stride must be positive, got " + std::to_string(opt.stride));
    if (opt.dilation < 1) {
        throw std::invalid_argument("conv2d dilation must be positive, got " + std::to_string(opt.dilation));
    }
    if (opt.padding < 0) throw std::invalid_argument("conv2d padding must be non-negative");

    ConvGeometry g{};
    g.n = xs[0];
    g.cin = xs[1];
    g.h = xs[2];
    g.w = xs[3];
    g.cout = ws[0];
    g.k = ws[2];
    g.stride = opt.stride;
    g.pad = opt.padding;
    g.dil = opt.dilation;
    const int64_t span = g.dil * (g.k - 1) + 1;
    if (g.h + 2 * g.pad < span || g.w + 2 * g.pad < span) {
        throw std::invalid_argument("conv2d receptive field " + std::to_string(span) + " exceeds padded input " +
                                    shape_str(xs) + " with padding " + std::to_string(g.pad));
    }
    g.ho = (g.h + 2 * g.pad - span) / g.stride + 1;
    g.wo = (g.w + 2 * g.pad - span) / g.stride + 1;
    return g;
}

template <typename T>
void conv_backward(TensorImpl<T>& node, const ConvGeometry& g) {
    const std::vector<T>& gout = node.grad;
    std::vector<T>* dx = detail::input_grad(node, 0);
    std::vector<T>* dw = detail::input_grad(node, 1);
    std::vector<T>* db = detail::input_grad(node, 2);
    const std::vector<T>& xv = node.inputs[0]->data;
    const std::vector<T>& wv = node.inputs[1]->data;
    const int64_t plane = g.out_plane();
    const int64_t patch = g.patch();
    const int64_t in_image = g.cin * g.h * g.w;
    const int ldo = static_cast<int>(plane);

    if (db) {
        for (int64_t n = 0; n < g.n; ++n) {
            for (int64_t co = 0; co < g.cout; ++co) {
                const T* src = gout.data() + (n * g.cout + co) * plane;
                T acc = T(0);
                for (int64_t p = 0; p < plane; ++p) acc += src[p];
                (*db)[co] += acc;
            }
        }
    }
    if (!dx && !dw) return;

    if (g.pointwise()) {
        for (int64_t n = 0; n < g.n; ++n) {
            const T* go = gout.data() + n * g.cout * plane;
            const T* xn = xv.data() + n * in_image;
            if (dw) {
                detail::gemm(false, true, static_cast<int>(g.cout), static_cast<int>(g.cin), static_cast<int>(plane),
                             T(1), go, ldo, xn, ldo, T(1), dw->data(), static_cast<int>(g.cin));
            }
            if (dx) {
                detail::gemm(true, false, static_cast<int>(g.cin), static_cast<int>(plane), static_cast<int>(g.cout),
                             T(1), wv.data(), static_cast<int>(g.cin), go, ldo, T(1), dx->data() + n * in_image, ldo);
            }
        }
        return;
    }

    const int64_t tile = tile_columns(g);
    std::vector<T> col(static_cast<size_t>(patch * tile));
    std::vector<T> dcol(dx ? static_cast<size_t>(patch * tile) : 0);
    for (int64_t n = 0; n < g.n; ++n) {
        const T* xn = xv.data() + n * in_image;
        const T* go = gout.data() + n * g.cout * plane;
        for (int64_t p0 = 0; p0 < plane; p0 += tile) {
            const int64_t cols = std::min(tile, plane - p0);
            if (dw) {
                im2col(xn, g, p0, cols, col.data());
                detail::gemm(false, true, static_cast<int>(g.cout), static_cast<int>(patch), static_cast<int>(cols),
                             T(1), go + p0, ldo, col.data(), static_cast<int>(cols), T(1), dw->data(),
                             static_cast<int>(patch));
            }
            if (dx) {
                detail::gemm(true, false, static_cast<int>(patch), static_cast<int>(cols), static_cast<int>(g.cout),
                             T(1), wv.data(), static_cast<int>(patch), go + p0, ldo, T(0), dcol.data(),
                             static_cast<int>(cols));
                col2im(dcol.data(), g, p0, cols, dx->data() + n * in_image);
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dOptions opt) {
    const ConvGeometry g = make_geometry(x.shape(), weight.shape(), bias.shape(), opt);
    const int64_t plane = g.out_plane();
    const Shape out_shape{g.n, g.cout, g.ho, g.wo};
    CostTrace::add_conv(static_cast<double>(g.n * g.cout * plane) * static_cast<double>(g.patch()),
                        static_cast<double>(g.n * g.cout * plane));
    if (CostTrace::skipping_compute()) return Tensor<T>(out_shape);

    std::vector<T> out(static_cast<size_t>(g.n * g.cout * plane));
    const T* wv = weight.data().data();
    const T* bv = bias.data().data();
    const int64_t in_image = g.cin * g.h * g.w;
    const int ldo = static_cast<int>(plane);

    for (int64_t n = 0; n < g.n; ++n) {
        T* on = out.data() + n * g.cout * plane;
        for (int64_t co = 0; co < g.cout; ++co) std::fill(on + co * plane, on + (co + 1) * plane, bv[co]);
    }

    if (g.pointwise()) {
        for (int64_t n = 0; n < g.n; ++n) {
            detail::gemm(false, false, static_cast<int>(g.cout), static_cast<int>(plane), static_cast<int>(g.cin), T(1),
                         wv, static_cast<int>(g.cin), x.data().data() + n * in_image, ldo, T(1),
                         out.data() + n * g.cout * plane, ldo);
        }
    } else {
        const int64_t tile = tile_columns(g);
        std::vector<T> col(static_cast<size_t>(g.patch() * tile));
        for (int64_t n = 0; n < g.n; ++n) {
            const T* xn = x.data().data() + n * in_image;
            T* on = out.data() + n * g.cout * plane;
            for (int64_t p0 = 0; p0 < plane; p0 += tile) {
                const int64_t cols = std::min(tile, plane - p0);
                im2col(xn, g, p0, cols, col.data());
                detail::gemm(false, false, static_cast<int>(g.cout), static_cast<int>(cols),
                             static_cast<int>(g.patch()), T(1), wv, static_cast<int>(g.patch()), col.data(),
                             static_cast<int>(cols), T(1), on + p0, ldo);
            }
        }
    }

    return make_result<T>("conv2d", out_shape, std::move(out), {x, weight, bias},
                          [g](TensorImpl<T>& node) { conv_backward(node, g); });
}

template Tensor<float> conv2d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, Conv2dOptions);
template Tensor<double> conv2d(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, Conv2dOptions);

}  // namespace nusg
