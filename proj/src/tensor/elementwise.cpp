#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "detail.hpp"
#include "nusg/cost.hpp"
#include "nusg/ops.hpp"

namespace nusg {

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw std::invalid_argument(std::string(op) + " shape mismatch: " + shape_str(a) + " vs " + shape_str(b));
    }
}

}  // namespace

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    CostTrace::add_elementwise(static_cast<double>(x.numel()));
    if (CostTrace::skipping_compute()) return Tensor<T>(x.shape());
    std::vector<T> out(x.values());
    for (T& v : out) v = v > T(0) ? v : T(0);
    return make_result<T>("relu", x.shape(), std::move(out), {x}, [](TensorImpl<T>& node) {
        std::vector<T>* dx = detail::input_grad(node, 0);
        if (!dx) return;
        // Subgradient 0 at the kink.
        const std::vector<T>& y = node.data;
        for (size_t i = 0; i < y.size(); ++i)
            if (y[i] > T(0)) (*dx)[i] += node.grad[i];
    });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    CostTrace::add_elementwise(static_cast<double>(x.numel()));
    if (CostTrace::skipping_compute()) return Tensor<T>(x.shape(), T(0.5));
    // Saturated values are pulled back inside (0, 1) at the precision of T.
    const T lo = std::numeric_limits<T>::min();
    const T hi = std::nextafter(T(1), T(0));
    std::vector<T> out(x.values());
    for (T& v : out) v = std::clamp(T(1) / (T(1) + std::exp(-v)), lo, hi);
    return make_result<T>("sigmoid", x.shape(), std::move(out), {x}, [](TensorImpl<T>& node) {
        std::vector<T>* dx = detail::input_grad(node, 0);
        if (!dx) return;
        const std::vector<T>& y = node.data;
        for (size_t i = 0; i < y.size(); ++i) (*dx)[i] += node.grad[i] * y[i] * (T(1) - y[i]);
    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    CostTrace::add_elementwise(static_cast<double>(a.numel()));
    if (CostTrace::skipping_compute()) return Tensor<T>(a.shape());
    std::vector<T> out(a.values());
    const auto bv = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return make_result<T>("add", a.shape(), std::move(out), {a, b}, [](TensorImpl<T>& node) {
        for (size_t k = 0; k < 2; ++k) {
            std::vector<T>* d = detail::input_grad(node, k);
            if (!d) continue;
            for (size_t i = 0; i < d->size(); ++i) (*d)[i] += node.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    CostTrace::add_elementwise(static_cast<double>(a.numel()));
    if (CostTrace::skipping_compute()) return Tensor<T>(a.shape());
    std::vector<T> out(a.values());
    const auto bv = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](TensorImpl<T>& node) {
        const std::vector<T>& av = node.inputs[0]->data;
        const std::vector<T>& bv = node.inputs[1]->data;
        if (auto* da = detail::input_grad(node, 0))
            for (size_t i = 0; i < da->size(); ++i) (*da)[i] += node.grad[i] * bv[i];
        if (auto* db = detail::input_grad(node, 1))
            for (size_t i = 0; i < db->size(); ++i) (*db)[i] += node.grad[i] * av[i];
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    CostTrace::add_elementwise(static_cast<double>(x.numel()));
    if (CostTrace::skipping_compute()) return Tensor<T>(x.shape());
    std::vector<T> out(x.values());
    for (T& v : out) v *= s;
    return make_result<T>("scale", x.shape(), std::move(out), {x}, [s](TensorImpl<T>& node) {
        std::vector<T>* dx = detail::input_grad(node, 0);
        if (!dx) return;
        for (size_t i = 0; i < dx->size(); ++i) (*dx)[i] += node.grad[i] * s;
    });
}

template <typename T>
Tensor<T> gate(const Tensor<T>& x, const Tensor<T>& alpha) {
    if (alpha.numel() != 1) {
        throw std::invalid_argument("gate coefficient must hold one value, got shape " + shape_str(alpha.shape()));
    }
    CostTrace::add_elementwise(static_cast<double>(x.numel()));
    if (CostTrace::skipping_compute()) return Tensor<T>(x.shape());
    const T a = alpha.item();
    std::vector<T> out(x.values());
    for (T& v : out) v *= a;
    return make_result<T>("gate", x.shape(), std::move(out), {x, alpha}, [](TensorImpl<T>& node) {
        const T a = node.inputs[1]->data[0];
        if (auto* dx = detail::input_grad(node, 0))
            for (size_t i = 0; i < dx->size(); ++i) (*dx)[i] += node.grad[i] * a;
        if (auto* da = detail::input_grad(node, 1)) {
            const std::vector<T>& xv = node.inputs[0]->data;
            T acc = T(0);
            for (size_t i = 0; i < xv.size(); ++i) acc += node.grad[i] * xv[i];
            (*da)[0] += acc;
        }
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    if (CostTrace::skipping_compute()) return Tensor<T>(Shape{1});
    T acc = T(0);
    for (T v : x.data()) acc += v;
    return make_result<T>("sum", Shape{1}, std::vector<T>{acc}, {x}, [](TensorImpl<T>& node) {
        std::vector<T>* dx = detail::input_grad(node, 0);
        if (!dx) return;
        const T g = node.grad[0];
        for (T& d : *dx) d += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    if (CostTrace::skipping_compute()) return Tensor<T>(Shape{1});
    T acc = T(0);
    for (T v : x.data()) acc += v;
    const T inv = T(1) / static_cast<T>(x.numel());
    return make_result<T>("mean", Shape{1}, std::vector<T>{acc * inv}, {x}, [inv](TensorImpl<T>& node) {
        std::vector<T>* dx = detail::input_grad(node, 0);
        if (!dx) return;
        const T g = node.grad[0] * inv;
        for (T& d : *dx) d += g;
    });
}

#define NUSG_INSTANTIATE(T)                                         \
    template Tensor<T> relu(const Tensor<T>&);                      \
    template Tensor<T> sigmoid(const Tensor<T>&);                   \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);     \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);     \
    template Tensor<T> scale(const Tensor<T>&, T);                  \
    template Tensor<T> gate(const Tensor<T>&, const Tensor<T>&);    \
    template Tensor<T> sum(const Tensor<T>&);                       \
    template Tensor<T> mean(const Tensor<T>&);

NUSG_INSTANTIATE(float)
NUSG_INSTANTIATE(double)
#undef NUSG_INSTANTIATE

}  // namespace nusg
