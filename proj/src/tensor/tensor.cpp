#include "nusg/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace nusg {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw std::invalid_argument("shape " + shape_str(shape) + " has a non-positive dimension");
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

template <typename T>
Tensor<T>::Tensor() : impl_(std::make_shared<TensorImpl<T>>()) {
    impl_->shape = {1};
    impl_->data.assign(1, T(0));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) : impl_(std::make_shared<TensorImpl<T>>()) {
    const int64_t n = shape_numel(shape);
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<size_t>(n), fill);
    impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl<T>>()) {
    const int64_t n = shape_numel(shape);
    if (static_cast<int64_t>(values.size()) != n) {
        throw std::invalid_argument("tensor of shape " + shape_str(shape) + " needs " + std::to_string(n) +
                                    " values, got " + std::to_string(values.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::span<T> Tensor<T>::grad() {
    return impl_->ensure_grad();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    return impl_->ensure_grad();
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

template <typename T>
T Tensor<T>::item() const {
    if (impl_->data.size() != 1) {
        throw std::invalid_argument("item() on tensor of shape " + shape_str(impl_->shape));
    }
    return impl_->data[0];
}

namespace {
int64_t flat_index(const Shape& shape, std::initializer_list<int64_t> index) {
    if (index.size() != shape.size()) throw std::out_of_range("index rank does not match tensor rank");
    int64_t flat = 0;
    size_t axis = 0;
    for (int64_t i : index) {
        if (i < 0 || i >= shape[axis]) throw std::out_of_range("index out of range");
        flat = flat * shape[axis] + i;
        ++axis;
    }
    return flat;
}
}  // namespace

template <typename T>
T& Tensor<T>::at(std::initializer_list<int64_t> index) {
    return impl_->data[static_cast<size_t>(flat_index(impl_->shape, index))];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<int64_t> index) const {
    return impl_->data[static_cast<size_t>(flat_index(impl_->shape, index))];
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    return Tensor(impl_->shape, impl_->data, impl_->requires_grad);
}

template <typename T>
bool Tensor<T>::all_finite() const {
    for (T v : impl_->data)
        if (!std::isfinite(v)) return false;
    return true;
}

template <typename T>
bool Tensor<T>::same_values(const Tensor& other) const {
    return impl_->shape == other.impl_->shape &&
           std::memcmp(impl_->data.data(), other.impl_->data.data(), impl_->data.size() * sizeof(T)) == 0;
}

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
    Tape tape;
    std::unordered_set<TensorImpl<T>*> visited;
    // Iterative post-order DFS; the model graphs are deep enough that
    // recursion depth is worth avoiding.
    std::vector<std::pair<TensorImpl<T>*, size_t>> stack;
    stack.emplace_back(root.impl(), 0);
    visited.insert(root.impl());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            TensorImpl<T>* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            tape.order_.push_back(node);
            stack.pop_back();
        }
    }
    return tape;
}

template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
        throw std::invalid_argument("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;
    Tape<T> tape = Tape<T>::record(loss);
    const auto& order = tape.order();
    for (TensorImpl<T>* node : order)
        if (!node->is_leaf()) node->grad.clear();
    TensorImpl<T>* root = loss.impl();
    root->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl<T>* node = *it;
        if (node->is_leaf()) continue;
        if (!node->grad.empty() && node->backward_fn) node->backward_fn(*node);
        node->grad.clear();
        node->grad.shrink_to_fit();
    }
}

template <typename T>
Tensor<T> make_result(std::string op,
                      Shape shape,
                      std::vector<T> values,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(TensorImpl<T>&)> backward_fn) {
    Tensor<T> out(std::move(shape), std::move(values));
    TensorImpl<T>* impl = out.impl();
    impl->op = std::move(op);
    bool track = false;
    if (GradMode::enabled()) {
        for (const auto& in : inputs)
            if (in.requires_grad()) track = true;
    }
    if (track) {
        impl->requires_grad = true;
        impl->inputs.reserve(inputs.size());
        for (auto& in : inputs) impl->inputs.push_back(in.impl_ptr());
        impl->backward_fn = std::move(backward_fn);
    }
    return out;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template Tensor<float> make_result<float>(std::string, Shape, std::vector<float>, std::vector<Tensor<float>>,
                                          std::function<void(TensorImpl<float>&)>);
template Tensor<double> make_result<double>(std::string, Shape, std::vector<double>, std::vector<Tensor<double>>,
                                            std::function<void(TensorImpl<double>&)>);

}  // namespace nusg
