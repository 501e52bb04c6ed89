#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nusg {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::string op = "leaf";
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    // Reads this node's grad and accumulates into the grads of `inputs`.
    std::function<void(TensorImpl&)> backward_fn;

    bool is_leaf() const { return inputs.empty(); }
    std::vector<T>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
        return grad;
    }
};

/// Handle to a dense N-d array that participates in reverse-mode
/// differentiation. Copies share storage (the graph refers to nodes, not
/// values); use clone() for an independent copy.
///
/// Layout is row-major; image data uses N x C x H x W. Scalars have shape {1}.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor();
    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    static Tensor scalar(T value, bool requires_grad = false);

    const Shape& shape() const { return impl_->shape; }
    int64_t dim(size_t axis) const { return impl_->shape.at(axis); }
    size_t rank() const { return impl_->shape.size(); }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    std::span<T> data() { return impl_->data; }
    std::span<const T> data() const { return impl_->data; }
    std::vector<T>& values() { return impl_->data; }
    const std::vector<T>& values() const { return impl_->data; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<T> grad();
    std::span<const T> grad() const;
    void zero_grad() { impl_->grad.clear(); }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const { return impl_->is_leaf(); }
    const std::string& op() const { return impl_->op; }

    T item() const;
    T& at(std::initializer_list<int64_t> index);
    T at(std::initializer_list<int64_t> index) const;

    /// Deep copy of the values; the result is a fresh leaf.
    Tensor clone() const;
    /// Shares no graph history; values are copied.
    Tensor detach() const { return clone().set_requires_grad(false); }

    bool all_finite() const;
    bool same_values(const Tensor& other) const;  // bitwise on the value buffer

    TensorImpl<T>* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl<T>>& impl_ptr() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

/// Thread-local switch: while disabled, ops record no graph history.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Operations reachable from a root, in topological order (operands first).
template <typename T>
class Tape {
public:
    static Tape record(const Tensor<T>& root);

    const std::vector<TensorImpl<T>*>& order() const { return order_; }
    size_t size() const { return order_.size(); }

private:
    std::vector<TensorImpl<T>*> order_;
};

/// Populates grad on every requires_grad leaf reachable from `loss`.
///
/// Leaf grads accumulate: calling twice without zero_grad() doubles them.
/// Interior grads are transient and released as soon as they are consumed.
template <typename T>
void backward(const Tensor<T>& loss);

/// Builds an interior graph node. Graph history is attached only when grad
/// mode is on and at least one input requires grad.
template <typename T>
Tensor<T> make_result(std::string op,
                      Shape shape,
                      std::vector<T> values,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(TensorImpl<T>&)> backward_fn);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace nusg
