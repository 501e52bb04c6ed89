#include <cmath>
#include <numbers>
#include <stdexcept>

#include "nusg/train.hpp"

namespace nusg {

template <typename T>
AdamW<T>::AdamW(nn::StateList<T> params, AdamWOptions opt) : params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_) {
        if (!p.learnable) throw std::invalid_argument("optimizer given non-learnable tensor " + p.name);
        m_.emplace_back(static_cast<size_t>(p.tensor.numel()), T(0));
        v_.emplace_back(static_cast<size_t>(p.tensor.numel()), T(0));
    }
}

template <typename T>
void AdamW<T>::step(double lr) {
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) continue;
        for (T g : p.tensor.grad())
            if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient in parameter " + p.name);
    }
    ++t_;
    const double b1 = opt_.beta1, b2 = opt_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
        Tensor<T>& p = params_[k].tensor;
        auto w = p.data();
        const bool has = p.has_grad();
        for (size_t i = 0; i < w.size(); ++i) {
            const double g = has ? static_cast<double>(p.grad()[i]) : 0.0;
            const double m = b1 * m_[k][i] + (1.0 - b1) * g;
            const double v = b2 * v_[k][i] + (1.0 - b2) * g * g;
            m_[k][i] = static_cast<T>(m);
            v_[k][i] = static_cast<T>(v);
            // With b1 = 0 (or b2 = 0) the correction is exactly 1.
            const double mhat = c1 > 0.0 ? m / c1 : m;
            const double vhat = c2 > 0.0 ? v / c2 : v;
            const double theta = w[i];
            w[i] = static_cast<T>(theta - lr * mhat / (std::sqrt(vhat) + opt_.eps) - lr * opt_.weight_decay * theta);
        }
    }
}

void Schedule::validate() const {
    if (total_steps < 1) throw std::invalid_argument("schedule needs total_steps >= 1");
    if (warmup_steps < 0 || warmup_steps >= total_steps) {
        throw std::invalid_argument("schedule needs 0 <= warmup_steps < total_steps, got W=" +
                                    std::to_string(warmup_steps) + " T=" + std::to_string(total_steps));
    }
    if (!(base_lr > 0.0)) throw std::invalid_argument("base_lr must be positive");
}

double lr_at(int64_t step, const Schedule& s) {
    s.validate();
    if (step < 0) throw std::invalid_argument("negative step " + std::to_string(step));
    if (step >= s.total_steps) return 0.0;
    if (step < s.warmup_steps) return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    const double frac = static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.total_steps - s.warmup_steps);
    return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace nusg
