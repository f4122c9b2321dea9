#ifndef SURVIVAL_NN_OPTIM_HPP
#define SURVIVAL_NN_OPTIM_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "survival/nn/layers.hpp"

namespace survival::nn {

template <class T>
void zero_grad(const NamedParams<T>& params)
{
    for (const auto& [name, p] : params) {
        auto v = p;
        v.zero_grad();
    }
}

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Moments are stored per parameter, in the order
/// the parameters were registered.
template <class T>
class Adam {
public:
    Adam() = default;
    Adam(const NamedParams<T>& params, AdamConfig config) : config_(config)
    {
        for (const auto& [name, p] : params) {
            m_.emplace_back(p.shape(), T{0});
            v_.emplace_back(p.shape(), T{0});
        }
    }

    const AdamConfig& config() const noexcept { return config_; }
    std::int64_t steps() const noexcept { return steps_; }
    const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
    const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }

    /// Applies one update from the accumulated gradients. Parameters without a
    /// gradient buffer are treated as having zero gradient.
    void step(const NamedParams<T>& params)
    {
        if (params.size() != m_.size()) throw std::invalid_argument("Adam: parameter count changed");
        ++steps_;
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
        const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto p = params[k].second;
            if (!p.has_grad()) continue;
            auto& value = p.mutable_value();
            const auto& g = p.grad();
            if (g.size() != value.size() || m_[k].size() != value.size())
                throw std::invalid_argument("Adam: shape mismatch for " + params[k].first);
            T* m = m_[k].data();
            T* v = v_[k].data();
            for (std::size_t i = 0; i < value.size(); ++i) {
                m[i] = b1 * m[i] + (T{1} - b1) * g[i];
                v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
                const double mhat = static_cast<double>(m[i]) / bc1;
                const double vhat = static_cast<double>(v[i]) / bc2;
                value[i] -= static_cast<T>(config_.lr * mhat / (std::sqrt(vhat) + config_.eps));
            }
        }
    }

private:
    AdamConfig config_;
    std::int64_t steps_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

/// target <- (1 - tau) * target + tau * online, parameter by parameter.
template <class T>
void polyak_update(const NamedParams<T>& target, const NamedParams<T>& online, double tau)
{
    if (target.size() != online.size()) throw std::invalid_argument("polyak_update: parameter trees differ in size");
    const T keep = static_cast<T>(1.0 - tau), take = static_cast<T>(tau);
    for (std::size_t k = 0; k < target.size(); ++k) {
        if (target[k].first != online[k].first || target[k].second.shape() != online[k].second.shape())
            throw std::invalid_argument("polyak_update: mismatch at " + target[k].first + " vs " + online[k].first);
        auto t = target[k].second;
        auto& tv = t.mutable_value();
        const auto& ov = online[k].second.value();
        if (tau == 1.0) {
            tv = ov;
            continue;
        }
        for (std::size_t i = 0; i < tv.size(); ++i) tv[i] = keep * tv[i] + take * ov[i];
    }
}

template <class T>
void copy_values(const NamedParams<T>& dst, const NamedParams<T>& src)
{
    polyak_update(dst, src, 1.0);
}

} // namespace survival::nn

#endif
