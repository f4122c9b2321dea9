#ifndef SURVIVAL_NN_GRADCHECK_HPP
#define SURVIVAL_NN_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "survival/nn/optim.hpp"
#include "survival/rng.hpp"

namespace survival::nn {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true gradient
/// is zero (dead units) from dividing by zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-7)
{
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

/// Central finite differences against reverse-mode gradients.
///
/// `loss_fn` must rebuild the forward graph from the current parameter values
/// and return a scalar Var. When `per_tensor` is nonzero, only that many
/// entries per parameter tensor are sampled (with `rng`), otherwise all.
template <class LossFn>
GradCheckResult check_gradients(const NamedParams<double>& params, LossFn&& loss_fn, double h = 1e-4,
                                std::size_t per_tensor = 0, Rng* rng = nullptr)
{
    zero_grad(params);
    auto loss = loss_fn();
    backward(loss);

    GradCheckResult result;
    for (const auto& [name, param] : params) {
        auto p = param;
        std::vector<std::size_t> indices(p.value().size());
        for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
        if (per_tensor && rng && per_tensor < indices.size()) {
            for (std::size_t i = 0; i < per_tensor; ++i)
                std::swap(indices[i], indices[i + rng->below(indices.size() - i)]);
            indices.resize(per_tensor);
        }
        std::vector<double> analytic(p.value().size(), 0.0);
        if (p.has_grad()) std::copy(p.grad().values().begin(), p.grad().values().end(), analytic.begin());
        for (std::size_t idx : indices) {
            double& slot = p.mutable_value()[idx];
            const double saved = slot;
            double plus = 0.0, minus = 0.0;
            {
                NoGradGuard guard;
                slot = saved + h;
                plus = loss_fn().value()[0];
                slot = saved - h;
                minus = loss_fn().value()[0];
            }
            slot = saved;
            const double numeric = (plus - minus) / (2.0 * h);
            const double err = relative_error(analytic[idx], numeric);
            ++result.checked;
            if (err > result.max_relative_error || result.worst_parameter.empty()) {
                result.max_relative_error = std::max(result.max_relative_error, err);
                if (err >= result.max_relative_error) {
                    result.worst_parameter = name;
                    result.worst_index = idx;
                    result.worst_analytic = analytic[idx];
                    result.worst_numeric = numeric;
                }
            }
        }
    }
    return result;
}

} // namespace survival::nn

#endif
