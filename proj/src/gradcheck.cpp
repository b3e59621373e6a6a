#include "lrformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lrformer/rng.hpp"

namespace lrf {

double grad_rel_err(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradients(std::vector<NamedTensor64> inputs, const std::function<Tensor64()>& loss_fn,
                                const GradCheckOptions& opt) {
    return check_gradients_indexed(
        std::move(inputs), [&loss_fn](std::optional<std::size_t>) { return loss_fn(); }, opt);
}

GradCheckResult check_gradients_indexed(std::vector<NamedTensor64> inputs,
                                        const std::function<Tensor64(std::optional<std::size_t>)>& loss_fn,
                                        const GradCheckOptions& opt) {
    std::vector<bool> previous;
    for (auto& in : inputs) {
        previous.push_back(in.tensor.requires_grad());
        in.tensor.zero_grad();
        in.tensor.set_requires_grad(true);
    }
    default_tape<double>().clear();
    backward(loss_fn(std::nullopt));

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) {
        const auto g = in.tensor.grad();
        if (g.empty()) {
            analytic.emplace_back(in.tensor.numel(), 0.0);
        } else {
            analytic.emplace_back(g.begin(), g.end());
        }
    }

    GradCheckResult result;
    NoGradGuard no_grad;
    RandomStream rng(opt.seed, "gradcheck");
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto values = inputs[t].tensor.data();
        const std::size_t n = values.size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::size_t count = n;
        if (opt.sample_fraction < 1.0) {
            count = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(opt.sample_fraction * n)));
            // partial Fisher-Yates
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t j = i + rng.below(n - i);
                std::swap(order[i], order[j]);
            }
        }
        for (std::size_t s = 0; s < count; ++s) {
            const std::size_t i = order[s];
            const double saved = values[i];
            values[i] = saved + opt.eps;
            const double fp = loss_fn(t).item();
            values[i] = saved - opt.eps;
            const double fm = loss_fn(t).item();
            values[i] = saved;
            const double numeric = (fp - fm) / (2.0 * opt.eps);
            const double err = grad_rel_err(analytic[t][i], numeric, opt.floor);
            ++result.checked;
            if (err > result.max_rel_err || result.worst.empty()) {
                result.max_rel_err = err;
                result.worst = inputs[t].name + "[" + std::to_string(i) + "]";
            }
        }
    }
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        inputs[t].tensor.set_requires_grad(previous[t]);
        inputs[t].tensor.zero_grad();
    }
    return result;
}

}  // namespace lrf
