#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lrformer/tensor.hpp"

namespace lrf {

struct GradCheckOptions {
    double eps = 1e-4;
    // Fraction of scalar entries checked per tensor (at least one entry).
    double sample_fraction = 1.0;
    std::uint64_t seed = 0;
    // Denominator floor for the relative error.
    double floor = 1e-6;
};

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::string worst;  // "<tensor name>[index]" of the largest error
};

// |a - b| / max(|a|, |b|, floor)
double grad_rel_err(double analytic, double numeric, double floor);

struct NamedTensor64 {
    std::string name;
    Tensor64 tensor;
};

// Compares reverse-mode gradients of loss_fn() with central differences for
// every tensor in inputs. loss_fn must rebuild the graph from scratch each
// call and return a scalar.
GradCheckResult check_gradients(std::vector<NamedTensor64> inputs, const std::function<Tensor64()>& loss_fn,
                                const GradCheckOptions& opt = {});

// Same check, but loss_fn is told which input was perturbed (nullopt for the
// unperturbed pass that feeds backward), so it can reuse cached work.
GradCheckResult check_gradients_indexed(std::vector<NamedTensor64> inputs,
                                        const std::function<Tensor64(std::optional<std::size_t>)>& loss_fn,
                                        const GradCheckOptions& opt = {});

}  // namespace lrf
