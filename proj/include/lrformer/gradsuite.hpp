#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lrformer/gradcheck.hpp"

namespace lrf {

struct SuiteOptions {
    std::uint64_t seed = 0;
    double tol = 1e-3;
    double eps = 1e-4;
    // Share of each micro-model parameter tensor that is perturbed.
    double model_fraction = 0.05;
    bool include_model = true;
    // Called after each check, e.g. for progress output.
    std::function<void(const struct SuiteEntry&)> on_result;
};

struct SuiteEntry {
    std::string name;
    GradCheckResult result;
    double seconds = 0;
    bool passed = false;
};

struct SuiteReport {
    std::vector<SuiteEntry> entries;
    double seconds = 0;

    bool passed() const;
    double max_rel_err() const;
};

// 64-bit finite-difference checks of every operator, the attention schemes,
// cross entropy, one basic block and the full micro segmentation model.
SuiteReport run_gradient_suite(const SuiteOptions& opt = {});

}  // namespace lrf
