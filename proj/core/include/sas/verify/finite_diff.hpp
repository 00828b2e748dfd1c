#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sas/model.hpp"

namespace sas::verify {

// Central-difference gradient of loss() with respect to the entries of x,
// computed at 64-bit precision. x is restored exactly after each probe.
std::vector<double> finite_diff(const std::function<double()>& loss, std::span<double> x, double h = 1e-5);

struct GradCheckResult {
    bool pass = false;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::string worst_param;
    double tolerance = 0.0;
    std::int64_t params_checked = 0;
};

// Relative error with an absolute floor: |a-b| / max(|a|, |b|, floor).
// Entries smaller than the floor are compared on the floor's absolute scale.
double rel_err(double a, double b, double floor = 1e-3);

// End-to-end gradient check: the model graph is instantiated at double
// precision (the 64-bit shadow), its recorded backward pass is compared
// against central differences of the same double forward on a fixed batch.
GradCheckResult model_grad_check(const ModelConfig& cfg, std::uint64_t seed, double tolerance = 1e-4,
                                 int batch = 1, int time = 4, double h = 1e-5);

// Element counts keyed by structural pattern (base attention, expansion
// stages, embeddings, mlp, norms); the enumeration side of parameter audits.
std::map<std::string, std::int64_t> enumerate_params(ModelParams<float>& params);

}  // namespace sas::verify
