#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sas/attention.hpp"
#include "sas/model.hpp"

// Test oracles: straight-line loop re-implementations with 64-bit
// accumulation. They read the same parameter structs but share no compute
// code with the production ops, so agreement is evidence rather than
// tautology.
namespace sas::verify {

struct OracleReport {
    std::string operation;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    std::int64_t worst_index = -1;
    bool pass = false;
};

// Full attention layer in double precision: base projections, head/feature
// expansion, causal attention, group-averaged output projection.
TensorD oracle_sas_forward(const TensorF& x, const AttentionConfig& cfg, SasParams<float>& p);

// Full transformer forward in double precision (embeddings, pre-norm blocks,
// GELU MLP, tied or untied head).
TensorD oracle_model_forward(const std::vector<std::int32_t>& tokens, int batch, int time,
                             ModelParams<float>& params, const ModelConfig& cfg);

// Elementwise comparison of a float result against a double oracle.
OracleReport compare_to_oracle(const std::string& operation, std::span<const float> got,
                               std::span<const double> want, double abs_tol);

}  // namespace sas::verify
