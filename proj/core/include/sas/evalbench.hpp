#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sas/config_file.hpp"
#include "sas/model.hpp"
#include "sas/training.hpp"
#include "sas/verify/finite_diff.hpp"

namespace sas {

// Experiment drivers. Runs write out/<name>/<axis>=<value>/seed=<s>/run.csv;
// a summary.csv per sweep is always recomputed from the raw run files.

struct SweepSpec {
    enum class Axis { HeadCount, KernelSize, ExpansionRatio, Variant };
    Axis axis = Axis::Variant;
    std::vector<std::string> values;
    ModelConfig base_model;
    TrainConfig base_train;
    std::vector<std::uint64_t> seeds;
    std::string name = "sweep";
};

const char* sweep_axis_name(SweepSpec::Axis axis);
SweepSpec::Axis sweep_axis_from_name(const std::string& name);

// Config for one sweep value; throws ConfigError for invalid values and
// enforces the desk-scale bound (<= 4 layers, d_model <= 128).
ModelConfig apply_axis_value(const SweepSpec& spec, const std::string& value);

struct SweepRow {
    std::string axis_value;
    std::string seed;  // seed number, or "median" for the per-value summary row
    double final_loss = 0.0;
    double final_ppl = 0.0;
    std::int64_t params_total = 0;
    std::int64_t params_extra_w = 0;
    std::int64_t params_extra_b = 0;
    double wall_ms = 0.0;  // run total; median across seeds in the summary row
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::string summary_path;
    int runs_executed = 0;
    int runs_skipped = 0;  // (value, seed) pairs with an existing run.csv
};

// Validates every value before any run starts; skips completed (value, seed)
// pairs, so interrupted sweeps resume where they stopped.
SweepResult run_sweep(const SweepSpec& spec, const std::string& corpus_path, const std::string& out_root);

SweepSpec sweep_from_kv(const KvMap& kv, const ModelConfig& base_model, const TrainConfig& base_train);

struct VariantRow {
    std::string variant;
    std::uint64_t seed = 0;
    double final_loss = 0.0;
    double final_ppl = 0.0;
};

struct CompareResult {
    std::vector<VariantRow> rows;
    std::map<std::string, double> median_loss;  // per variant
    std::string csv_path;
};

// Trains every variant with every seed on identical data order and identical
// validation batches. All configs must agree on vocab and context.
CompareResult compare_variants(const std::vector<std::pair<std::string, ModelConfig>>& variants,
                               const TrainConfig& train_cfg, const std::vector<std::uint64_t>& seeds,
                               const std::string& corpus_path, const std::string& out_dir);

struct TimingReport {
    double median_step_ms = 0.0;
    double peak_rss_mb = 0.0;
    int measured_steps = 0;
    int warmup_steps = 0;
};

// Local wall-clock/memory numbers for one config (never compared against
// other machines' numbers).
TimingReport timing_report(const ModelConfig& cfg, const TrainConfig& train_cfg, int steps = 20);

// Gradient check on the given config (64-bit shadow); reports the worst
// parameter by relative error.
verify::GradCheckResult grad_check(const ModelConfig& cfg, std::uint64_t seed, double tolerance = 1e-4);

struct ParamAudit {
    ParamCounts counts;                            // enumerated from the arrays
    std::int64_t formula_extra_weights = 0;        // closed-form count, all layers
    std::int64_t formula_extra_biases = 0;
    double extra_weight_ratio = 0.0;               // extra weights / total
    std::map<std::string, std::int64_t> by_group;  // verify::enumerate_params
};

ParamAudit audit_params(const ModelConfig& cfg);
std::string format_param_audit(const ModelConfig& cfg, const ParamAudit& audit);

// ~n_bytes of deterministic synthetic text with word-, sentence- and
// paragraph-level structure (recurring names give attention something to
// copy). Stands in for a real corpus in tests and smoke runs.
std::vector<std::uint8_t> synthetic_corpus(std::size_t n_bytes, std::uint64_t seed);
void write_synthetic_corpus(const std::string& path, std::size_t n_bytes, std::uint64_t seed);

double median(std::vector<double> values);

}  // namespace sas
