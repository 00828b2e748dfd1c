#include "doctest.h"

#include <filesystem>

#include "sas/evalbench.hpp"
#include "test_util.hpp"

using namespace sas;
namespace fs = std::filesystem;

namespace {

ModelConfig sweep_base_cfg() {
    ModelConfig cfg;
    cfg.vocab_size = 256;
    cfg.n_layers = 1;
    cfg.d_model = 16;
    cfg.context_len = 32;
    cfg.attention.d_model = 16;
    cfg.attention.n_heads = 2;
    cfg.attention.head_dim = 8;
    cfg.attention.kv_groups = 2;
    cfg.attention.sim_heads = 4;
    cfg.attention.sim_head_dim = 12;
    cfg.attention.kernel = 1;
    cfg.attention.expansion_enabled = false;
    cfg.attention.base_variant = BaseVariant::MHA;
    return cfg;
}

TrainConfig sweep_train_cfg() {
    TrainConfig t;
    t.total_steps = 12;
    t.warmup_steps = 2;
    t.batch_size = 2;
    t.seq_len = 16;
    t.eval_interval = 6;
    t.eval_batches = 2;
    return t;
}

std::string make_corpus(const std::string& dir) {
    const std::string path = dir + "/corpus.txt";
    write_synthetic_corpus(path, 96 * 1024, 17);
    return path;
}

}  // namespace

TEST_CASE("synthetic corpus is deterministic and sized exactly") {
    const auto a = synthetic_corpus(10000, 3);
    const auto b = synthetic_corpus(10000, 3);
    const auto c = synthetic_corpus(10000, 4);
    CHECK(a.size() == 10000);
    CHECK(a == b);
    CHECK(a != c);
    // Plain printable text plus newlines.
    for (std::uint8_t ch : a) CHECK((ch == '\n' || (ch >= 32 && ch < 127)));
}

TEST_CASE("median") {
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
    CHECK_THROWS_AS(median({}), UsageError);
}

TEST_CASE("apply_axis_value covers every axis and rejects bad values") {
    SweepSpec spec;
    spec.base_model = sweep_base_cfg();

    spec.axis = SweepSpec::Axis::HeadCount;
    ModelConfig heads = apply_axis_value(spec, "4");
    CHECK(heads.attention.n_heads == 4);
    CHECK(heads.attention.head_dim == 4);
    CHECK_THROWS_AS(apply_axis_value(spec, "3"), ConfigError);   // 3 does not divide 16
    CHECK_THROWS_AS(apply_axis_value(spec, "x"), ConfigError);

    spec.axis = SweepSpec::Axis::KernelSize;
    CHECK_THROWS_AS(apply_axis_value(spec, "3"), ConfigError);  // base has expansion off
    spec.base_model.attention.expansion_enabled = true;
    CHECK(apply_axis_value(spec, "3").attention.kernel == 3);
    CHECK_THROWS_AS(apply_axis_value(spec, "2"), ConfigError);  // even kernel

    spec.base_model = sweep_base_cfg();
    spec.axis = SweepSpec::Axis::ExpansionRatio;
    ModelConfig ratio = apply_axis_value(spec, "3");
    CHECK(ratio.attention.expansion_enabled);
    CHECK(ratio.attention.sim_heads == 6);

    spec.axis = SweepSpec::Axis::Variant;
    CHECK(apply_axis_value(spec, "mqa").attention.kv_groups == 1);
    CHECK(apply_axis_value(spec, "sas").attention.expansion_enabled);
    CHECK(apply_axis_value(spec, "gqa").attention.kv_groups == 1);  // derived n_heads/2
    CHECK_THROWS_AS(apply_axis_value(spec, "nope"), ConfigError);

    // Desk-scale bound enforced before any run.
    SweepSpec big = spec;
    big.base_model.d_model = 512;
    big.base_model.attention.d_model = 512;
    big.base_model.attention.head_dim = 256;
    big.values = {"mha"};
    big.seeds = {1};
    CHECK_THROWS_AS(run_sweep(big, "unused", "unused"), ConfigError);
}

TEST_CASE("run_sweep writes per-run files, a summary, and resumes") {
    const std::string dir = testutil::scratch_dir("sweep");
    const std::string corpus = make_corpus(dir);

    SweepSpec spec;
    spec.axis = SweepSpec::Axis::HeadCount;
    spec.values = {"1", "2", "4"};
    spec.seeds = {1, 2};
    spec.base_model = sweep_base_cfg();
    spec.base_train = sweep_train_cfg();
    spec.name = "heads";

    SweepResult first = run_sweep(spec, corpus, dir + "/out");
    CHECK(first.runs_executed == 6);
    CHECK(first.runs_skipped == 0);
    // 3 values x (2 seed rows + 1 median row).
    CHECK(first.rows.size() == 9);
    for (const std::string& v : spec.values)
        for (std::uint64_t s : spec.seeds)
            CHECK(fs::exists(dir + "/out/heads/head_count=" + v + "/seed=" + std::to_string(s) + "/run.csv"));
    CHECK(fs::exists(first.summary_path));

    const std::string run_before = testutil::read_file(dir + "/out/heads/head_count=2/seed=1/run.csv");
    const std::string summary_before = testutil::read_file(first.summary_path);

    // A second invocation skips every completed pair and recomputes the same
    // summary from the raw files.
    SweepResult second = run_sweep(spec, corpus, dir + "/out");
    CHECK(second.runs_executed == 0);
    CHECK(second.runs_skipped == 6);
    CHECK(testutil::read_file(dir + "/out/heads/head_count=2/seed=1/run.csv") == run_before);
    CHECK(testutil::read_file(second.summary_path) == summary_before);

    // Summary medians agree with a recomputation from the row data.
    for (const std::string& v : spec.values) {
        std::vector<double> losses;
        const SweepRow* med = nullptr;
        for (const SweepRow& r : second.rows) {
            if (r.axis_value != v) continue;
            if (r.seed == "median")
                med = &r;
            else
                losses.push_back(r.final_loss);
        }
        REQUIRE(med != nullptr);
        CHECK(med->final_loss == median(losses));
    }
}

TEST_CASE("variant sweep: the degenerate expansion trains identically to mha") {
    const std::string dir = testutil::scratch_dir("sweep_identity");
    const std::string corpus = make_corpus(dir);

    SweepSpec spec;
    spec.axis = SweepSpec::Axis::Variant;
    spec.values = {"mha", "sas-identity"};
    spec.seeds = {3};
    spec.base_model = sweep_base_cfg();
    spec.base_train = sweep_train_cfg();
    spec.name = "variants";

    run_sweep(spec, corpus, dir + "/out");
    const std::string a = testutil::read_file(dir + "/out/variants/variant=mha/seed=3/run.csv");
    const std::string b = testutil::read_file(dir + "/out/variants/variant=sas-identity/seed=3/run.csv");
    // Identical loss trajectories; only wall_ms may differ.
    auto strip_wall = [](const std::string& csv) {
        std::string out;
        for (std::size_t pos = 0; pos < csv.size();) {
            std::size_t nl = csv.find('\n', pos);
            if (nl == std::string::npos) nl = csv.size();
            const std::string line = csv.substr(pos, nl - pos);
            out += line.substr(0, line.rfind(','));
            out += '\n';
            pos = nl + 1;
        }
        return out;
    };
    CHECK(strip_wall(a) == strip_wall(b));
}

TEST_CASE("kernel sweep parameter columns scale linearly in k") {
    SweepSpec spec;
    spec.base_model = sweep_base_cfg();
    spec.base_model.attention.expansion_enabled = true;
    spec.axis = SweepSpec::Axis::KernelSize;

    const ModelConfig k1 = apply_axis_value(spec, "1");
    const ModelConfig k3 = apply_axis_value(spec, "3");
    const ParamAudit a1 = audit_params(k1);
    const ParamAudit a3 = audit_params(k3);
    const AttentionConfig& at = k1.attention;
    const std::int64_t conv_terms =
        (static_cast<std::int64_t>(at.n_heads) * at.sim_heads + static_cast<std::int64_t>(at.sim_heads) * at.sim_heads) *
        3 * k1.n_layers;
    CHECK(a3.counts.attention_extra_weights - a1.counts.attention_extra_weights == 2 * conv_terms);
    CHECK(a1.counts.attention_extra_weights == a1.formula_extra_weights);
    CHECK(a3.counts.attention_extra_weights == a3.formula_extra_weights);
}

TEST_CASE("compare_variants is deterministic across identical configs") {
    const std::string dir = testutil::scratch_dir("compare");
    const std::string corpus = make_corpus(dir);

    ModelConfig cfg = sweep_base_cfg();
    TrainConfig tcfg = sweep_train_cfg();
    CompareResult result = compare_variants({{"mha-a", cfg}, {"mha-b", cfg}}, tcfg, {1, 2}, corpus, dir + "/out");
    REQUIRE(result.rows.size() == 4);
    for (std::uint64_t seed : {1ull, 2ull}) {
        double a = 0, b = 0;
        for (const VariantRow& r : result.rows) {
            if (r.variant == "mha-a" && r.seed == seed) a = r.final_loss;
            if (r.variant == "mha-b" && r.seed == seed) b = r.final_loss;
        }
        CHECK(a == b);
    }
    CHECK(result.median_loss.at("mha-a") == result.median_loss.at("mha-b"));
    CHECK(fs::exists(result.csv_path));

    ModelConfig other = cfg;
    other.vocab_size = 128;
    CHECK_THROWS_AS(compare_variants({{"a", cfg}, {"b", other}}, tcfg, {1}, corpus, dir + "/out2"), ConfigError);
}

TEST_CASE("timing report measures steps and memory") {
    ModelConfig cfg = sweep_base_cfg();
    TrainConfig tcfg = sweep_train_cfg();
    const TimingReport r = timing_report(cfg, tcfg, 6);
    CHECK(r.median_step_ms > 0.0);
    CHECK(r.measured_steps == 3);
    CHECK(r.peak_rss_mb > 0.0);
}

TEST_CASE("grad_check wrapper passes on a tiny config") {
    ModelConfig cfg = sweep_base_cfg();
    cfg.vocab_size = 16;
    cfg.attention.expansion_enabled = true;
    const auto result = grad_check(cfg, 13, 1e-4);
    INFO("worst ", result.worst_param, " rel ", result.max_rel_err);
    CHECK(result.pass);
}

TEST_CASE("audit_params on the flagship configuration") {
    ModelConfig cfg;
    cfg.vocab_size = 50257;
    cfg.n_layers = 12;
    cfg.d_model = 768;
    cfg.context_len = 1024;
    cfg.attention.d_model = 768;
    cfg.attention.n_heads = 12;
    cfg.attention.head_dim = 64;
    cfg.attention.sim_heads = 36;
    cfg.attention.sim_head_dim = 96;
    cfg.attention.kernel = 1;
    cfg.attention.kv_groups = 12;
    const ParamAudit audit = audit_params(cfg);
    CHECK(audit.counts.attention_extra_weights == 430848);
    CHECK(audit.formula_extra_weights == 430848);
    CHECK(audit.extra_weight_ratio < 0.004);
    const std::string text = format_param_audit(cfg, audit);
    CHECK(text.find("430848") != std::string::npos);
}
