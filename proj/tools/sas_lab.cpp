#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sas/checkpoint.hpp"
#include "sas/config_file.hpp"
#include "sas/evalbench.hpp"
#include "sas/training.hpp"

namespace {

namespace fs = std::filesystem;
using namespace sas;

void usage(std::FILE* to) {
    std::fprintf(to,
                 "usage: sas-lab <command> [--config FILE] [--key value ...]\n"
                 "\n"
                 "commands:\n"
                 "  train         train a model, writing run.csv and a checkpoint to out.dir\n"
                 "  eval          evaluate a checkpoint (eval.checkpoint) on the validation split\n"
                 "  sweep         run a sweep (sweep.axis/values/seeds) and summarise it\n"
                 "  audit-params  print the parameter breakdown for the configured model\n"
                 "  grad-check    finite-difference check of the configured model's gradients\n"
                 "  timing        per-step wall time and peak memory for the configured model\n"
                 "\n"
                 "keys mirror the config file (e.g. --train.seed 7 --attention.variant sas);\n"
                 "command-line values override file values.\n");
}

void write_resolved(const std::string& dir, const KvMap& kv) {
    fs::create_directories(dir);
    std::ofstream out(dir + "/config.resolved");
    if (!out) throw std::runtime_error("cannot write " + dir + "/config.resolved");
    out << canonical_config_text(kv);
}

int cmd_train(const ResolvedConfig& rc) {
    write_resolved(rc.out_dir, rc.kv);
    const TrainResult result = train_model(rc.model, rc.train, rc.corpus_path, rc.out_dir);
    std::printf("trained %d steps; final val loss %.6f (ppl %.6g)\n", rc.train.total_steps,
                result.final_val_loss, std::exp(result.final_val_loss));
    std::printf("run file:   %s/run.csv\n", rc.out_dir.c_str());
    std::printf("checkpoint: %s\n", result.checkpoint_path.c_str());
    return 0;
}

int cmd_eval(const ResolvedConfig& rc) {
    const std::string ckpt_path = kv_str(rc.kv, "eval.checkpoint");
    if (ckpt_path.empty()) throw ConfigError("eval.checkpoint: no checkpoint path given");
    LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
    DatasetView ds = DatasetView::load(rc.corpus_path, kv_double(rc.kv, "data.val_fraction"));
    Rng val_rng = Rng(rc.train.seed).derive(0x76616cu);
    std::vector<Batch> batches;
    for (int i = 0; i < rc.train.eval_batches; ++i)
        batches.push_back(sample_batch(ds, true, rc.train.batch_size, rc.train.seq_len, val_rng));
    const double loss = eval_loss(ckpt.params, ckpt.config, batches);
    std::printf("val loss %.9g ppl %.6g (%d batches of %dx%d)\n", loss, std::exp(loss), rc.train.eval_batches,
                rc.train.batch_size, rc.train.seq_len);
    return 0;
}

int cmd_sweep(const ResolvedConfig& rc) {
    const SweepSpec spec = sweep_from_kv(rc.kv, rc.model, rc.train);
    write_resolved(rc.out_dir + "/" + spec.name, rc.kv);
    const SweepResult result = run_sweep(spec, rc.corpus_path, rc.out_dir);
    std::printf("sweep '%s' over %s: %d run(s) executed, %d skipped (already complete)\n", spec.name.c_str(),
                sweep_axis_name(spec.axis), result.runs_executed, result.runs_skipped);
    for (const SweepRow& r : result.rows)
        if (r.seed == "median")
            std::printf("  %s=%s: median val loss %.6f (ppl %.6g)\n", sweep_axis_name(spec.axis),
                        r.axis_value.c_str(), r.final_loss, r.final_ppl);
    std::printf("summary: %s\n", result.summary_path.c_str());
    return 0;
}

int cmd_audit_params(const ResolvedConfig& rc) {
    const ParamAudit audit = audit_params(rc.model);
    std::fputs(format_param_audit(rc.model, audit).c_str(), stdout);
    return 0;
}

int cmd_grad_check(const ResolvedConfig& rc) {
    const double tol = kv_double(rc.kv, "gradcheck.tolerance");
    const verify::GradCheckResult result = grad_check(rc.model, rc.train.seed, tol);
    std::printf("%s: max rel err %.3g (tolerance %.3g) over %lld parameters; worst: %s\n",
                result.pass ? "PASS" : "FAIL", result.max_rel_err, result.tolerance,
                static_cast<long long>(result.params_checked), result.worst_param.c_str());
    return result.pass ? 0 : 1;
}

int cmd_timing(const ResolvedConfig& rc) {
    const int steps = static_cast<int>(kv_int(rc.kv, "timing.steps"));
    const TimingReport report = timing_report(rc.model, rc.train, steps);
    std::printf("median step time %.3f ms over %d steps (%d warmup excluded); peak rss %.1f MB\n",
                report.median_step_ms, report.measured_steps, report.warmup_steps, report.peak_rss_mb);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        usage(stderr);
        return 2;
    }
    const std::string command = argv[1];
    if (command == "-h" || command == "--help") {
        usage(stdout);
        return 0;
    }

    try {
        std::vector<std::string> args(argv + 2, argv + argc);
        KvMap file_kv;
        for (std::size_t i = 0; i < args.size(); ++i) {
            if (args[i] == "--config") {
                if (i + 1 >= args.size()) throw ConfigError("missing value after --config");
                file_kv = parse_config_file(args[i + 1]);
            }
        }
        const KvMap overrides = parse_cli_overrides(args);
        const ResolvedConfig rc = resolve_config(file_kv, overrides);

        if (command == "train") return cmd_train(rc);
        if (command == "eval") return cmd_eval(rc);
        if (command == "sweep") return cmd_sweep(rc);
        if (command == "audit-params") return cmd_audit_params(rc);
        if (command == "grad-check") return cmd_grad_check(rc);
        if (command == "timing") return cmd_timing(rc);
        std::fprintf(stderr, "unknown command: %s\n\n", command.c_str());
        usage(stderr);
        return 2;
    } catch (const sas::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
