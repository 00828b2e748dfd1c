#include "sas/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/resource.h>

#include "sas/ops.hpp"

namespace sas {

namespace fs = std::filesystem;

namespace {

long long parse_int_value(const std::string& axis, const std::string& value) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("sweep." + axis + ": expected an integer value, got '" + value + "'");
    }
}

void check_desk_scale(const ModelConfig& cfg) {
    if (cfg.n_layers > 4 || cfg.d_model > 128)
        throw ConfigError("sweep configs are capped at 4 layers and d_model 128, got " +
                          std::to_string(cfg.n_layers) + " layers, d_model " + std::to_string(cfg.d_model));
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

struct FinalVal {
    double loss = 0.0, ppl = 0.0, wall_ms = 0.0;
    bool found = false;
};

FinalVal read_final_val_row(const std::string& run_csv) {
    std::ifstream in(run_csv);
    if (!in) throw std::runtime_error("cannot open run file: " + run_csv);
    FinalVal fv;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        const auto cols = split_csv_line(line);
        if (cols.size() < 7 || cols[1] != "val") continue;
        fv.loss = std::stod(cols[2]);
        fv.ppl = std::stod(cols[3]);
        fv.wall_ms = std::stod(cols[6]);
        fv.found = true;
    }
    if (!fv.found) throw std::runtime_error("no validation rows in " + run_csv);
    return fv;
}

std::string sweep_row_csv(const SweepRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,%.6g,%lld,%lld,%lld,%.3f", r.axis_value.c_str(), r.seed.c_str(),
                  r.final_loss, r.final_ppl, static_cast<long long>(r.params_total),
                  static_cast<long long>(r.params_extra_w), static_cast<long long>(r.params_extra_b), r.wall_ms);
    return buf;
}

double peak_rss_mb() {
    std::ifstream in("/proc/self/status");
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("VmHWM:", 0) == 0) {
            long long kb = 0;
            std::sscanf(line.c_str(), "VmHWM: %lld", &kb);
            return static_cast<double>(kb) / 1024.0;
        }
    }
    rusage ru{};
    getrusage(RUSAGE_SELF, &ru);
    return static_cast<double>(ru.ru_maxrss) / 1024.0;
}

}  // namespace

double median(std::vector<double> values) {
    if (values.empty()) throw UsageError("median of an empty list");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

const char* sweep_axis_name(SweepSpec::Axis axis) {
    switch (axis) {
        case SweepSpec::Axis::HeadCount: return "head_count";
        case SweepSpec::Axis::KernelSize: return "kernel_size";
        case SweepSpec::Axis::ExpansionRatio: return "expansion_ratio";
        case SweepSpec::Axis::Variant: return "variant";
    }
    return "?";
}

SweepSpec::Axis sweep_axis_from_name(const std::string& name) {
    if (name == "head_count") return SweepSpec::Axis::HeadCount;
    if (name == "kernel_size") return SweepSpec::Axis::KernelSize;
    if (name == "expansion_ratio") return SweepSpec::Axis::ExpansionRatio;
    if (name == "variant") return SweepSpec::Axis::Variant;
    throw ConfigError("sweep.axis: expected head_count|kernel_size|expansion_ratio|variant, got '" + name + "'");
}

ModelConfig apply_axis_value(const SweepSpec& spec, const std::string& value) {
    ModelConfig cfg = spec.base_model;
    AttentionConfig& a = cfg.attention;
    switch (spec.axis) {
        case SweepSpec::Axis::HeadCount: {
            const int heads = static_cast<int>(parse_int_value("head_count", value));
            if (heads < 1 || cfg.d_model % heads != 0)
                throw ConfigError("sweep.head_count: " + value + " does not divide d_model " +
                                  std::to_string(cfg.d_model));
            const int old_heads = a.n_heads, old_dim = a.head_dim;
            a.n_heads = heads;
            a.head_dim = cfg.d_model / heads;
            switch (a.base_variant) {
                case BaseVariant::MHA: a.kv_groups = heads; break;
                case BaseVariant::MQA: a.kv_groups = 1; break;
                case BaseVariant::GQA:
                    if (heads % a.kv_groups != 0)
                        throw ConfigError("sweep.head_count: kv_groups " + std::to_string(a.kv_groups) +
                                          " does not divide " + value);
                    break;
            }
            if (a.expansion_enabled) {
                // Preserve the expansion ratios of the base config.
                a.sim_heads = heads * (spec.base_model.attention.sim_heads / old_heads);
                a.sim_head_dim = std::max(a.head_dim, a.head_dim * spec.base_model.attention.sim_head_dim / old_dim);
            }
            break;
        }
        case SweepSpec::Axis::KernelSize: {
            const int k = static_cast<int>(parse_int_value("kernel_size", value));
            if (!a.expansion_enabled)
                throw ConfigError("sweep.kernel_size requires an expansion-enabled base variant");
            a.kernel = k;
            break;
        }
        case SweepSpec::Axis::ExpansionRatio: {
            const int ratio = static_cast<int>(parse_int_value("expansion_ratio", value));
            if (ratio < 1) throw ConfigError("sweep.expansion_ratio: value must be >= 1, got " + value);
            a.expansion_enabled = true;
            a.sim_heads = a.n_heads * ratio;
            if (a.sim_head_dim < a.head_dim) a.sim_head_dim = a.head_dim;
            break;
        }
        case SweepSpec::Axis::Variant: {
            KvMap kv = model_config_to_kv(spec.base_model);
            // "sas-identity" labels the degenerate expansion (sim == base,
            // k = 1, second stages zero), which is exactly the plain base
            // attention path; it trains as mha but keeps its own run label.
            kv["attention.variant"] = value == "sas-identity" ? "mha" : value;
            const bool gqa = value == "gqa" || value == "sas-gqa";
            int groups = a.kv_groups;
            if (value == "mha" || value == "sas" || value == "sas-identity")
                groups = a.n_heads;
            else if (value == "mqa" || value == "sas-mqa")
                groups = 1;
            else if (gqa && (groups >= a.n_heads || groups < 1 || a.n_heads % groups != 0)) {
                if (a.n_heads % 2 != 0)
                    throw ConfigError("sweep.variant: cannot derive kv_groups for gqa with n_heads " +
                                      std::to_string(a.n_heads));
                groups = a.n_heads / 2;
            }
            kv["attention.kv_groups"] = std::to_string(groups);
            return model_config_from_kv(kv);
        }
    }
    cfg.validate();
    return cfg;
}

SweepSpec sweep_from_kv(const KvMap& kv, const ModelConfig& base_model, const TrainConfig& base_train) {
    SweepSpec spec;
    spec.name = kv_str(kv, "sweep.name");
    spec.axis = sweep_axis_from_name(kv_str(kv, "sweep.axis"));
    spec.values = split_list(kv_str(kv, "sweep.values"));
    for (const std::string& s : split_list(kv_str(kv, "sweep.seeds")))
        spec.seeds.push_back(static_cast<std::uint64_t>(parse_int_value("seeds", s)));
    spec.base_model = base_model;
    spec.base_train = base_train;
    if (spec.values.empty()) throw ConfigError("sweep.values is empty");
    if (spec.seeds.empty()) throw ConfigError("sweep.seeds is empty");
    return spec;
}

SweepResult run_sweep(const SweepSpec& spec, const std::string& corpus_path, const std::string& out_root) {
    if (spec.values.empty()) throw ConfigError("sweep has no values");
    if (spec.seeds.empty()) throw ConfigError("sweep has no seeds");

    // Every value must produce a valid config before any run starts.
    std::vector<ModelConfig> configs;
    configs.reserve(spec.values.size());
    for (const std::string& v : spec.values) {
        ModelConfig cfg = apply_axis_value(spec, v);
        check_desk_scale(cfg);
        configs.push_back(cfg);
    }

    const std::string axis = sweep_axis_name(spec.axis);
    const std::string sweep_dir = out_root + "/" + spec.name;
    SweepResult result;

    for (std::size_t vi = 0; vi < spec.values.size(); ++vi) {
        for (std::uint64_t seed : spec.seeds) {
            const std::string run_dir =
                sweep_dir + "/" + axis + "=" + spec.values[vi] + "/seed=" + std::to_string(seed);
            if (fs::exists(run_dir + "/run.csv")) {
                ++result.runs_skipped;
                continue;
            }
            TrainConfig tc = spec.base_train;
            tc.seed = seed;
            train_model(configs[vi], tc, corpus_path, run_dir);
            ++result.runs_executed;
        }
    }

    // Summary rows are always recomputed from the raw run files.
    for (std::size_t vi = 0; vi < spec.values.size(); ++vi) {
        const ParamAudit audit = audit_params(configs[vi]);
        std::vector<double> losses, ppls, walls;
        for (std::uint64_t seed : spec.seeds) {
            const std::string run_csv =
                sweep_dir + "/" + axis + "=" + spec.values[vi] + "/seed=" + std::to_string(seed) + "/run.csv";
            const FinalVal fv = read_final_val_row(run_csv);
            SweepRow row{spec.values[vi],
                         std::to_string(seed),
                         fv.loss,
                         fv.ppl,
                         audit.counts.total,
                         audit.counts.attention_extra_weights,
                         audit.counts.attention_extra_biases,
                         fv.wall_ms};
            result.rows.push_back(row);
            losses.push_back(fv.loss);
            ppls.push_back(fv.ppl);
            walls.push_back(fv.wall_ms);
        }
        SweepRow med{spec.values[vi],
                     "median",
                     median(losses),
                     median(ppls),
                     audit.counts.total,
                     audit.counts.attention_extra_weights,
                     audit.counts.attention_extra_biases,
                     median(walls)};
        result.rows.push_back(med);
    }

    result.summary_path = sweep_dir + "/summary.csv";
    std::ofstream out(result.summary_path);
    if (!out) throw std::runtime_error("cannot write " + result.summary_path);
    out << "axis_value,seed,final_loss,final_ppl,params_total,params_extra_w,params_extra_b,wall_ms_median\n";
    for (const SweepRow& r : result.rows) out << sweep_row_csv(r) << "\n";
    return result;
}

CompareResult compare_variants(const std::vector<std::pair<std::string, ModelConfig>>& variants,
                               const TrainConfig& train_cfg, const std::vector<std::uint64_t>& seeds,
                               const std::string& corpus_path, const std::string& out_dir) {
    if (variants.empty()) throw ConfigError("compare_variants: no variants given");
    if (seeds.empty()) throw ConfigError("compare_variants: no seeds given");
    for (const auto& [name, cfg] : variants) {
        if (cfg.vocab_size != variants.front().second.vocab_size ||
            cfg.context_len != variants.front().second.context_len)
            throw ConfigError("compare_variants: variant '" + name +
                              "' disagrees on vocab_size/context_len with '" + variants.front().first + "'");
    }

    CompareResult result;
    std::map<std::string, std::vector<double>> losses;
    for (const auto& [name, cfg] : variants) {
        for (std::uint64_t seed : seeds) {
            TrainConfig tc = train_cfg;
            tc.seed = seed;
            const std::string run_dir = out_dir + "/" + name + "/seed=" + std::to_string(seed);
            const TrainResult tr = train_model(cfg, tc, corpus_path, run_dir);
            VariantRow row{name, seed, tr.final_val_loss, std::exp(tr.final_val_loss)};
            result.rows.push_back(row);
            losses[name].push_back(tr.final_val_loss);
        }
    }
    for (auto& [name, ls] : losses) result.median_loss[name] = median(ls);

    result.csv_path = out_dir + "/compare.csv";
    fs::create_directories(out_dir);
    std::ofstream out(result.csv_path);
    if (!out) throw std::runtime_error("cannot write " + result.csv_path);
    out << "variant,seed,final_loss,final_ppl\n";
    char buf[160];
    for (const VariantRow& r : result.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%llu,%.9g,%.6g", r.variant.c_str(),
                      static_cast<unsigned long long>(r.seed), r.final_loss, r.final_ppl);
        out << buf << "\n";
    }
    for (const auto& [name, ml] : result.median_loss) {
        std::snprintf(buf, sizeof(buf), "%s,median,%.9g,%.6g", name.c_str(), ml, std::exp(ml));
        out << buf << "\n";
    }
    return result;
}

TimingReport timing_report(const ModelConfig& cfg, const TrainConfig& train_cfg, int steps) {
    if (steps < 2) throw ConfigError("timing: need at least 2 steps");
    cfg.validate();
    ModelParams<float> params = init_model_params(cfg, train_cfg.seed);
    AdamW opt(params, train_cfg);
    Rng rng = Rng(train_cfg.seed).derive(0x74696du);

    const int batch = train_cfg.batch_size;
    const int time = std::min(train_cfg.seq_len, cfg.context_len);
    const std::size_t n = static_cast<std::size_t>(batch) * static_cast<std::size_t>(time);

    TimingReport report;
    report.warmup_steps = std::min(3, steps - 1);
    std::vector<double> ms;
    for (int s = 0; s < steps; ++s) {
        std::vector<std::int32_t> tokens(n), targets(n);
        for (auto& t : tokens) t = static_cast<std::int32_t>(rng.uniform_below(static_cast<std::uint64_t>(cfg.vocab_size)));
        for (auto& t : targets) t = static_cast<std::int32_t>(rng.uniform_below(static_cast<std::uint64_t>(cfg.vocab_size)));
        const auto t0 = std::chrono::steady_clock::now();
        TapeF tape;
        TensorF logits = model_forward(tokens, batch, time, params, cfg, &tape);
        TensorF loss = cross_entropy(logits, targets, &tape);
        params.zero_grad();
        tape.backward(loss);
        clip_grad_norm(params, static_cast<double>(train_cfg.clip_norm));
        opt.step(cosine_lr(s + 1, train_cfg));
        const auto t1 = std::chrono::steady_clock::now();
        if (s >= report.warmup_steps) ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    report.measured_steps = static_cast<int>(ms.size());
    report.median_step_ms = median(ms);
    report.peak_rss_mb = peak_rss_mb();
    return report;
}

verify::GradCheckResult grad_check(const ModelConfig& cfg, std::uint64_t seed, double tolerance) {
    const int time = std::min(4, cfg.context_len);
    return verify::model_grad_check(cfg, seed, tolerance, 2, time);
}

ParamAudit audit_params(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams<float> params = make_model_params<float>(cfg);
    ParamAudit audit;
    audit.counts = count_params(params);
    audit.formula_extra_weights = extra_param_count(cfg.attention) * cfg.n_layers;
    audit.formula_extra_biases = extra_bias_count(cfg.attention) * cfg.n_layers;
    audit.extra_weight_ratio = audit.counts.total > 0 ? static_cast<double>(audit.counts.attention_extra_weights) /
                                                            static_cast<double>(audit.counts.total)
                                                      : 0.0;
    audit.by_group = verify::enumerate_params(params);
    return audit;
}

std::string format_param_audit(const ModelConfig& cfg, const ParamAudit& a) {
    char buf[256];
    std::string out;
    const AttentionConfig& at = cfg.attention;
    std::snprintf(buf, sizeof(buf), "config: %d layers, d_model %d, heads %d->%d, head dim %d->%d, kernel %d\n",
                  cfg.n_layers, cfg.d_model, at.n_heads, at.expansion_enabled ? at.sim_heads : at.n_heads,
                  at.head_dim, at.expansion_enabled ? at.sim_head_dim : at.head_dim, at.kernel);
    out += buf;
    std::snprintf(buf, sizeof(buf), "total parameters:        %lld\n", static_cast<long long>(a.counts.total));
    out += buf;
    std::snprintf(buf, sizeof(buf), "expansion extra weights: %lld (formula %lld, %.4f%% of total)\n",
                  static_cast<long long>(a.counts.attention_extra_weights),
                  static_cast<long long>(a.formula_extra_weights), 100.0 * a.extra_weight_ratio);
    out += buf;
    std::snprintf(buf, sizeof(buf), "expansion extra biases:  %lld (formula %lld)\n",
                  static_cast<long long>(a.counts.attention_extra_biases),
                  static_cast<long long>(a.formula_extra_biases));
    out += buf;
    out += "by group:\n";
    for (const auto& [name, count] : a.by_group) {
        std::snprintf(buf, sizeof(buf), "  %-26s %lld\n", name.c_str(), static_cast<long long>(count));
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

namespace {

const char* kNames[] = {"Alba",  "Boris",  "Cleo",   "Doran",  "Edda",   "Finn",   "Greta",  "Hugo",
                        "Iris",  "Jonas",  "Kira",   "Lars",   "Mina",   "Nils",   "Olga",   "Piotr",
                        "Quin",  "Rosa",   "Sven",   "Tilda",  "Ursa",   "Vera",   "Wim",    "Yara",
                        "Anselm", "Beatrix", "Casimir", "Delia", "Ernest", "Fleur", "Gustav", "Hanne",
                        "Ivo",   "Jolanta", "Konrad", "Ludmila", "Matteo", "Nadia", "Otto",   "Petra",
                        "Rafael", "Sigrid", "Tomas",  "Una",    "Viggo",  "Wanda",  "Xenia",  "Zofia"};
const char* kNouns[] = {"river",    "market",  "lantern",     "ledger",   "garden",   "harbor",   "mill",
                        "archive",  "bridge",  "orchard",     "workshop", "tower",    "library",  "meadow",
                        "quarry",   "cellar",  "observatory", "forge",    "granary",  "canal",
                        "aqueduct", "belfry",  "causeway",    "dockyard", "esplanade", "fountain", "gatehouse",
                        "inn",      "jetty",   "kiln",        "lockhouse", "monument", "nursery",  "pavilion",
                        "reservoir", "stable", "terrace",     "viaduct",  "well",     "yard"};
const char* kVerbs[] = {"measured",  "repaired",  "visited",   "described", "sketched",  "counted",   "mapped",
                        "traded",    "recorded",  "inspected", "restored",  "surveyed",  "catalogued", "watched",
                        "opened",    "closed",    "crossed",   "cleaned",   "painted",   "labelled",
                        "auctioned", "braced",    "charted",   "drained",   "enlarged",  "fenced",    "guarded",
                        "insured",   "leased",    "mortgaged", "numbered",  "patrolled", "rebuilt",   "shuttered",
                        "tarred",    "unlocked",  "valued",    "whitewashed", "widened", "winterised"};
const char* kAdjectives[] = {"old",    "quiet",   "narrow",  "bright",  "dusty",   "cold",    "broad",  "green",
                             "hollow", "distant", "crooked", "pale",    "heavy",   "thin",    "warm",   "gray",
                             "brick",  "derelict", "flooded", "gilded", "leaning", "mossy",   "roofless", "slate",
                             "sunken", "timbered", "vaulted", "walled", "weathered", "windswept"};
const char* kMonths[] = {"January", "February", "March",     "April",   "May",      "June",
                         "July",    "August",   "September", "October", "November", "December"};

template <std::size_t N>
const char* pick(Rng& rng, const char* (&pool)[N]) {
    return pool[rng.uniform_below(N)];
}

}  // namespace

std::vector<std::uint8_t> synthetic_corpus(std::size_t n_bytes, std::uint64_t seed) {
    Rng rng = Rng(seed).derive(0x636f7270u);
    std::string text;
    text.reserve(n_bytes + 512);
    while (text.size() < n_bytes) {
        // A paragraph reuses a small cast of names and one place, so earlier
        // tokens predict later ones within an attention window.
        const char* cast[3] = {pick(rng, kNames), pick(rng, kNames), pick(rng, kNames)};
        const char* place = pick(rng, kNouns);
        const int sentences = 3 + static_cast<int>(rng.uniform_below(5));
        for (int s = 0; s < sentences; ++s) {
            const char* a = cast[rng.uniform_below(3)];
            const char* b = cast[rng.uniform_below(3)];
            switch (rng.uniform_below(8)) {
                case 0:
                    text += a;
                    text += " ";
                    text += pick(rng, kVerbs);
                    text += " the ";
                    text += pick(rng, kAdjectives);
                    text += " ";
                    text += pick(rng, kNouns);
                    text += ".";
                    break;
                case 1:
                    text += a;
                    text += " and ";
                    text += b;
                    text += " ";
                    text += pick(rng, kVerbs);
                    text += " the ";
                    text += pick(rng, kNouns);
                    text += " near the ";
                    text += place;
                    text += ".";
                    break;
                case 2:
                    text += "When ";
                    text += a;
                    text += " ";
                    text += pick(rng, kVerbs);
                    text += " the ";
                    text += place;
                    text += ", ";
                    text += b;
                    text += " ";
                    text += pick(rng, kVerbs);
                    text += " the ";
                    text += pick(rng, kAdjectives);
                    text += " ";
                    text += pick(rng, kNouns);
                    text += ".";
                    break;
                case 3:
                    text += "The ";
                    text += pick(rng, kNouns);
                    text += " that ";
                    text += a;
                    text += " ";
                    text += pick(rng, kVerbs);
                    text += " was ";
                    text += pick(rng, kAdjectives);
                    text += ", ";
                    text += pick(rng, kAdjectives);
                    text += " and ";
                    text += pick(rng, kAdjectives);
                    text += ".";
                    break;
                case 4:
                    text += a;
                    text += " counted ";
                    text += std::to_string(2 + rng.uniform_below(96));
                    text += " ";
                    text += pick(rng, kNouns);
                    text += "s and ";
                    text += std::to_string(2 + rng.uniform_below(96));
                    text += " ";
                    text += pick(rng, kNouns);
                    text += "s.";
                    break;
                case 5:
                    text += "On ";
                    text += std::to_string(1 + rng.uniform_below(28));
                    text += " ";
                    text += pick(rng, kMonths);
                    text += " 18";
                    text += std::to_string(10 + rng.uniform_below(90));
                    text += ", ";
                    text += a;
                    text += " ";
                    text += pick(rng, kVerbs);
                    text += " the ";
                    text += place;
                    text += ".";
                    break;
                case 6:
                    text += "\"The ";
                    text += place;
                    text += " is ";
                    text += pick(rng, kAdjectives);
                    text += " again,\" said ";
                    text += a;
                    text += " to ";
                    text += b;
                    text += ".";
                    break;
                default:
                    text += "Between the ";
                    text += pick(rng, kNouns);
                    text += " and the ";
                    text += pick(rng, kNouns);
                    text += ", ";
                    text += a;
                    text += " ";
                    text += pick(rng, kVerbs);
                    text += " a ";
                    text += pick(rng, kAdjectives);
                    text += " ";
                    text += pick(rng, kNouns);
                    text += " (";
                    text += pick(rng, kAdjectives);
                    text += " since 18";
                    text += std::to_string(10 + rng.uniform_below(90));
                    text += ").";
                    break;
            }
            text += (s + 1 == sentences) ? "\n\n" : " ";
        }
    }
    text.resize(n_bytes);
    return std::vector<std::uint8_t>(text.begin(), text.end());
}

void write_synthetic_corpus(const std::string& path, std::size_t n_bytes, std::uint64_t seed) {
    const std::vector<std::uint8_t> data = synthetic_corpus(n_bytes, seed);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write corpus: " + path);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

}  // namespace sas
