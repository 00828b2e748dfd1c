#include "sas/config_file.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace sas {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void require_known(const std::string& key, const std::string& where) {
    if (!default_config().count(key))
        throw ConfigError("unknown config key: " + key + " (" + where + ")");
}

BaseVariant base_variant_of(const std::string& v) {
    if (v == "mha" || v == "sas") return BaseVariant::MHA;
    if (v == "mqa" || v == "sas-mqa") return BaseVariant::MQA;
    if (v == "gqa" || v == "sas-gqa") return BaseVariant::GQA;
    throw ConfigError("attention.variant: expected one of mha,mqa,gqa,sas,sas-mqa,sas-gqa, got '" + v + "'");
}

bool variant_expands(const std::string& v) { return v.rfind("sas", 0) == 0; }

}  // namespace

const KvMap& default_config() {
    static const KvMap defaults = {
        {"model.vocab_size", "256"},
        {"model.n_layers", "2"},
        {"model.d_model", "64"},
        {"model.context_len", "128"},
        {"model.mlp_ratio", "4"},
        {"model.tie_embeddings", "true"},
        {"attention.variant", "sas"},
        {"attention.n_heads", "2"},
        {"attention.kv_groups", "auto"},
        {"attention.sim_heads", "6"},
        {"attention.sim_head_dim", "48"},
        {"attention.kernel", "1"},
        {"attention.scale_dim", "expanded"},
        {"train.lr_max", "0.003"},
        {"train.lr_min", "0.0003"},
        {"train.warmup_steps", "-1"},
        {"train.total_steps", "1000"},
        {"train.beta1", "0.9"},
        {"train.beta2", "0.95"},
        {"train.weight_decay", "0.1"},
        {"train.clip_norm", "1"},
        {"train.adam_eps", "1e-08"},
        {"train.batch_size", "8"},
        {"train.seq_len", "64"},
        {"train.seed", "1"},
        {"train.eval_interval", "100"},
        {"train.eval_batches", "8"},
        {"data.corpus", "corpus.txt"},
        {"data.val_fraction", "0.1"},
        {"out.dir", "out"},
        {"sweep.name", "sweep"},
        {"sweep.axis", "variant"},
        {"sweep.values", "mha,sas"},
        {"sweep.seeds", "1,2,3"},
        {"eval.checkpoint", ""},
        {"timing.steps", "20"},
        {"gradcheck.tolerance", "0.0001"},
    };
    return defaults;
}

KvMap parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    KvMap kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        require_known(key, path + ":" + std::to_string(lineno));
        kv[key] = value;
    }
    return kv;
}

KvMap parse_cli_overrides(const std::vector<std::string>& args) {
    KvMap kv;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a.rfind("--", 0) != 0) throw ConfigError("expected --key value, got '" + a + "'");
        const std::string key = a.substr(2);
        if (key == "config") {  // handled by the caller
            ++i;
            continue;
        }
        require_known(key, "command line");
        if (i + 1 >= args.size()) throw ConfigError("missing value after --" + key);
        kv[key] = args[++i];
    }
    return kv;
}

long long kv_int(const KvMap& kv, const std::string& key) {
    const std::string& s = kv_str(kv, key);
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + s + "'");
    }
}

double kv_double(const KvMap& kv, const std::string& key) {
    const std::string& s = kv_str(kv, key);
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + s + "'");
    }
}

bool kv_bool(const KvMap& kv, const std::string& key) {
    const std::string& s = kv_str(kv, key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + s + "'");
}

const std::string& kv_str(const KvMap& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("missing config key: " + key);
    return it->second;
}

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string canonical_config_text(const KvMap& kv) {
    std::string text;
    for (const auto& [k, v] : kv) {  // std::map iterates key-sorted
        text += k;
        text += '=';
        text += v;
        text += '\n';
    }
    return text;
}

ModelConfig model_config_from_kv(const KvMap& kv) {
    ModelConfig m;
    m.vocab_size = static_cast<int>(kv_int(kv, "model.vocab_size"));
    m.n_layers = static_cast<int>(kv_int(kv, "model.n_layers"));
    m.d_model = static_cast<int>(kv_int(kv, "model.d_model"));
    m.context_len = static_cast<int>(kv_int(kv, "model.context_len"));
    m.mlp_ratio = static_cast<float>(kv_double(kv, "model.mlp_ratio"));
    m.tie_embeddings = kv_bool(kv, "model.tie_embeddings");

    const std::string variant = kv_str(kv, "attention.variant");
    AttentionConfig& a = m.attention;
    a.d_model = m.d_model;
    a.base_variant = base_variant_of(variant);
    a.expansion_enabled = variant_expands(variant);
    a.n_heads = static_cast<int>(kv_int(kv, "attention.n_heads"));
    if (a.n_heads <= 0 || m.d_model % a.n_heads != 0)
        throw ConfigError("attention.n_heads (" + std::to_string(a.n_heads) + ") must divide model.d_model (" +
                          std::to_string(m.d_model) + ")");
    a.head_dim = m.d_model / a.n_heads;
    const std::string kvg = kv_str(kv, "attention.kv_groups");
    if (kvg == "auto") {
        switch (a.base_variant) {
            case BaseVariant::MHA: a.kv_groups = a.n_heads; break;
            case BaseVariant::MQA: a.kv_groups = 1; break;
            case BaseVariant::GQA:
                throw ConfigError("attention.kv_groups must be set explicitly for gqa variants");
        }
    } else {
        a.kv_groups = static_cast<int>(kv_int(kv, "attention.kv_groups"));
    }
    a.sim_heads = static_cast<int>(kv_int(kv, "attention.sim_heads"));
    a.sim_head_dim = static_cast<int>(kv_int(kv, "attention.sim_head_dim"));
    a.kernel = static_cast<int>(kv_int(kv, "attention.kernel"));
    const std::string scale = kv_str(kv, "attention.scale_dim");
    if (scale == "expanded")
        a.scale_by_expanded_dim = true;
    else if (scale == "base")
        a.scale_by_expanded_dim = false;
    else
        throw ConfigError("attention.scale_dim: expected 'expanded' or 'base', got '" + scale + "'");
    m.validate();
    return m;
}

KvMap model_config_to_kv(const ModelConfig& cfg) {
    KvMap kv;
    kv["model.vocab_size"] = std::to_string(cfg.vocab_size);
    kv["model.n_layers"] = std::to_string(cfg.n_layers);
    kv["model.d_model"] = std::to_string(cfg.d_model);
    kv["model.context_len"] = std::to_string(cfg.context_len);
    kv["model.mlp_ratio"] = fmt_double(cfg.mlp_ratio);
    kv["model.tie_embeddings"] = cfg.tie_embeddings ? "true" : "false";
    const AttentionConfig& a = cfg.attention;
    std::string variant = variant_name(a.base_variant);
    if (a.expansion_enabled) variant = (a.base_variant == BaseVariant::MHA) ? "sas" : ("sas-" + variant);
    kv["attention.variant"] = variant;
    kv["attention.n_heads"] = std::to_string(a.n_heads);
    kv["attention.kv_groups"] = std::to_string(a.kv_groups);
    kv["attention.sim_heads"] = std::to_string(a.sim_heads);
    kv["attention.sim_head_dim"] = std::to_string(a.sim_head_dim);
    kv["attention.kernel"] = std::to_string(a.kernel);
    kv["attention.scale_dim"] = a.scale_by_expanded_dim ? "expanded" : "base";
    return kv;
}

ResolvedConfig resolve_config(const KvMap& file_kv, const KvMap& overrides) {
    KvMap kv = default_config();
    for (const auto& [k, v] : file_kv) {
        require_known(k, "config file");
        kv[k] = v;
    }
    for (const auto& [k, v] : overrides) {
        require_known(k, "command line");
        kv[k] = v;
    }

    ResolvedConfig rc;
    rc.model = model_config_from_kv(kv);

    TrainConfig& t = rc.train;
    t.lr_max = static_cast<float>(kv_double(kv, "train.lr_max"));
    t.lr_min = static_cast<float>(kv_double(kv, "train.lr_min"));
    t.warmup_steps = static_cast<int>(kv_int(kv, "train.warmup_steps"));
    t.total_steps = static_cast<int>(kv_int(kv, "train.total_steps"));
    t.beta1 = static_cast<float>(kv_double(kv, "train.beta1"));
    t.beta2 = static_cast<float>(kv_double(kv, "train.beta2"));
    t.weight_decay = static_cast<float>(kv_double(kv, "train.weight_decay"));
    t.clip_norm = static_cast<float>(kv_double(kv, "train.clip_norm"));
    t.adam_eps = static_cast<float>(kv_double(kv, "train.adam_eps"));
    t.batch_size = static_cast<int>(kv_int(kv, "train.batch_size"));
    t.seq_len = static_cast<int>(kv_int(kv, "train.seq_len"));
    t.seed = static_cast<std::uint64_t>(kv_int(kv, "train.seed"));
    t.eval_interval = static_cast<int>(kv_int(kv, "train.eval_interval"));
    t.eval_batches = static_cast<int>(kv_int(kv, "train.eval_batches"));
    t.validate();

    rc.corpus_path = kv_str(kv, "data.corpus");
    rc.out_dir = kv_str(kv, "out.dir");
    const double vf = kv_double(kv, "data.val_fraction");
    if (vf <= 0.0 || vf >= 1.0) throw ConfigError("data.val_fraction must be in (0,1)");

    // Echo resolved derivations so config.resolved is self-contained.
    kv["attention.kv_groups"] = std::to_string(rc.model.attention.kv_groups);
    kv["train.warmup_steps"] = std::to_string(t.resolved_warmup());
    rc.kv = std::move(kv);
    return rc;
}

}  // namespace sas
