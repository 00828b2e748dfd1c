#pragma once

#include <map>
#include <string>
#include <vector>

#include "sas/model.hpp"
#include "sas/training.hpp"

namespace sas {

using KvMap = std::map<std::string, std::string>;

// Full key registry with default values. Unknown keys are rejected wherever
// key/value pairs enter the system, always naming the offending key.
const KvMap& default_config();

// Parse a flat key=value file ('#' starts a comment, blank lines ignored).
KvMap parse_config_file(const std::string& path);

// Parse "--key value" pairs from argv (after the subcommand).
KvMap parse_cli_overrides(const std::vector<std::string>& args);

struct ResolvedConfig {
    KvMap kv;  // every registry key with its effective (resolved) value
    ModelConfig model;
    TrainConfig train;
    std::string corpus_path;
    std::string out_dir;
};

// defaults <- file <- overrides, then derived fields (head_dim, kv_groups,
// warmup) are resolved and validated. Throws ConfigError on unknown keys or
// inconsistent values.
ResolvedConfig resolve_config(const KvMap& file_kv, const KvMap& overrides);

// Sorted, comment-free "key=value" lines; written as config.resolved next to
// every command's outputs and embedded in checkpoints.
std::string canonical_config_text(const KvMap& kv);

// Model-only round trip used by checkpoints (model.* and attention.* keys).
KvMap model_config_to_kv(const ModelConfig& cfg);
ModelConfig model_config_from_kv(const KvMap& kv);

// Typed accessors (throw ConfigError naming the key).
long long kv_int(const KvMap& kv, const std::string& key);
double kv_double(const KvMap& kv, const std::string& key);
bool kv_bool(const KvMap& kv, const std::string& key);
const std::string& kv_str(const KvMap& kv, const std::string& key);
std::vector<std::string> split_list(const std::string& csv);

}  // namespace sas
