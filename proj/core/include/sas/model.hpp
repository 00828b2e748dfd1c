#pragma once

#include <cstdint>
#include <type_traits>
#include <string>
#include <vector>

#include "sas/attention.hpp"
#include "sas/tensor.hpp"

namespace sas {

struct ModelConfig {
    int vocab_size = 256;
    int n_layers = 2;
    int d_model = 64;
    int context_len = 128;
    float mlp_ratio = 4.0f;
    AttentionConfig attention;
    bool tie_embeddings = true;

    int mlp_hidden() const { return static_cast<int>(mlp_ratio * static_cast<float>(d_model) + 0.5f); }
    void validate() const;
};

template <typename T>
struct LayerParams {
    Tensor<T> ln1_scale, ln2_scale;
    SasParams<T> attn;
    Tensor<T> mlp_fc_w, mlp_fc_b;      // [C, hidden], [hidden]
    Tensor<T> mlp_proj_w, mlp_proj_b;  // [hidden, C], [C]
};

template <typename T>
struct ModelParams {
    Tensor<T> tok_emb;  // [V, C]
    Tensor<T> pos_emb;  // [context, C]
    std::vector<LayerParams<T>> layers;
    Tensor<T> ln_f_scale;
    Tensor<T> lm_head;  // [V, C]; undefined when embeddings are tied
    bool tied = true;

    // Visit every parameter as (name, tensor&) in a fixed order. The order
    // defines initialisation, checkpoint layout and optimizer state slots.
    template <typename Fn>
    void for_each(Fn&& fn) {
        fn("tok_emb", tok_emb);
        fn("pos_emb", pos_emb);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string prefix = "layers." + std::to_string(i) + ".";
            fn((prefix + "ln1.scale").c_str(), layers[i].ln1_scale);
            for_each_sas_param(layers[i].attn, [&](const char* name, Tensor<T>& t) {
                fn((prefix + "attn." + name).c_str(), t);
            });
            fn((prefix + "ln2.scale").c_str(), layers[i].ln2_scale);
            fn((prefix + "mlp_fc.weight").c_str(), layers[i].mlp_fc_w);
            fn((prefix + "mlp_fc.bias").c_str(), layers[i].mlp_fc_b);
            fn((prefix + "mlp_proj.weight").c_str(), layers[i].mlp_proj_w);
            fn((prefix + "mlp_proj.bias").c_str(), layers[i].mlp_proj_b);
        }
        fn("ln_f.scale", ln_f_scale);
        if (!tied) fn("lm_head.weight", lm_head);
    }

    void set_requires_grad(bool on) {
        for_each([on](const char*, Tensor<T>& t) { t.set_requires_grad(on); });
    }
    void zero_grad() {
        for_each([](const char*, Tensor<T>& t) { t.zero_grad(); });
    }
};

// Zero-valued parameter set matching cfg (no RNG cost; used for audits,
// checkpoint loading and tests).
template <typename T>
ModelParams<T> make_model_params(const ModelConfig& cfg);

// Standard init: N(0, 0.02) for embeddings and weights, residual output
// projections scaled by 1/sqrt(2*n_layers), expansion second stages near
// zero, norm scales 1, biases 0.
ModelParams<float> init_model_params(const ModelConfig& cfg, std::uint64_t seed);

ModelParams<double> params_to_double(ModelParams<float>& p, const ModelConfig& cfg);

struct Batch {
    int batch = 0;
    int time = 0;
    std::vector<std::int32_t> inputs;
    std::vector<std::int32_t> targets;  // may be empty for pure forward
};

// tokens [B,T] -> logits [B,T,vocab]. Pre-norm residual blocks, GELU MLP,
// final norm, (optionally tied) linear head.
template <typename T>
Tensor<T> model_forward(const std::vector<std::int32_t>& tokens, int batch, int time, ModelParams<T>& params,
                        const ModelConfig& cfg, std::type_identity_t<Tape<T>*> tape);

struct ParamCounts {
    std::int64_t total = 0;
    std::int64_t attention_extra_weights = 0;
    std::int64_t attention_extra_biases = 0;
};

// Exact enumeration over the stored arrays. The attention_extra fields tally
// the expansion stages only (head convs + feature MLPs).
template <typename T>
ParamCounts count_params(ModelParams<T>& params);

}  // namespace sas
