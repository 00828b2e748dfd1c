#include "sas/model.hpp"

#include <cmath>
#include <type_traits>
#include <cstring>
#include <string>

#include "sas/ops.hpp"
#include "sas/rng.hpp"

namespace sas {

namespace {
constexpr float kLnEps = 1e-5f;

bool contains(const std::string& s, const char* sub) { return s.find(sub) != std::string::npos; }
}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
    if (n_layers < 1) throw ConfigError("model: n_layers must be >= 1");
    if (d_model < 1) throw ConfigError("model: d_model must be >= 1");
    if (context_len < 1) throw ConfigError("model: context_len must be >= 1");
    if (mlp_ratio <= 0.0f) throw ConfigError("model: mlp_ratio must be positive");
    if (attention.d_model != d_model)
        throw ConfigError("model: attention.d_model (" + std::to_string(attention.d_model) +
                          ") != d_model (" + std::to_string(d_model) + ")");
    attention.validate();
}

template <typename T>
ModelParams<T> make_model_params(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams<T> p;
    p.tied = cfg.tie_embeddings;
    p.tok_emb = Tensor<T>({cfg.vocab_size, cfg.d_model});
    p.pos_emb = Tensor<T>({cfg.context_len, cfg.d_model});
    p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    const int hidden = cfg.mlp_hidden();
    for (auto& layer : p.layers) {
        layer.ln1_scale = Tensor<T>({cfg.d_model});
        layer.ln2_scale = Tensor<T>({cfg.d_model});
        layer.attn = make_sas_params<T>(cfg.attention);
        layer.mlp_fc_w = Tensor<T>({cfg.d_model, hidden});
        layer.mlp_fc_b = Tensor<T>({hidden});
        layer.mlp_proj_w = Tensor<T>({hidden, cfg.d_model});
        layer.mlp_proj_b = Tensor<T>({cfg.d_model});
    }
    p.ln_f_scale = Tensor<T>({cfg.d_model});
    if (!cfg.tie_embeddings) p.lm_head = Tensor<T>({cfg.vocab_size, cfg.d_model});
    return p;
}

ModelParams<float> init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams<float> p = make_model_params<float>(cfg);
    Rng rng = Rng(seed).derive(0x1417u);
    const double base_std = 0.02;
    const double resid_std = base_std / std::sqrt(2.0 * cfg.n_layers);
    const double near_zero_std = 0.002;
    p.for_each([&](const char* cname, TensorF& t) {
        const std::string name(cname);
        double std_dev = base_std;
        if (contains(name, ".scale")) {
            for (auto& v : t.data()) v = 1.0f;
            return;
        }
        if (contains(name, ".bias")) {
            for (auto& v : t.data()) v = 0.0f;
            return;
        }
        if (contains(name, "wo.weight") || contains(name, "mlp_proj.weight")) std_dev = resid_std;
        // Expansion first stages use fan-in scaling so post-expansion Q/K/V
        // keep the magnitude of their inputs; second stages start near zero
        // so the layer begins close to its base-attention behaviour.
        if (contains(name, "head_conv1.weight") || contains(name, "feat_lin1.weight")) {
            const std::int64_t fan_in = t.numel() / t.dim(0);
            std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
        }
        if (contains(name, "head_conv2.weight") || contains(name, "feat_lin2.weight")) std_dev = near_zero_std;
        for (auto& v : t.data()) v = static_cast<float>(std_dev * rng.normal());
    });
    p.set_requires_grad(true);
    return p;
}

ModelParams<double> params_to_double(ModelParams<float>& p, const ModelConfig& cfg) {
    ModelParams<double> out = make_model_params<double>(cfg);
    std::vector<TensorF*> src;
    p.for_each([&](const char*, TensorF& t) { src.push_back(&t); });
    std::size_t i = 0;
    out.for_each([&](const char*, TensorD& t) {
        const TensorF& s = *src[i++];
        auto sd = s.data();
        auto td = t.data();
        for (std::size_t k = 0; k < sd.size(); ++k) td[k] = static_cast<double>(sd[k]);
    });
    out.set_requires_grad(true);
    return out;
}

template <typename T>
Tensor<T> model_forward(const std::vector<std::int32_t>& tokens, int batch, int time, ModelParams<T>& params,
                        const ModelConfig& cfg, std::type_identity_t<Tape<T>*> tape) {
    if (time > cfg.context_len)
        throw UsageError("model_forward: sequence length " + std::to_string(time) + " exceeds context_len " +
                         std::to_string(cfg.context_len));
    Tensor<T> x = embedding(params.tok_emb, tokens, batch, time, tape);
    x = add(x, params.pos_emb.narrow0(time), tape);
    for (auto& layer : params.layers) {
        Tensor<T> a = layer_norm(x, layer.ln1_scale, T(kLnEps), tape);
        a = sas_forward(a, cfg.attention, layer.attn, tape);
        x = add(x, a, tape);
        Tensor<T> m = layer_norm(x, layer.ln2_scale, T(kLnEps), tape);
        m = add(matmul(m, layer.mlp_fc_w, tape), layer.mlp_fc_b, tape);
        m = gelu(m, tape);
        m = add(matmul(m, layer.mlp_proj_w, tape), layer.mlp_proj_b, tape);
        x = add(x, m, tape);
    }
    x = layer_norm(x, params.ln_f_scale, T(kLnEps), tape);
    Tensor<T>& head = params.tied ? params.tok_emb : params.lm_head;
    return matmul_bt(x, head, tape);
}

template <typename T>
ParamCounts count_params(ModelParams<T>& params) {
    ParamCounts c;
    params.for_each([&](const char* cname, Tensor<T>& t) {
        const std::string name(cname);
        c.total += t.numel();
        if (contains(name, "head_conv") || contains(name, "feat_lin")) {
            if (contains(name, ".weight"))
                c.attention_extra_weights += t.numel();
            else
                c.attention_extra_biases += t.numel();
        }
    });
    return c;
}

template ModelParams<float> make_model_params<float>(const ModelConfig&);
template ModelParams<double> make_model_params<double>(const ModelConfig&);
template Tensor<float> model_forward<float>(const std::vector<std::int32_t>&, int, int, ModelParams<float>&,
                                            const ModelConfig&, Tape<float>*);
template Tensor<double> model_forward<double>(const std::vector<std::int32_t>&, int, int, ModelParams<double>&,
                                              const ModelConfig&, Tape<double>*);
template ParamCounts count_params<float>(ModelParams<float>&);
template ParamCounts count_params<double>(ModelParams<double>&);

}  // namespace sas
