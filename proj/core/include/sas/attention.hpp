#pragma once

#include <cstdint>
#include <type_traits>
#include <string>

#include "sas/ops.hpp"
#include "sas/tensor.hpp"

namespace sas {

enum class BaseVariant { MHA, MQA, GQA };

const char* variant_name(BaseVariant v);

// Attention geometry. n_heads/head_dim are the base (H, D); sim_heads and
// sim_head_dim are the expanded counts the layer simulates (H-hat, D-hat).
struct AttentionConfig {
    int d_model = 0;
    int n_heads = 0;
    int head_dim = 0;
    int sim_heads = 0;
    int sim_head_dim = 0;
    int kernel = 1;
    BaseVariant base_variant = BaseVariant::MHA;
    int kv_groups = 0;
    bool expansion_enabled = true;
    // Softmax logit scale: 1/sqrt(sim_head_dim) when true (the default),
    // 1/sqrt(head_dim) otherwise. Only meaningful with expansion enabled.
    bool scale_by_expanded_dim = true;

    int group_count() const { return expansion_enabled ? sim_heads / n_heads : 1; }
    void validate() const;  // throws ConfigError
};

// All learnable tensors of one attention layer. Base projections are stored
// [in, out]; conv stacks [out, in, k]; feature MLPs [out, in] (see each field).
// V carries no feature-expansion parameters by construction.
template <typename T>
struct SasParams {
    Tensor<T> wq, wk, wv;   // [d_model, H*D], K/V use kv_groups*D columns for MQA/GQA
    Tensor<T> wo_w, wo_b;   // [H*D, H*D], [H*D]

    Tensor<T> q_conv1_w, q_conv1_b, q_conv2_w, q_conv2_b;  // [Hh,H,k],[Hh],[Hh,Hh,k],[Hh]
    Tensor<T> k_conv1_w, k_conv1_b, k_conv2_w, k_conv2_b;
    Tensor<T> v_conv1_w, v_conv1_b, v_conv2_w, v_conv2_b;

    Tensor<T> q_lin1_w, q_lin1_b, q_lin2_w, q_lin2_b;  // [Dh,D],[Dh],[Dh,Dh],[Dh]
    Tensor<T> k_lin1_w, k_lin1_b, k_lin2_w, k_lin2_b;
};

// Zero-initialised parameter set matching cfg (expansion tensors only when
// expansion is enabled).
template <typename T>
SasParams<T> make_sas_params(const AttentionConfig& cfg);

// Visit every defined parameter as (name, tensor&), in a fixed order.
template <typename T, typename Fn>
void for_each_sas_param(SasParams<T>& p, Fn&& fn) {
    auto visit = [&](const char* name, Tensor<T>& t) {
        if (t.defined()) fn(name, t);
    };
    visit("wq", p.wq);
    visit("wk", p.wk);
    visit("wv", p.wv);
    visit("wo.weight", p.wo_w);
    visit("wo.bias", p.wo_b);
    visit("q_head_conv1.weight", p.q_conv1_w);
    visit("q_head_conv1.bias", p.q_conv1_b);
    visit("q_head_conv2.weight", p.q_conv2_w);
    visit("q_head_conv2.bias", p.q_conv2_b);
    visit("k_head_conv1.weight", p.k_conv1_w);
    visit("k_head_conv1.bias", p.k_conv1_b);
    visit("k_head_conv2.weight", p.k_conv2_w);
    visit("k_head_conv2.bias", p.k_conv2_b);
    visit("v_head_conv1.weight", p.v_conv1_w);
    visit("v_head_conv1.bias", p.v_conv1_b);
    visit("v_head_conv2.weight", p.v_conv2_w);
    visit("v_head_conv2.bias", p.v_conv2_b);
    visit("q_feat_lin1.weight", p.q_lin1_w);
    visit("q_feat_lin1.bias", p.q_lin1_b);
    visit("q_feat_lin2.weight", p.q_lin2_w);
    visit("q_feat_lin2.bias", p.q_lin2_b);
    visit("k_feat_lin1.weight", p.k_lin1_w);
    visit("k_feat_lin1.bias", p.k_lin1_b);
    visit("k_feat_lin2.weight", p.k_lin2_w);
    visit("k_feat_lin2.bias", p.k_lin2_b);
}

template <typename T>
struct Qkv {
    Tensor<T> q, k, v;  // each [B, T, H, D]
};

// Base projections. For MQA/GQA the kv_groups key/value heads are repeated to
// H heads before any expansion sees them.
template <typename T>
Qkv<T> base_qkv(const Tensor<T>& x, const AttentionConfig& cfg, const SasParams<T>& p, std::type_identity_t<Tape<T>*> tape);

// Two-stage head-axis conv with ReLU and residual: x1 = conv1(x),
// out = conv2(relu(x1)) + x1. x: [N, H, D] -> [N, Hh, D].
template <typename T>
Tensor<T> head_expand(const Tensor<T>& x, const Tensor<T>& c1w, const Tensor<T>& c1b, const Tensor<T>& c2w,
                      const Tensor<T>& c2b, std::type_identity_t<Tape<T>*> tape);

// Two-stage feature MLP with ReLU and residual over the last axis:
// x1 = lin1(x), out = lin2(relu(x1)) + x1. [..., D] -> [..., Dh].
// Applied to the Q and K streams only; V has no such parameters.
template <typename T>
Tensor<T> feature_expand(const Tensor<T>& x, const Tensor<T>& l1w, const Tensor<T>& l1b, const Tensor<T>& l2w,
                         const Tensor<T>& l2b, std::type_identity_t<Tape<T>*> tape);

// Causal scaled-dot-product attention. q,k: [B,Hh,T,Dq], v: [B,Hh,T,Dv].
// Position t attends to positions 0..t only; future attention weights are
// identically zero, so outputs at or before t never read later inputs.
template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale, std::type_identity_t<Tape<T>*> tape);

// Partition the Hh head outputs into Hh/H consecutive groups of H heads,
// project each group's concat with the shared output matrix, and average the
// groups. heads: [B,Hh,T,D] -> [B,T,H*D].
template <typename T>
Tensor<T> peaa_aggregate(const Tensor<T>& heads, int n_heads, const Tensor<T>& wo_w, const Tensor<T>& wo_b,
                         std::type_identity_t<Tape<T>*> tape);

// Full layer: base projections -> head expansion (Q,K,V) -> feature expansion
// (Q,K) -> causal attention -> group-averaged output projection. With
// expansion disabled this is exactly the base variant's attention.
template <typename T>
Tensor<T> sas_forward(const Tensor<T>& x, const AttentionConfig& cfg, const SasParams<T>& p, std::type_identity_t<Tape<T>*> tape);

// Expansion-added parameter count per layer, weights only:
// k*(H*Hh + Hh*Hh)*3 + (D*Dh + Dh*Dh)*2. Zero when expansion is disabled.
std::int64_t extra_param_count(const AttentionConfig& cfg);

// Biases of the expansion stages, reported separately from the weight count.
std::int64_t extra_bias_count(const AttentionConfig& cfg);

}  // namespace sas
