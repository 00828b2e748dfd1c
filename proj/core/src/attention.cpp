#include "sas/attention.hpp"

#include <cmath>
#include <type_traits>
#include <vector>

namespace sas {

const char* variant_name(BaseVariant v) {
    switch (v) {
        case BaseVariant::MHA: return "mha";
        case BaseVariant::MQA: return "mqa";
        case BaseVariant::GQA: return "gqa";
    }
    return "?";
}

void AttentionConfig::validate() const {
    if (d_model <= 0 || n_heads <= 0 || head_dim <= 0)
        throw ConfigError("attention: d_model, n_heads and head_dim must be positive");
    if (d_model != n_heads * head_dim)
        throw ConfigError("attention: d_model (" + std::to_string(d_model) + ") != n_heads*head_dim (" +
                          std::to_string(n_heads) + "*" + std::to_string(head_dim) + ")");
    if (kv_groups <= 0 || n_heads % kv_groups != 0)
        throw ConfigError("attention: kv_groups (" + std::to_string(kv_groups) + ") must divide n_heads (" +
                          std::to_string(n_heads) + ")");
    if (base_variant == BaseVariant::MHA && kv_groups != n_heads)
        throw ConfigError("attention: mha requires kv_groups == n_heads");
    if (base_variant == BaseVariant::MQA && kv_groups != 1)
        throw ConfigError("attention: mqa requires kv_groups == 1");
    if (expansion_enabled) {
        if (sim_heads < n_heads || sim_heads % n_heads != 0)
            throw ConfigError("attention: sim_heads (" + std::to_string(sim_heads) +
                              ") must be a positive multiple of n_heads (" + std::to_string(n_heads) + ")");
        if (sim_head_dim < head_dim)
            throw ConfigError("attention: sim_head_dim (" + std::to_string(sim_head_dim) +
                              ") must be >= head_dim (" + std::to_string(head_dim) + ")");
        if (kernel < 1 || kernel % 2 == 0)
            throw ConfigError("attention: kernel (" + std::to_string(kernel) + ") must be odd and positive");
    }
}

template <typename T>
SasParams<T> make_sas_params(const AttentionConfig& cfg) {
    cfg.validate();
    const int hd = cfg.n_heads * cfg.head_dim;
    const int kv = cfg.kv_groups * cfg.head_dim;
    SasParams<T> p;
    p.wq = Tensor<T>({cfg.d_model, hd});
    p.wk = Tensor<T>({cfg.d_model, kv});
    p.wv = Tensor<T>({cfg.d_model, kv});
    p.wo_w = Tensor<T>({hd, hd});
    p.wo_b = Tensor<T>({hd});
    if (cfg.expansion_enabled) {
        const int hh = cfg.sim_heads, dh = cfg.sim_head_dim, k = cfg.kernel;
        auto conv_pair = [&](Tensor<T>& c1w, Tensor<T>& c1b, Tensor<T>& c2w, Tensor<T>& c2b) {
            c1w = Tensor<T>({hh, cfg.n_heads, k});
            c1b = Tensor<T>({hh});
            c2w = Tensor<T>({hh, hh, k});
            c2b = Tensor<T>({hh});
        };
        conv_pair(p.q_conv1_w, p.q_conv1_b, p.q_conv2_w, p.q_conv2_b);
        conv_pair(p.k_conv1_w, p.k_conv1_b, p.k_conv2_w, p.k_conv2_b);
        conv_pair(p.v_conv1_w, p.v_conv1_b, p.v_conv2_w, p.v_conv2_b);
        auto lin_pair = [&](Tensor<T>& l1w, Tensor<T>& l1b, Tensor<T>& l2w, Tensor<T>& l2b) {
            l1w = Tensor<T>({dh, cfg.head_dim});
            l1b = Tensor<T>({dh});
            l2w = Tensor<T>({dh, dh});
            l2b = Tensor<T>({dh});
        };
        lin_pair(p.q_lin1_w, p.q_lin1_b, p.q_lin2_w, p.q_lin2_b);
        lin_pair(p.k_lin1_w, p.k_lin1_b, p.k_lin2_w, p.k_lin2_b);
    }
    return p;
}

namespace {

// [B,T,G,D] -> [B,T,H,D] with head h reading group h/(H/G). Backward sums the
// repeats back into each group, repeat index ascending.
template <typename T>
Tensor<T> repeat_kv_heads(const Tensor<T>& x, int n_heads, std::type_identity_t<Tape<T>*> tape) {
    const int b = x.dim(0), t = x.dim(1), groups = x.dim(2), d = x.dim(3);
    const int reps = n_heads / groups;
    if (reps == 1) return x;
    const bool track = tape && x.requires_grad();
    Tensor<T> out({b, t, n_heads, d});
    if (track) out.set_requires_grad(true);
    const T* xp = x.data().data();
    T* yp = out.data().data();
    const std::int64_t rows = static_cast<std::int64_t>(b) * t;
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = xp + r * groups * d;
        T* yr = yp + r * n_heads * d;
        for (int h = 0; h < n_heads; ++h) {
            const T* src = xr + static_cast<std::int64_t>(h / reps) * d;
            T* dst = yr + static_cast<std::int64_t>(h) * d;
            for (int c = 0; c < d; ++c) dst[c] = src[c];
        }
    }
    if (track) {
        Tensor<T> xv = x, ov = out;
        tape->record(out, [xv, ov, rows, groups, reps, d, n_heads]() mutable {
            const T* g = ov.grad().data();
            T* dx = xv.grad().data();
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* gr = g + r * n_heads * d;
                T* dr = dx + r * groups * d;
                for (int h = 0; h < n_heads; ++h) {
                    const T* src = gr + static_cast<std::int64_t>(h) * d;
                    T* dst = dr + static_cast<std::int64_t>(h / reps) * d;
                    for (int c = 0; c < d; ++c) dst[c] += src[c];
                }
            }
        });
    }
    return out;
}

}  // namespace

template <typename T>
Qkv<T> base_qkv(const Tensor<T>& x, const AttentionConfig& cfg, const SasParams<T>& p, std::type_identity_t<Tape<T>*> tape) {
    cfg.validate();
    if (x.ndim() != 3 || x.dim(2) != cfg.d_model)
        throw ShapeError("base_qkv: expected input [B,T," + std::to_string(cfg.d_model) + "], got " +
                         shape_str(x.shape()));
    const int b = x.dim(0), t = x.dim(1);
    Qkv<T> out;
    out.q = reshape(matmul(x, p.wq, tape), {b, t, cfg.n_heads, cfg.head_dim});
    Tensor<T> k = reshape(matmul(x, p.wk, tape), {b, t, cfg.kv_groups, cfg.head_dim});
    Tensor<T> v = reshape(matmul(x, p.wv, tape), {b, t, cfg.kv_groups, cfg.head_dim});
    out.k = repeat_kv_heads(k, cfg.n_heads, tape);
    out.v = repeat_kv_heads(v, cfg.n_heads, tape);
    return out;
}

template <typename T>
Tensor<T> head_expand(const Tensor<T>& x, const Tensor<T>& c1w, const Tensor<T>& c1b, const Tensor<T>& c2w,
                      const Tensor<T>& c2b, std::type_identity_t<Tape<T>*> tape) {
    Tensor<T> x1 = conv1d_heads(x, c1w, c1b, tape);
    Tensor<T> x2 = conv1d_heads(relu(x1, tape), c2w, c2b, tape);
    return add(x2, x1, tape);
}

template <typename T>
Tensor<T> feature_expand(const Tensor<T>& x, const Tensor<T>& l1w, const Tensor<T>& l1b, const Tensor<T>& l2w,
                         const Tensor<T>& l2b, std::type_identity_t<Tape<T>*> tape) {
    Tensor<T> x1 = add(matmul_bt(x, l1w, tape), l1b, tape);
    Tensor<T> x2 = add(matmul_bt(relu(x1, tape), l2w, tape), l2b, tape);
    return add(x2, x1, tape);
}

template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale, std::type_identity_t<Tape<T>*> tape) {
    if (q.ndim() != 4 || k.ndim() != 4 || v.ndim() != 4)
        throw ShapeError("causal_attention: q,k,v must be [B,H,T,D]");
    check_same_shape(q, k, "causal_attention(q,k)");
    const int b = q.dim(0), heads = q.dim(1), t = q.dim(2), dq = q.dim(3);
    if (v.dim(0) != b || v.dim(1) != heads || v.dim(2) != t)
        throw ShapeError("causal_attention: v " + shape_str(v.shape()) + " does not match q " +
                         shape_str(q.shape()));
    const int dv = v.dim(3);
    const std::int64_t bh = static_cast<std::int64_t>(b) * heads;

    const bool track = tape && (q.requires_grad() || k.requires_grad() || v.requires_grad());
    Tensor<T> out({b, heads, t, dv});
    if (track) out.set_requires_grad(true);
    // Attention probabilities, kept for backward; strictly-future entries stay 0.
    Tensor<T> probs({b, heads, t, t});

    const T* qp = q.data().data();
    const T* kp = k.data().data();
    const T* vp = v.data().data();
    T* op = out.data().data();
    T* pp = probs.data().data();

#pragma omp parallel for schedule(static) if (bh > 1)
    for (std::int64_t g = 0; g < bh; ++g) {
        const T* qg = qp + g * t * dq;
        const T* kg = kp + g * t * dq;
        const T* vg = vp + g * t * dv;
        T* og = op + g * t * dv;
        T* pg = pp + g * static_cast<std::int64_t>(t) * t;
        std::vector<T> row(static_cast<std::size_t>(t));
        for (int i = 0; i < t; ++i) {
            const T* qi = qg + static_cast<std::int64_t>(i) * dq;
            T mx = T(0);
            for (int j = 0; j <= i; ++j) {
                const T* kj = kg + static_cast<std::int64_t>(j) * dq;
                T acc = T(0);
                for (int c = 0; c < dq; ++c) acc += qi[c] * kj[c];
                row[static_cast<std::size_t>(j)] = acc * scale;
                if (j == 0 || row[static_cast<std::size_t>(j)] > mx) mx = row[static_cast<std::size_t>(j)];
            }
            T denom = T(0);
            for (int j = 0; j <= i; ++j) {
                row[static_cast<std::size_t>(j)] = std::exp(row[static_cast<std::size_t>(j)] - mx);
                denom += row[static_cast<std::size_t>(j)];
            }
            const T inv = T(1) / denom;
            T* prow = pg + static_cast<std::int64_t>(i) * t;
            for (int j = 0; j <= i; ++j) prow[j] = row[static_cast<std::size_t>(j)] * inv;
            T* orow = og + static_cast<std::int64_t>(i) * dv;
            for (int c = 0; c < dv; ++c) orow[c] = T(0);
            for (int j = 0; j <= i; ++j) {
                const T pij = prow[j];
                const T* vj = vg + static_cast<std::int64_t>(j) * dv;
                for (int c = 0; c < dv; ++c) orow[c] += pij * vj[c];
            }
        }
    }

    if (track) {
        Tensor<T> qv = q, kv = k, vv = v, ov = out;
        tape->record(out, [qv, kv, vv, ov, probs, bh, t, dq, dv, scale]() mutable {
            const T* g = ov.grad().data();
            const T* pp2 = probs.data().data();
            const T* qp2 = qv.data().data();
            const T* kp2 = kv.data().data();
            const T* vp2 = vv.data().data();
            const bool need_q = qv.requires_grad();
            const bool need_k = kv.requires_grad();
            const bool need_v = vv.requires_grad();
            T* dqp = need_q ? qv.grad().data() : nullptr;
            T* dkp = need_k ? kv.grad().data() : nullptr;
            T* dvp = need_v ? vv.grad().data() : nullptr;
#pragma omp parallel for schedule(static) if (bh > 1)
            for (std::int64_t gi = 0; gi < bh; ++gi) {
                const T* gg = g + gi * t * dv;
                const T* pg = pp2 + gi * static_cast<std::int64_t>(t) * t;
                const T* qg = qp2 + gi * t * dq;
                const T* kg = kp2 + gi * t * dq;
                const T* vg = vp2 + gi * t * dv;
                // dS for this (batch, head) slice; lower-triangular like probs.
                std::vector<T> ds(static_cast<std::size_t>(t) * t, T(0));
                for (int i = 0; i < t; ++i) {
                    const T* grow = gg + static_cast<std::int64_t>(i) * dv;
                    const T* prow = pg + static_cast<std::int64_t>(i) * t;
                    T* dsrow = ds.data() + static_cast<std::int64_t>(i) * t;
                    T dot = T(0);
                    for (int j = 0; j <= i; ++j) {
                        const T* vj = vg + static_cast<std::int64_t>(j) * dv;
                        T dp = T(0);
                        for (int c = 0; c < dv; ++c) dp += grow[c] * vj[c];
                        dsrow[j] = dp;
                        dot += dp * prow[j];
                    }
                    for (int j = 0; j <= i; ++j) dsrow[j] = prow[j] * (dsrow[j] - dot);
                }
                if (need_v) {
                    T* dvg = dvp + gi * t * dv;
                    for (int j = 0; j < t; ++j) {
                        T* dvj = dvg + static_cast<std::int64_t>(j) * dv;
                        for (int i = j; i < t; ++i) {
                            const T pij = pg[static_cast<std::int64_t>(i) * t + j];
                            const T* grow = gg + static_cast<std::int64_t>(i) * dv;
                            for (int c = 0; c < dv; ++c) dvj[c] += pij * grow[c];
                        }
                    }
                }
                if (need_q) {
                    T* dqg = dqp + gi * t * dq;
                    for (int i = 0; i < t; ++i) {
                        T* dqi = dqg + static_cast<std::int64_t>(i) * dq;
                        const T* dsrow = ds.data() + static_cast<std::int64_t>(i) * t;
                        for (int j = 0; j <= i; ++j) {
                            const T w = dsrow[j] * scale;
                            const T* kj = kg + static_cast<std::int64_t>(j) * dq;
                            for (int c = 0; c < dq; ++c) dqi[c] += w * kj[c];
                        }
                    }
                }
                if (need_k) {
                    T* dkg = dkp + gi * t * dq;
                    for (int j = 0; j < t; ++j) {
                        T* dkj = dkg + static_cast<std::int64_t>(j) * dq;
                        for (int i = j; i < t; ++i) {
                            const T w = ds[static_cast<std::int64_t>(i) * t + j] * scale;
                            const T* qi = qg + static_cast<std::int64_t>(i) * dq;
                            for (int c = 0; c < dq; ++c) dkj[c] += w * qi[c];
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> peaa_aggregate(const Tensor<T>& heads, int n_heads, const Tensor<T>& wo_w, const Tensor<T>& wo_b,
                         std::type_identity_t<Tape<T>*> tape) {
    if (heads.ndim() != 4) throw ShapeError("peaa_aggregate: heads must be [B,Hh,T,D]");
    const int b = heads.dim(0), hh = heads.dim(1), t = heads.dim(2), d = heads.dim(3);
    if (hh % n_heads != 0)
        throw ConfigError("peaa_aggregate: head count " + std::to_string(hh) + " not divisible by group size " +
                          std::to_string(n_heads));
    const int groups = hh / n_heads;
    Tensor<T> by_time = transpose(heads, 1, 2, tape);                       // [B,T,Hh,D]
    Tensor<T> grouped = reshape(by_time, {b, t, groups, n_heads * d});      // [B,T,G,H*D]
    Tensor<T> projected = add(matmul(grouped, wo_w, tape), wo_b, tape);     // [B,T,G,H*D]
    return mean_axis(projected, 2, tape);                                   // [B,T,H*D]
}

template <typename T>
Tensor<T> sas_forward(const Tensor<T>& x, const AttentionConfig& cfg, const SasParams<T>& p, std::type_identity_t<Tape<T>*> tape) {
    Qkv<T> qkv = base_qkv(x, cfg, p, tape);
    const int b = x.dim(0), t = x.dim(1);
    const int bt = b * t;

    Tensor<T> q = qkv.q, k = qkv.k, v = qkv.v;
    int dq = cfg.head_dim;
    int heads = cfg.n_heads;
    if (cfg.expansion_enabled) {
        q = head_expand(reshape(q, {bt, cfg.n_heads, cfg.head_dim}), p.q_conv1_w, p.q_conv1_b, p.q_conv2_w,
                        p.q_conv2_b, tape);
        k = head_expand(reshape(k, {bt, cfg.n_heads, cfg.head_dim}), p.k_conv1_w, p.k_conv1_b, p.k_conv2_w,
                        p.k_conv2_b, tape);
        v = head_expand(reshape(v, {bt, cfg.n_heads, cfg.head_dim}), p.v_conv1_w, p.v_conv1_b, p.v_conv2_w,
                        p.v_conv2_b, tape);
        q = feature_expand(q, p.q_lin1_w, p.q_lin1_b, p.q_lin2_w, p.q_lin2_b, tape);
        k = feature_expand(k, p.k_lin1_w, p.k_lin1_b, p.k_lin2_w, p.k_lin2_b, tape);
        heads = cfg.sim_heads;
        dq = cfg.sim_head_dim;
        q = reshape(q, {b, t, heads, dq});
        k = reshape(k, {b, t, heads, dq});
        v = reshape(v, {b, t, heads, cfg.head_dim});
    }

    Tensor<T> qh = transpose(q, 1, 2, tape);
    Tensor<T> kh = transpose(k, 1, 2, tape);
    Tensor<T> vh = transpose(v, 1, 2, tape);

    const int scale_dim = (cfg.expansion_enabled && cfg.scale_by_expanded_dim) ? cfg.sim_head_dim : cfg.head_dim;
    const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(scale_dim)));
    Tensor<T> attn = causal_attention(qh, kh, vh, scale, tape);

    return peaa_aggregate(attn, cfg.n_heads, p.wo_w, p.wo_b, tape);
}

std::int64_t extra_param_count(const AttentionConfig& cfg) {
    if (!cfg.expansion_enabled) return 0;
    const std::int64_t h = cfg.n_heads, hh = cfg.sim_heads;
    const std::int64_t d = cfg.head_dim, dh = cfg.sim_head_dim;
    return cfg.kernel * (h * hh + hh * hh) * 3 + (d * dh + dh * dh) * 2;
}

std::int64_t extra_bias_count(const AttentionConfig& cfg) {
    if (!cfg.expansion_enabled) return 0;
    return 6ll * cfg.sim_heads + 4ll * cfg.sim_head_dim;
}

#define SAS_INSTANTIATE_ATTENTION(T)                                                                      \
    template SasParams<T> make_sas_params<T>(const AttentionConfig&);                                     \
    template Qkv<T> base_qkv<T>(const Tensor<T>&, const AttentionConfig&, const SasParams<T>&, Tape<T>*); \
    template Tensor<T> head_expand<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,               \
                                      const Tensor<T>&, const Tensor<T>&, Tape<T>*);                      \
    template Tensor<T> feature_expand<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                         const Tensor<T>&, const Tensor<T>&, Tape<T>*);                   \
    template Tensor<T> causal_attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T,       \
                                           Tape<T>*);                                                     \
    template Tensor<T> peaa_aggregate<T>(const Tensor<T>&, int, const Tensor<T>&, const Tensor<T>&,       \
                                         Tape<T>*);                                                       \
    template Tensor<T> sas_forward<T>(const Tensor<T>&, const AttentionConfig&, const SasParams<T>&,      \
                                      Tape<T>*);

SAS_INSTANTIATE_ATTENTION(float)
SAS_INSTANTIATE_ATTENTION(double)

#undef SAS_INSTANTIATE_ATTENTION

}  // namespace sas
