#include "sas/verify/oracle.hpp"

#include <cmath>
#include <vector>

namespace sas::verify {

namespace {

using dvec = std::vector<double>;

dvec to_double(std::span<const float> src) {
    dvec out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = static_cast<double>(src[i]);
    return out;
}

// y[r, o] = b[o] + sum_i x[r, i] * w[o, i]   (w stored [out, in])
dvec linear_rows(const dvec& x, std::size_t rows, std::size_t in, std::span<const float> w,
                 std::span<const float> b, std::size_t out) {
    dvec y(rows * out, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out; ++o) {
            double acc = static_cast<double>(b[o]);
            for (std::size_t i = 0; i < in; ++i) acc += x[r * in + i] * static_cast<double>(w[o * in + i]);
            y[r * out + o] = acc;
        }
    return y;
}

// y[r, o] = sum_i x[r, i] * w[i, o]   (w stored [in, out])
dvec project_rows(const dvec& x, std::size_t rows, std::size_t in, std::span<const float> w, std::size_t out) {
    dvec y(rows * out, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out; ++o) {
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += x[r * in + i] * static_cast<double>(w[i * out + o]);
            y[r * out + o] = acc;
        }
    return y;
}

// Cross-correlation over the trailing axis, zero padding (k-1)/2.
dvec conv_rows(const dvec& x, std::size_t n, std::size_t c_in, std::size_t len, std::span<const float> w,
               std::span<const float> b, std::size_t c_out, std::size_t kernel) {
    const std::size_t pad = (kernel - 1) / 2;
    dvec y(n * c_out * len, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t co = 0; co < c_out; ++co)
            for (std::size_t l = 0; l < len; ++l) {
                double acc = static_cast<double>(b[co]);
                for (std::size_t ci = 0; ci < c_in; ++ci)
                    for (std::size_t t = 0; t < kernel; ++t) {
                        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l + t) - static_cast<std::ptrdiff_t>(pad);
                        if (src >= 0 && src < static_cast<std::ptrdiff_t>(len))
                            acc += x[(r * c_in + ci) * len + static_cast<std::size_t>(src)] *
                                   static_cast<double>(w[(co * c_in + ci) * kernel + t]);
                    }
                y[(r * c_out + co) * len + l] = acc;
            }
    return y;
}

dvec relu_vec(const dvec& x) {
    dvec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

dvec add_vec(const dvec& a, const dvec& b) {
    dvec y(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
    return y;
}

// conv1(x), then conv2(relu(.)) + conv1(x).
dvec expand_heads(const dvec& x, std::size_t n, std::size_t h, std::size_t hh, std::size_t len,
                  std::span<const float> c1w, std::span<const float> c1b, std::span<const float> c2w,
                  std::span<const float> c2b, std::size_t kernel) {
    const dvec x1 = conv_rows(x, n, h, len, c1w, c1b, hh, kernel);
    const dvec x3 = conv_rows(relu_vec(x1), n, hh, len, c2w, c2b, hh, kernel);
    return add_vec(x3, x1);
}

// lin1(x), then lin2(relu(.)) + lin1(x).
dvec expand_features(const dvec& x, std::size_t rows, std::size_t d, std::size_t dh, std::span<const float> l1w,
                     std::span<const float> l1b, std::span<const float> l2w, std::span<const float> l2b) {
    const dvec x1 = linear_rows(x, rows, d, l1w, l1b, dh);
    const dvec x3 = linear_rows(relu_vec(x1), rows, dh, l2w, l2b, dh);
    return add_vec(x3, x1);
}

// q,k: [B,T,heads,dq]; v: [B,T,heads,dv]. Returns [B,heads,T,dv].
dvec attend_causal(const dvec& q, const dvec& k, const dvec& v, std::size_t batch, std::size_t time,
                   std::size_t heads, std::size_t dq, std::size_t dv, double scale) {
    dvec out(batch * heads * time * dv, 0.0);
    dvec row(time, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < time; ++i) {
                double mx = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < dq; ++c)
                        acc += q[((b * time + i) * heads + h) * dq + c] * k[((b * time + j) * heads + h) * dq + c];
                    row[j] = acc * scale;
                    if (j == 0 || row[j] > mx) mx = row[j];
                }
                double denom = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    denom += row[j];
                }
                double* orow = &out[((b * heads + h) * time + i) * dv];
                for (std::size_t j = 0; j <= i; ++j) {
                    const double p = row[j] / denom;
                    for (std::size_t c = 0; c < dv; ++c)
                        orow[c] += p * v[((b * time + j) * heads + h) * dv + c];
                }
            }
    return out;
}

// heads_in: [B,heads,T,d]. Mean over groups of (concat . W_O + b).
dvec aggregate_groups(const dvec& heads_in, std::size_t batch, std::size_t heads, std::size_t time,
                      std::size_t d, std::size_t group_size, std::span<const float> wo_w,
                      std::span<const float> wo_b) {
    const std::size_t groups = heads / group_size;
    const std::size_t width = group_size * d;
    dvec out(batch * time * width, 0.0);
    dvec cat(width, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < time; ++t) {
            double* orow = &out[(b * time + t) * width];
            for (std::size_t g = 0; g < groups; ++g) {
                for (std::size_t hl = 0; hl < group_size; ++hl) {
                    const std::size_t h = g * group_size + hl;
                    for (std::size_t c = 0; c < d; ++c)
                        cat[hl * d + c] = heads_in[((b * heads + h) * time + t) * d + c];
                }
                for (std::size_t o = 0; o < width; ++o) {
                    double acc = static_cast<double>(wo_b[o]);
                    for (std::size_t i = 0; i < width; ++i) acc += cat[i] * static_cast<double>(wo_w[i * width + o]);
                    orow[o] += acc;
                }
            }
            const double inv = 1.0 / static_cast<double>(groups);
            for (std::size_t o = 0; o < width; ++o) orow[o] *= inv;
        }
    return out;
}

dvec sas_layer_double(const dvec& x, std::size_t batch, std::size_t time, const AttentionConfig& cfg,
                      SasParams<float>& p) {
    const std::size_t h = static_cast<std::size_t>(cfg.n_heads);
    const std::size_t d = static_cast<std::size_t>(cfg.head_dim);
    const std::size_t c = static_cast<std::size_t>(cfg.d_model);
    const std::size_t kvg = static_cast<std::size_t>(cfg.kv_groups);
    const std::size_t bt = batch * time;

    // Base projections; K/V produced with kv_groups heads, then repeated.
    dvec q = project_rows(x, bt, c, p.wq.data(), h * d);
    const dvec kg = project_rows(x, bt, c, p.wk.data(), kvg * d);
    const dvec vg = project_rows(x, bt, c, p.wv.data(), kvg * d);
    const std::size_t reps = h / kvg;
    dvec k(bt * h * d), v(bt * h * d);
    for (std::size_t r = 0; r < bt; ++r)
        for (std::size_t hi = 0; hi < h; ++hi)
            for (std::size_t ci = 0; ci < d; ++ci) {
                k[(r * h + hi) * d + ci] = kg[(r * kvg + hi / reps) * d + ci];
                v[(r * h + hi) * d + ci] = vg[(r * kvg + hi / reps) * d + ci];
            }

    std::size_t heads = h, dq = d;
    if (cfg.expansion_enabled) {
        const std::size_t hh = static_cast<std::size_t>(cfg.sim_heads);
        const std::size_t dh = static_cast<std::size_t>(cfg.sim_head_dim);
        const std::size_t kernel = static_cast<std::size_t>(cfg.kernel);
        q = expand_heads(q, bt, h, hh, d, p.q_conv1_w.data(), p.q_conv1_b.data(), p.q_conv2_w.data(),
                         p.q_conv2_b.data(), kernel);
        k = expand_heads(k, bt, h, hh, d, p.k_conv1_w.data(), p.k_conv1_b.data(), p.k_conv2_w.data(),
                         p.k_conv2_b.data(), kernel);
        v = expand_heads(v, bt, h, hh, d, p.v_conv1_w.data(), p.v_conv1_b.data(), p.v_conv2_w.data(),
                         p.v_conv2_b.data(), kernel);
        q = expand_features(q, bt * hh, d, dh, p.q_lin1_w.data(), p.q_lin1_b.data(), p.q_lin2_w.data(),
                            p.q_lin2_b.data());
        k = expand_features(k, bt * hh, d, dh, p.k_lin1_w.data(), p.k_lin1_b.data(), p.k_lin2_w.data(),
                            p.k_lin2_b.data());
        heads = hh;
        dq = dh;
    }

    const std::size_t scale_dim = (cfg.expansion_enabled && cfg.scale_by_expanded_dim)
                                      ? static_cast<std::size_t>(cfg.sim_head_dim)
                                      : d;
    const double scale = 1.0 / std::sqrt(static_cast<double>(scale_dim));
    const dvec attn = attend_causal(q, k, v, batch, time, heads, dq, d, scale);
    return aggregate_groups(attn, batch, heads, time, d, h, p.wo_w.data(), p.wo_b.data());
}

void layer_norm_rows(dvec& x, std::size_t rows, std::size_t c, std::span<const float> scale, dvec& out) {
    constexpr double eps = 1e-5;
    out.resize(rows * c);
    for (std::size_t r = 0; r < rows; ++r) {
        double mean = 0.0;
        for (std::size_t i = 0; i < c; ++i) mean += x[r * c + i];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
            const double dlt = x[r * c + i] - mean;
            var += dlt * dlt;
        }
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < c; ++i)
            out[r * c + i] = (x[r * c + i] - mean) * inv * static_cast<double>(scale[i]);
    }
}

}  // namespace

TensorD oracle_sas_forward(const TensorF& x, const AttentionConfig& cfg, SasParams<float>& p) {
    const int batch = x.dim(0), time = x.dim(1);
    const dvec xd = to_double(x.data());
    dvec y = sas_layer_double(xd, static_cast<std::size_t>(batch), static_cast<std::size_t>(time), cfg, p);
    return TensorD::from_data({batch, time, cfg.n_heads * cfg.head_dim}, std::move(y));
}

TensorD oracle_model_forward(const std::vector<std::int32_t>& tokens, int batch, int time,
                             ModelParams<float>& params, const ModelConfig& cfg) {
    const std::size_t bt = static_cast<std::size_t>(batch) * static_cast<std::size_t>(time);
    const std::size_t c = static_cast<std::size_t>(cfg.d_model);
    auto tok = params.tok_emb.data();
    auto pos = params.pos_emb.data();

    dvec x(bt * c);
    for (std::size_t n = 0; n < bt; ++n) {
        const std::size_t t = n % static_cast<std::size_t>(time);
        const std::size_t id = static_cast<std::size_t>(tokens[n]);
        for (std::size_t i = 0; i < c; ++i)
            x[n * c + i] = static_cast<double>(tok[id * c + i]) + static_cast<double>(pos[t * c + i]);
    }

    const double gc = 0.7978845608028654;
    const double ga = 0.044715;
    dvec normed;
    for (auto& layer : params.layers) {
        layer_norm_rows(x, bt, c, layer.ln1_scale.data(), normed);
        const dvec attn = sas_layer_double(normed, static_cast<std::size_t>(batch),
                                           static_cast<std::size_t>(time), cfg.attention, layer.attn);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += attn[i];

        layer_norm_rows(x, bt, c, layer.ln2_scale.data(), normed);
        const std::size_t hidden = static_cast<std::size_t>(cfg.mlp_hidden());
        dvec m = project_rows(normed, bt, c, layer.mlp_fc_w.data(), hidden);
        auto fc_b = layer.mlp_fc_b.data();
        for (std::size_t r = 0; r < bt; ++r)
            for (std::size_t i = 0; i < hidden; ++i) {
                double v = m[r * hidden + i] + static_cast<double>(fc_b[i]);
                const double u = gc * (v + ga * v * v * v);
                m[r * hidden + i] = 0.5 * v * (1.0 + std::tanh(u));
            }
        dvec proj = project_rows(m, bt, hidden, layer.mlp_proj_w.data(), c);
        auto proj_b = layer.mlp_proj_b.data();
        for (std::size_t r = 0; r < bt; ++r)
            for (std::size_t i = 0; i < c; ++i) x[r * c + i] += proj[r * c + i] + static_cast<double>(proj_b[i]);
    }

    layer_norm_rows(x, bt, c, params.ln_f_scale.data(), normed);
    auto head = params.tied ? params.tok_emb.data() : params.lm_head.data();
    const std::size_t vocab = static_cast<std::size_t>(cfg.vocab_size);
    dvec logits(bt * vocab, 0.0);
    for (std::size_t r = 0; r < bt; ++r)
        for (std::size_t v = 0; v < vocab; ++v) {
            double acc = 0.0;
            for (std::size_t i = 0; i < c; ++i) acc += normed[r * c + i] * static_cast<double>(head[v * c + i]);
            logits[r * vocab + v] = acc;
        }
    return TensorD::from_data({batch, time, cfg.vocab_size}, std::move(logits));
}

OracleReport compare_to_oracle(const std::string& operation, std::span<const float> got,
                               std::span<const double> want, double abs_tol) {
    OracleReport rep;
    rep.operation = operation;
    if (got.size() != want.size()) {
        rep.pass = false;
        rep.max_abs_err = std::numeric_limits<double>::infinity();
        return rep;
    }
    for (std::size_t i = 0; i < got.size(); ++i) {
        const double a = static_cast<double>(got[i]);
        const double abs_err = std::abs(a - want[i]);
        const double rel_err = abs_err / std::max(std::abs(want[i]), 1e-12);
        if (abs_err > rep.max_abs_err) {
            rep.max_abs_err = abs_err;
            rep.worst_index = static_cast<std::int64_t>(i);
        }
        if (rel_err > rep.max_rel_err) rep.max_rel_err = rel_err;
    }
    rep.pass = rep.max_abs_err <= abs_tol;
    return rep;
}

}  // namespace sas::verify
