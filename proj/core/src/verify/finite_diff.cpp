#include "sas/verify/finite_diff.hpp"

#include <cmath>

#include "sas/ops.hpp"
#include "sas/rng.hpp"

namespace sas::verify {

std::vector<double> finite_diff(const std::function<double()>& loss, std::span<double> x, double h) {
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double up = loss();
        x[i] = saved - h;
        const double down = loss();
        x[i] = saved;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

double rel_err(double a, double b, double floor) {
    const double denom = std::max(std::max(std::abs(a), std::abs(b)), floor);
    return std::abs(a - b) / denom;
}

GradCheckResult model_grad_check(const ModelConfig& cfg, std::uint64_t seed, double tolerance, int batch,
                                 int time, double h) {
    ModelParams<float> fparams = init_model_params(cfg, seed);
    ModelParams<double> params = params_to_double(fparams, cfg);

    Rng rng = Rng(seed).derive(0x67636bu);
    const std::size_t n = static_cast<std::size_t>(batch) * static_cast<std::size_t>(time);
    std::vector<std::int32_t> tokens(n), targets(n);
    for (auto& t : tokens) t = static_cast<std::int32_t>(rng.uniform_below(static_cast<std::uint64_t>(cfg.vocab_size)));
    for (auto& t : targets) t = static_cast<std::int32_t>(rng.uniform_below(static_cast<std::uint64_t>(cfg.vocab_size)));

    auto loss_value = [&]() {
        TensorD logits = model_forward(tokens, batch, time, params, cfg, static_cast<TapeD*>(nullptr));
        return static_cast<double>(cross_entropy(logits, targets, static_cast<TapeD*>(nullptr)).item());
    };

    params.zero_grad();
    {
        TapeD tape;
        TensorD logits = model_forward(tokens, batch, time, params, cfg, &tape);
        TensorD loss = cross_entropy(logits, targets, &tape);
        tape.backward(loss);
    }

    GradCheckResult result;
    result.tolerance = tolerance;
    params.for_each([&](const char* name, TensorD& t) {
        const std::vector<double> fd = finite_diff(loss_value, t.data(), h);
        auto ad = t.grad();
        for (std::size_t i = 0; i < fd.size(); ++i) {
            double estimate = fd[i];
            double re = rel_err(ad[i], estimate);
            // A central difference across a ReLU kink is invalid. Refining the
            // step resolves it: a kink artifact converges to the recorded
            // gradient, a genuine backward bug stays put.
            for (double hs = h / 4.0; re > tolerance && hs > h / 64.0; hs /= 4.0) {
                auto xspan = t.data();
                const double saved = xspan[i];
                xspan[i] = saved + hs;
                const double up = loss_value();
                xspan[i] = saved - hs;
                const double down = loss_value();
                xspan[i] = saved;
                estimate = (up - down) / (2.0 * hs);
                re = rel_err(ad[i], estimate);
            }
            const double ae = std::abs(ad[i] - estimate);
            if (re > result.max_rel_err) {
                result.max_rel_err = re;
                result.worst_param = name;
            }
            if (ae > result.max_abs_err) result.max_abs_err = ae;
        }
        result.params_checked += t.numel();
    });
    result.pass = result.max_rel_err <= tolerance;
    return result;
}

std::map<std::string, std::int64_t> enumerate_params(ModelParams<float>& params) {
    std::map<std::string, std::int64_t> counts;
    params.for_each([&](const char* cname, TensorF& t) {
        const std::string name(cname);
        const bool weight = name.find(".bias") == std::string::npos;
        std::string bucket;
        if (name.find("head_conv") != std::string::npos)
            bucket = weight ? "sas_head_conv_weights" : "sas_head_conv_biases";
        else if (name.find("feat_lin") != std::string::npos)
            bucket = weight ? "sas_feat_lin_weights" : "sas_feat_lin_biases";
        else if (name.find("attn.w") != std::string::npos)
            bucket = weight ? "base_attention_weights" : "base_attention_biases";
        else if (name.find("mlp") != std::string::npos)
            bucket = weight ? "mlp_weights" : "mlp_biases";
        else if (name.find("emb") != std::string::npos || name.find("lm_head") != std::string::npos)
            bucket = "embeddings";
        else if (name.find(".scale") != std::string::npos)
            bucket = "norm_scales";
        else
            bucket = "other";
        counts[bucket] += t.numel();
    });
    return counts;
}

}  // namespace sas::verify
