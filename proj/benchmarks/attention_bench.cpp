#include <benchmark/benchmark.h>

#include "sas/attention.hpp"
#include "sas/model.hpp"
#include "sas/ops.hpp"
#include "sas/rng.hpp"

using namespace sas;

namespace {

AttentionConfig bench_attention_cfg(bool expanded) {
    AttentionConfig cfg;
    cfg.d_model = 64;
    cfg.n_heads = 2;
    cfg.head_dim = 32;
    cfg.kv_groups = 2;
    cfg.expansion_enabled = expanded;
    cfg.sim_heads = 6;
    cfg.sim_head_dim = 48;
    cfg.kernel = 1;
    return cfg;
}

SasParams<float> bench_params(const AttentionConfig& cfg, Rng& rng) {
    SasParams<float> p = make_sas_params<float>(cfg);
    for_each_sas_param(p, [&](const char*, TensorF& t) {
        for (auto& v : t.data()) v = static_cast<float>(0.05 * rng.normal());
    });
    return p;
}

void BM_attention_layer(benchmark::State& state) {
    const bool expanded = state.range(0) != 0;
    const int time = static_cast<int>(state.range(1));
    AttentionConfig cfg = bench_attention_cfg(expanded);
    Rng rng(11);
    SasParams<float> p = bench_params(cfg, rng);
    TensorF x({4, time, cfg.d_model});
    for (auto& v : x.data()) v = static_cast<float>(rng.normal());
    for (auto _ : state) {
        TensorF y = sas_forward(x, cfg, p, nullptr);
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetLabel(expanded ? "sas" : "mha");
}
BENCHMARK(BM_attention_layer)->Args({0, 64})->Args({1, 64})->Args({0, 128})->Args({1, 128});

void BM_train_step(benchmark::State& state) {
    const bool expanded = state.range(0) != 0;
    ModelConfig cfg;
    cfg.vocab_size = 256;
    cfg.n_layers = 2;
    cfg.d_model = 64;
    cfg.context_len = 64;
    cfg.attention = bench_attention_cfg(expanded);
    ModelParams<float> params = init_model_params(cfg, 1);

    Rng rng(12);
    const int batch = 4, time = 48;
    std::vector<std::int32_t> tokens(static_cast<std::size_t>(batch) * time), targets(tokens.size());
    for (auto& t : tokens) t = static_cast<std::int32_t>(rng.uniform_below(256));
    for (auto& t : targets) t = static_cast<std::int32_t>(rng.uniform_below(256));

    for (auto _ : state) {
        TapeF tape;
        TensorF logits = model_forward(tokens, batch, time, params, cfg, &tape);
        TensorF loss = cross_entropy(logits, targets, &tape);
        params.zero_grad();
        tape.backward(loss);
        benchmark::DoNotOptimize(loss.item());
    }
    state.SetLabel(expanded ? "sas" : "mha");
}
BENCHMARK(BM_train_step)->Arg(0)->Arg(1);

}  // namespace
