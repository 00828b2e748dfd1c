#include "doctest.h"

#include <cmath>

#include "sas/verify/finite_diff.hpp"
#include "sas/verify/oracle.hpp"
#include "test_util.hpp"

using namespace sas;
using testutil::random_tensor;

TEST_CASE("finite differences on a pure quadratic are exact to 1e-9") {
    Rng rng(61);
    std::vector<double> coeff(12), x(12);
    for (auto& c : coeff) c = 0.5 + rng.uniform01() * 1.5;
    for (auto& v : x) v = 0.5 + rng.uniform01();
    auto loss = [&]() {
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += coeff[i] * x[i] * x[i];
        return acc;
    };
    const std::vector<double> fd = verify::finite_diff(loss, std::span<double>(x));
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double analytic = 2.0 * coeff[i] * x[i];
        CHECK(std::abs(fd[i] - analytic) / std::abs(analytic) < 1e-9);
    }
}

TEST_CASE("rel_err floors the denominator") {
    CHECK(verify::rel_err(1.0, 2.0) == doctest::Approx(0.5));
    CHECK(verify::rel_err(0.0, 1e-9) < 1e-5);  // compared at the floor scale
}

TEST_CASE("sas oracle agrees with the production layer on random tiny configs") {
    Rng rng(62);
    for (int trial = 0; trial < 8; ++trial) {
        AttentionConfig cfg;
        cfg.n_heads = 1 + static_cast<int>(rng.uniform_below(3));
        cfg.head_dim = 2 + static_cast<int>(rng.uniform_below(4));
        cfg.d_model = cfg.n_heads * cfg.head_dim;
        cfg.sim_heads = cfg.n_heads * (1 + static_cast<int>(rng.uniform_below(3)));
        cfg.sim_head_dim = cfg.head_dim + static_cast<int>(rng.uniform_below(4));
        cfg.kernel = rng.uniform_below(2) == 0 ? 1 : 3;
        cfg.kv_groups = cfg.n_heads;
        SasParams<float> p = make_sas_params<float>(cfg);
        for_each_sas_param(p, [&](const char*, TensorF& t) {
            for (auto& v : t.data()) v = static_cast<float>(0.4 * rng.normal());
        });
        TensorF x = random_tensor<float>({1 + static_cast<int>(rng.uniform_below(2)),
                                          2 + static_cast<int>(rng.uniform_below(4)), cfg.d_model},
                                         rng);
        TensorF got = sas_forward(x, cfg, p, nullptr);
        TensorD want = verify::oracle_sas_forward(x, cfg, p);
        const auto rep = verify::compare_to_oracle("sas_forward", got.data(), want.data(), 1e-5);
        CHECK(rep.pass);
    }
}

TEST_CASE("model oracle agrees with the production forward") {
    ModelConfig cfg;
    cfg.vocab_size = 17;
    cfg.n_layers = 1;
    cfg.d_model = 8;
    cfg.context_len = 6;
    cfg.attention.d_model = 8;
    cfg.attention.n_heads = 2;
    cfg.attention.head_dim = 4;
    cfg.attention.sim_heads = 4;
    cfg.attention.sim_head_dim = 6;
    cfg.attention.kernel = 3;
    cfg.attention.kv_groups = 2;
    ModelParams<float> params = init_model_params(cfg, 99);

    Rng rng(63);
    std::vector<std::int32_t> tokens(2 * 5);
    for (auto& t : tokens) t = static_cast<std::int32_t>(rng.uniform_below(17));
    TensorF got = model_forward(tokens, 2, 5, params, cfg, static_cast<TapeF*>(nullptr));
    TensorD want = verify::oracle_model_forward(tokens, 2, 5, params, cfg);
    const auto rep = verify::compare_to_oracle("model_forward", got.data(), want.data(), 1e-5);
    CHECK(rep.pass);
}

TEST_CASE("identity-configured oracle collapses to the disabled-path oracle") {
    AttentionConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.head_dim = 4;
    cfg.sim_heads = 2;
    cfg.sim_head_dim = 4;
    cfg.kernel = 1;
    cfg.kv_groups = 2;
    SasParams<float> p = make_sas_params<float>(cfg);
    Rng rng(64);
    for (TensorF* base : {&p.wq, &p.wk, &p.wv, &p.wo_w, &p.wo_b})
        for (auto& v : base->data()) v = static_cast<float>(0.4 * rng.normal());
    for (int i = 0; i < 2; ++i) {
        p.q_conv1_w.data()[i * 2 + i] = 1.0f;
        p.k_conv1_w.data()[i * 2 + i] = 1.0f;
        p.v_conv1_w.data()[i * 2 + i] = 1.0f;
    }
    for (int i = 0; i < 4; ++i) {
        p.q_lin1_w.data()[i * 4 + i] = 1.0f;
        p.k_lin1_w.data()[i * 4 + i] = 1.0f;
    }
    TensorF x = random_tensor<float>({1, 4, 8}, rng);
    TensorD with = verify::oracle_sas_forward(x, cfg, p);
    AttentionConfig off = cfg;
    off.expansion_enabled = false;
    TensorD without = verify::oracle_sas_forward(x, off, p);
    CHECK(testutil::bitwise_equal(with, without));
}

TEST_CASE("enumerate_params buckets cover the whole model") {
    ModelConfig cfg;
    cfg.vocab_size = 11;
    cfg.n_layers = 2;
    cfg.d_model = 8;
    cfg.context_len = 4;
    cfg.attention.d_model = 8;
    cfg.attention.n_heads = 2;
    cfg.attention.head_dim = 4;
    cfg.attention.sim_heads = 4;
    cfg.attention.sim_head_dim = 6;
    cfg.attention.kv_groups = 2;
    ModelParams<float> params = make_model_params<float>(cfg);
    auto counts = verify::enumerate_params(params);
    std::int64_t total = 0;
    for (const auto& [name, c] : counts) total += c;
    CHECK(total == count_params(params).total);
    CHECK(counts["sas_head_conv_weights"] + counts["sas_feat_lin_weights"] ==
          extra_param_count(cfg.attention) * cfg.n_layers);
    CHECK(counts["sas_head_conv_biases"] + counts["sas_feat_lin_biases"] ==
          extra_bias_count(cfg.attention) * cfg.n_layers);
}
