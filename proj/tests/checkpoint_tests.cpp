#include "doctest.h"

#include <cstring>
#include <fstream>

#include "sas/checkpoint.hpp"
#include "sas/config_file.hpp"
#include "sas/ops.hpp"
#include "test_util.hpp"

using namespace sas;

namespace {

ModelConfig ckpt_cfg() {
    ModelConfig cfg;
    cfg.vocab_size = 23;
    cfg.n_layers = 2;
    cfg.d_model = 8;
    cfg.context_len = 6;
    cfg.attention.d_model = 8;
    cfg.attention.n_heads = 2;
    cfg.attention.head_dim = 4;
    cfg.attention.sim_heads = 4;
    cfg.attention.sim_head_dim = 6;
    cfg.attention.kernel = 3;
    cfg.attention.kv_groups = 1;
    cfg.attention.base_variant = BaseVariant::MQA;
    return cfg;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
    const std::string dir = testutil::scratch_dir("ckpt");
    ModelConfig cfg = ckpt_cfg();
    ModelParams<float> params = init_model_params(cfg, 77);

    const std::string text = canonical_config_text(model_config_to_kv(cfg));
    save_checkpoint(dir + "/m.ckpt", text, params);
    LoadedCheckpoint loaded = load_checkpoint(dir + "/m.ckpt");
    CHECK(loaded.config_text == text);
    CHECK(loaded.config.vocab_size == cfg.vocab_size);
    CHECK(loaded.config.attention.kernel == 3);

    std::vector<TensorF*> orig;
    params.for_each([&](const char*, TensorF& t) { orig.push_back(&t); });
    std::size_t idx = 0;
    loaded.params.for_each([&](const char*, TensorF& t) {
        CHECK(testutil::bitwise_equal(t, *orig[idx]));
        ++idx;
    });
    CHECK(idx == orig.size());

    // Bitwise identical logits on a fixed batch.
    Rng rng(78);
    std::vector<std::int32_t> tokens(2 * 5);
    for (auto& t : tokens) t = static_cast<std::int32_t>(rng.uniform_below(23));
    TensorF a = model_forward(tokens, 2, 5, params, cfg, static_cast<TapeF*>(nullptr));
    TensorF b = model_forward(tokens, 2, 5, loaded.params, loaded.config, static_cast<TapeF*>(nullptr));
    CHECK(testutil::bitwise_equal(a, b));

    // Saving the loaded params again reproduces the same file bytes.
    save_checkpoint(dir + "/m2.ckpt", loaded.config_text, loaded.params);
    CHECK(testutil::read_file(dir + "/m.ckpt") == testutil::read_file(dir + "/m2.ckpt"));
}

TEST_CASE("checkpoint loader rejects garbage") {
    const std::string dir = testutil::scratch_dir("ckpt_bad");
    {
        std::ofstream out(dir + "/bad.ckpt", std::ios::binary);
        out << "NOTACKPTfile";
    }
    CHECK_THROWS(load_checkpoint(dir + "/bad.ckpt"));
    CHECK_THROWS(load_checkpoint(dir + "/missing.ckpt"));
}
