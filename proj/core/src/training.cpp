#include "sas/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sas/checkpoint.hpp"
#include "sas/config_file.hpp"
#include "sas/ops.hpp"

namespace sas {

namespace fs = std::filesystem;

int TrainConfig::resolved_warmup() const {
    if (warmup_steps >= 0) return warmup_steps;
    const int w = total_steps / 50;  // 2% of the run
    return w > 0 ? w : 1;
}

void TrainConfig::validate() const {
    if (total_steps < 1) throw ConfigError("train.total_steps must be >= 1");
    if (resolved_warmup() >= total_steps)
        throw ConfigError("train.warmup_steps (" + std::to_string(resolved_warmup()) +
                          ") must be < train.total_steps (" + std::to_string(total_steps) + ")");
    if (lr_max <= 0.0f || lr_min < 0.0f || lr_min > lr_max)
        throw ConfigError("train: need 0 <= lr_min <= lr_max and lr_max > 0");
    if (batch_size < 1 || seq_len < 1) throw ConfigError("train: batch_size and seq_len must be >= 1");
    if (eval_interval < 1 || eval_batches < 1)
        throw ConfigError("train: eval_interval and eval_batches must be >= 1");
    if (clip_norm <= 0.0f) throw ConfigError("train.clip_norm must be positive");
    if (beta1 < 0.0f || beta1 >= 1.0f || beta2 < 0.0f || beta2 >= 1.0f)
        throw ConfigError("train: betas must lie in [0,1)");
}

double cosine_lr(std::int64_t step, const TrainConfig& cfg) {
    if (step < 0) throw UsageError("cosine_lr: negative step");
    const std::int64_t warmup = cfg.resolved_warmup();
    const double lr_max = static_cast<double>(cfg.lr_max);
    const double lr_min = static_cast<double>(cfg.lr_min);
    if (step < warmup) return lr_max * static_cast<double>(step) / static_cast<double>(warmup);
    if (step > cfg.total_steps) return lr_min;
    const std::int64_t span = cfg.total_steps - warmup;
    const std::int64_t pos = step - warmup;
    // Exact values at the boundary points; std::cos(M_PI/2) is not exactly 0.
    if (pos == 0) return lr_max;
    if (pos == span) return lr_min;
    if (2 * pos == span) return 0.5 * (lr_max + lr_min);
    const double r = static_cast<double>(pos) / static_cast<double>(span);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(3.14159265358979323846 * r));
}

std::string run_record_csv(const RunRecord& r) {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%lld,%s,%.9g,%.6g,%.9g,%lld,%.3f", static_cast<long long>(r.step),
                  r.split.c_str(), r.loss, r.ppl, r.lr, static_cast<long long>(r.tokens), r.wall_ms);
    return buf;
}

DatasetView DatasetView::load(const std::string& path, double val_fraction) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open corpus file: " + path);
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_bytes(std::move(data), val_fraction);
}

DatasetView DatasetView::from_bytes(std::vector<std::uint8_t> data, double val_fraction) {
    if (val_fraction <= 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction must be in (0,1)");
    DatasetView ds;
    ds.bytes = std::move(data);
    ds.train_end = static_cast<std::size_t>(static_cast<double>(ds.bytes.size()) * (1.0 - val_fraction));
    return ds;
}

Batch sample_batch(const DatasetView& ds, bool from_val, int batch, int time, Rng& rng) {
    const std::size_t begin = from_val ? ds.train_end : 0;
    const std::size_t end = from_val ? ds.bytes.size() : ds.train_end;
    const std::size_t region = end - begin;
    if (region < static_cast<std::size_t>(time) + 1)
        throw ConfigError(std::string(from_val ? "validation" : "train") + " region has " +
                          std::to_string(region) + " bytes, need at least seq_len+1 = " +
                          std::to_string(time + 1));
    const std::size_t starts = region - static_cast<std::size_t>(time);
    Batch b;
    b.batch = batch;
    b.time = time;
    b.inputs.resize(static_cast<std::size_t>(batch) * time);
    b.targets.resize(static_cast<std::size_t>(batch) * time);
    for (int i = 0; i < batch; ++i) {
        const std::size_t start = begin + static_cast<std::size_t>(rng.uniform_below(starts));
        for (int t = 0; t < time; ++t) {
            b.inputs[static_cast<std::size_t>(i) * time + t] = ds.bytes[start + static_cast<std::size_t>(t)];
            b.targets[static_cast<std::size_t>(i) * time + t] = ds.bytes[start + static_cast<std::size_t>(t) + 1];
        }
    }
    return b;
}

double clip_grad_norm(ModelParams<float>& params, double max_norm) {
    double sq = 0.0;
    params.for_each([&](const char*, TensorF& t) {
        for (float g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    });
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        params.for_each([&](const char*, TensorF& t) {
            for (float& g : t.grad()) g = static_cast<float>(static_cast<double>(g) * scale);
        });
    }
    return norm;
}

AdamW::AdamW(ModelParams<float>& params, const TrainConfig& cfg) : cfg_(cfg) {
    params.for_each([&](const char* name, TensorF& t) {
        Slot s;
        s.tensor = t;
        s.name = name;
        const std::string n(name);
        s.decay = t.ndim() >= 2 && n.find(".scale") == std::string::npos && n != "pos_emb";
        s.m.assign(static_cast<std::size_t>(t.numel()), 0.0f);
        s.v.assign(static_cast<std::size_t>(t.numel()), 0.0f);
        slots_.push_back(std::move(s));
    });
}

void AdamW::step(double lr) {
    for (const Slot& s : slots_) {
        const TensorF& t = s.tensor;
        for (float g : t.grad())
            if (!std::isfinite(g)) throw NumericError("adamw: non-finite gradient in " + s.name);
    }
    ++t_;
    const float b1 = cfg_.beta1, b2 = cfg_.beta2;
    const float corr1 = 1.0f - std::pow(b1, static_cast<float>(t_));
    const float corr2 = 1.0f - std::pow(b2, static_cast<float>(t_));
    const float lrf = static_cast<float>(lr);
    const float eps = cfg_.adam_eps;
    for (Slot& s : slots_) {
        auto p = s.tensor.data();
        auto g = s.tensor.grad();
        const std::size_t n = p.size();
        if (s.decay && cfg_.weight_decay != 0.0f) {
            const float wd = lrf * cfg_.weight_decay;
            for (std::size_t i = 0; i < n; ++i) p[i] -= wd * p[i];
        }
        float* m = s.m.data();
        float* v = s.v.data();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            const float mhat = m[i] / corr1;
            const float vhat = v[i] / corr2;
            p[i] -= lrf * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

double eval_loss(ModelParams<float>& params, const ModelConfig& cfg, const std::vector<Batch>& batches) {
    double total = 0.0;
    for (const Batch& b : batches) {
        TensorF logits = model_forward(b.inputs, b.batch, b.time, params, cfg, static_cast<TapeF*>(nullptr));
        TensorF loss = cross_entropy(logits, b.targets, static_cast<TapeF*>(nullptr));
        total += static_cast<double>(loss.item());
    }
    return total / static_cast<double>(batches.size());
}

TrainResult train_on_dataset(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const DatasetView& ds,
                             const std::string& out_dir) {
    model_cfg.validate();
    train_cfg.validate();
    if (train_cfg.seq_len > model_cfg.context_len)
        throw ConfigError("train.seq_len (" + std::to_string(train_cfg.seq_len) + ") exceeds model.context_len (" +
                          std::to_string(model_cfg.context_len) + ")");
    fs::create_directories(out_dir);

    ModelParams<float> params = init_model_params(model_cfg, train_cfg.seed);
    AdamW opt(params, train_cfg);

    // Validation batches are pre-drawn from a stream keyed only by the seed,
    // so every variant trained with the same seed evaluates on the same data.
    Rng train_rng = Rng(train_cfg.seed).derive(0x7261696eu);
    Rng val_rng = Rng(train_cfg.seed).derive(0x76616cu);
    std::vector<Batch> val_batches;
    val_batches.reserve(static_cast<std::size_t>(train_cfg.eval_batches));
    for (int i = 0; i < train_cfg.eval_batches; ++i)
        val_batches.push_back(sample_batch(ds, true, train_cfg.batch_size, train_cfg.seq_len, val_rng));

    const std::string csv_path = out_dir + "/run.csv";
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot write " + csv_path);
    csv << run_csv_header() << "\n";

    const std::string ckpt_config = canonical_config_text(model_config_to_kv(model_cfg));
    TrainResult result;
    const auto t0 = std::chrono::steady_clock::now();
    auto wall_ms = [&t0]() {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    };

    double interval_loss = 0.0;
    int interval_count = 0;
    for (int step = 0; step < train_cfg.total_steps; ++step) {
        const double lr = cosine_lr(step + 1, train_cfg);
        Batch batch = sample_batch(ds, false, train_cfg.batch_size, train_cfg.seq_len, train_rng);

        TapeF tape;
        TensorF logits = model_forward(batch.inputs, batch.batch, batch.time, params, model_cfg, &tape);
        TensorF loss = cross_entropy(logits, batch.targets, &tape);
        const float loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
            save_checkpoint(out_dir + "/diagnostic_nan.ckpt", ckpt_config, params);
            throw NumericError("training halted: non-finite loss at step " + std::to_string(step + 1) +
                               " (diagnostic checkpoint written)");
        }
        params.zero_grad();
        tape.backward(loss);
        clip_grad_norm(params, static_cast<double>(train_cfg.clip_norm));
        try {
            opt.step(lr);
        } catch (const NumericError&) {
            save_checkpoint(out_dir + "/diagnostic_nan.ckpt", ckpt_config, params);
            throw;
        }

        result.step_losses.push_back(loss_value);
        interval_loss += static_cast<double>(loss_value);
        ++interval_count;

        const std::int64_t done = step + 1;
        if (done % train_cfg.eval_interval == 0 || done == train_cfg.total_steps) {
            const std::int64_t tokens = done * train_cfg.batch_size * train_cfg.seq_len;
            RunRecord tr{done, "train", interval_loss / interval_count, 0.0, lr, tokens, wall_ms()};
            tr.ppl = std::exp(tr.loss);
            const double vl = eval_loss(params, model_cfg, val_batches);
            RunRecord vr{done, "val", vl, std::exp(vl), lr, tokens, wall_ms()};
            csv << run_record_csv(tr) << "\n" << run_record_csv(vr) << "\n";
            csv.flush();
            result.records.push_back(tr);
            result.records.push_back(vr);
            result.final_val_loss = vl;
            interval_loss = 0.0;
            interval_count = 0;
        }
    }

    result.checkpoint_path = out_dir + "/model.ckpt";
    save_checkpoint(result.checkpoint_path, ckpt_config, params);
    return result;
}

TrainResult train_model(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        const std::string& corpus_path, const std::string& out_dir) {
    DatasetView ds = DatasetView::load(corpus_path);
    return train_on_dataset(model_cfg, train_cfg, ds, out_dir);
}

}  // namespace sas
