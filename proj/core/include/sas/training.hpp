#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sas/model.hpp"
#include "sas/rng.hpp"

namespace sas {

struct TrainConfig {
    float lr_max = 3e-3f;
    float lr_min = 3e-4f;
    int warmup_steps = -1;  // negative: resolved to 2% of total_steps (at least 1)
    int total_steps = 1000;
    float beta1 = 0.9f;
    float beta2 = 0.95f;
    float weight_decay = 0.1f;
    float clip_norm = 1.0f;
    float adam_eps = 1e-8f;
    int batch_size = 8;
    int seq_len = 64;
    std::uint64_t seed = 1;
    int eval_interval = 100;
    int eval_batches = 8;

    int resolved_warmup() const;
    void validate() const;
};

// Linear warmup to lr_max over warmup_steps, then cosine decay to lr_min at
// total_steps; beyond that, clamped to lr_min. Warmup end, decay midpoint and
// decay end hit lr_max, (lr_max+lr_min)/2 and lr_min exactly.
double cosine_lr(std::int64_t step, const TrainConfig& cfg);

struct RunRecord {
    std::int64_t step = 0;
    std::string split;
    double loss = 0.0;
    double ppl = 0.0;
    double lr = 0.0;
    std::int64_t tokens = 0;
    double wall_ms = 0.0;
};

inline const char* run_csv_header() { return "step,split,loss,ppl,lr,tokens,wall_ms"; }
std::string run_record_csv(const RunRecord& r);

// Byte corpus with a train/val split; validation windows never cross into the
// training region.
struct DatasetView {
    std::vector<std::uint8_t> bytes;
    std::size_t train_end = 0;

    static DatasetView load(const std::string& path, double val_fraction = 0.1);
    static DatasetView from_bytes(std::vector<std::uint8_t> data, double val_fraction = 0.1);
};

// Uniform random contiguous window from the chosen split; targets are the
// inputs shifted by one byte.
Batch sample_batch(const DatasetView& ds, bool from_val, int batch, int time, Rng& rng);

// Global L2 clip over all parameter gradients. Returns the pre-clip norm.
double clip_grad_norm(ModelParams<float>& params, double max_norm);

// AdamW with decoupled weight decay. Decay applies to matrix weights only
// (norm scales, biases and the positional table are exempt).
class AdamW {
public:
    AdamW(ModelParams<float>& params, const TrainConfig& cfg);

    // Throws NumericError naming the tensor if any gradient is non-finite;
    // parameters are untouched in that case.
    void step(double lr);

private:
    struct Slot {
        TensorF tensor;
        std::string name;
        bool decay = false;
        std::vector<float> m, v;
    };
    std::vector<Slot> slots_;
    TrainConfig cfg_;
    std::int64_t t_ = 0;
};

struct TrainResult {
    std::vector<RunRecord> records;
    std::vector<float> step_losses;  // one entry per optimisation step
    std::string checkpoint_path;
    double final_val_loss = 0.0;
};

// Deterministic training loop: same seed and config give bitwise-identical
// parameters and loss trajectories. Writes run.csv and a final checkpoint
// into out_dir; a non-finite loss or gradient halts with a diagnostic
// checkpoint.
TrainResult train_model(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        const std::string& corpus_path, const std::string& out_dir);

// Same loop over an in-memory dataset (used by tests and the timing harness).
TrainResult train_on_dataset(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const DatasetView& ds,
                             const std::string& out_dir);

// Mean cross-entropy of the model on pre-drawn batches, without recording.
double eval_loss(ModelParams<float>& params, const ModelConfig& cfg, const std::vector<Batch>& batches);

}  // namespace sas
