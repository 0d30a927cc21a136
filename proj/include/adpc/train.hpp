#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adpc/data.hpp"
#include "adpc/frontdoor.hpp"
#include "adpc/metrics.hpp"
#include "adpc/text.hpp"

namespace adpc::train {

using data::SampleRecord;
using metrics::MetricsReport;

struct TrainConfig {
    nn::ModelConfig model;
    double lr_base = 5e-4;
    int batch_size = 16;
    int epochs = 30;
    double warmup_ratio = 0.1;
    double weight_decay = 0.1;
    uint64_t seed = 0;
    double split_train = 0.8, split_val = 0.1, split_test = 0.1;
    int vocab_min_freq = 1;
    int vocab_cap = 2048;
    int n_threads = 0;  // 0 = hardware concurrency

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    uint64_t digest() const;  // fingerprint stored in checkpoints
};

// Linear warmup to lr_base over warmup_ratio * total_steps, then cosine decay
// to zero.
double cosine_lr(long step, long total_steps, const TrainConfig& cfg);

struct AdamWState {
    std::vector<ag::Mat> m, v;  // aligned with the parameter store
    long step = 0;
};

// Decoupled-weight-decay Adam (beta1 0.9, beta2 0.999, eps 1e-8) with bias
// correction; decay skips biases and norm affine tensors.
void optimizer_step(nn::ParameterStore& params, const nn::GradVec& grads,
                    AdamWState& state, double lr, double weight_decay);

// Versioned binary checkpoint: magic, version, config digest, named tensors.
void save_checkpoint(const std::string& path, const nn::ParameterStore& params,
                     uint64_t config_digest);
nn::ParameterStore load_checkpoint(const std::string& path, uint64_t expected_digest);

// Decoded, tokenized dataset held in memory.
struct LoadedSample {
    frontdoor::SampleInput input;
    std::string id;
};
std::vector<LoadedSample> load_samples(const std::vector<SampleRecord>& records,
                                       const text::Vocabulary& vocab,
                                       const nn::ModelConfig& cfg);

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    MetricsReport val;
    double lr_last = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    double best_val_acc = 0.0;
    int best_epoch = -1;
    std::string checkpoint_path;  // best-validation-ACC parameters
    std::string vocab_path;
    std::string config_path;
    std::string history_path;
    TrainConfig config;  // with the final vocab size baked in
};

// Cross-entropy minibatch training; per-epoch validation metrics; the
// best-validation-ACC checkpoint is retained. Fully deterministic under
// cfg.seed. Artifacts land in out_dir.
TrainResult train(const TrainConfig& cfg, const std::vector<SampleRecord>& train_recs,
                  const std::vector<SampleRecord>& val_recs, const std::string& out_dir);

// Convenience: stratified-splits a combined manifest per the config fractions
// and trains on the train/val parts. Returns the split for reuse.
struct SplitRecords {
    std::vector<SampleRecord> train, val, test;
};
SplitRecords split_manifest(const std::vector<SampleRecord>& records,
                            const TrainConfig& cfg);

struct LoadedCheckpoint {
    nn::ParameterStore params;
    TrainConfig config;
    text::Vocabulary vocab;
};
// Loads checkpoint.bin plus the config.json / vocab.txt saved next to it.
LoadedCheckpoint load_run(const std::string& checkpoint_path);

MetricsReport evaluate(const nn::ParameterStore& params, const TrainConfig& cfg,
                       const text::Vocabulary& vocab,
                       const std::vector<SampleRecord>& records);
MetricsReport evaluate(const std::string& checkpoint_path,
                       const std::vector<SampleRecord>& records);

struct AblationArm {
    uint64_t seed = 0;
    MetricsReport full_id, full_ood;
    MetricsReport ablated_id, ablated_ood;
    size_t full_param_count = 0, ablated_param_count = 0;
};

struct AblationResult {
    std::vector<AblationArm> arms;
    double mean_delta_acc_id = 0.0;   // full - ablated, in-distribution
    double mean_delta_acc_ood = 0.0;  // full - ablated, out-of-distribution
    nlohmann::json to_json() const;
};

// Trains the full and the CF+FDA-ablated model with identical seeds and data
// for each of n_seeds; in-distribution metrics come from the validation
// manifest, out-of-distribution metrics from the test manifest.
AblationResult run_ablation(const TrainConfig& cfg,
                            const std::vector<SampleRecord>& train_recs,
                            const std::vector<SampleRecord>& val_recs,
                            const std::vector<SampleRecord>& test_recs,
                            const std::string& out_dir, int n_seeds = 5);

}  // namespace adpc::train
