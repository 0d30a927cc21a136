#pragma once

#include <string>
#include <vector>

#include "adpc/train.hpp"

namespace adpc::analysis {

struct SaliencyTable {
    std::vector<double> scores;  // length = vocab size, max-normalized
    std::string class_name;
    int n_samples = 0;
    uint64_t checkpoint_digest = 0;
};

// Backpropagates the true-class logit to the text embedding table for the
// first n_samples manifest-order samples of the class, averages per-row
// gradient L2 norms, and normalizes the result to max 1. Rows whose token
// never occurs in the sampled texts score exactly 0. Dropout is off.
SaliencyTable embedding_saliency(const nn::ParameterStore& params,
                                 const train::TrainConfig& cfg,
                                 const text::Vocabulary& vocab,
                                 const std::vector<data::SampleRecord>& records,
                                 const std::string& class_name, int n_samples);

struct RankedToken {
    int rank = 0;
    int token_id = 0;
    std::string token;
    double score = 0.0;
};

// Top-k tokens by score, descending; ties break by ascending token id.
std::vector<RankedToken> ranking_report(const SaliencyTable& table,
                                        const text::Vocabulary& vocab, int top_k);

std::string ranking_csv(const std::vector<RankedToken>& ranking);

enum class FeatureStage { kPostFdaPooled, kMultimodalPooled };
FeatureStage feature_stage_from_string(const std::string& s);

// One CSV row per sample: id, label, pooled feature vector at the stage.
void export_features(const nn::ParameterStore& params, const train::TrainConfig& cfg,
                     const text::Vocabulary& vocab,
                     const std::vector<data::SampleRecord>& records,
                     FeatureStage stage, const std::string& path);

}  // namespace adpc::analysis
