#pragma once

#include <variant>

#include "adpc/fusion.hpp"
#include "adpc/nn.hpp"

namespace adpc::frontdoor {

using ag::Mat;
using ag::Var;
using nn::Binder;
using nn::FeatureMatrix;
using nn::ModelConfig;
using nn::RunCtx;
using nn::VolumeGrid;

// One decoded sample ready for the forward pass.
struct SampleInput {
    std::variant<VolumeGrid, Mat> visual;  // raw volume or precomputed features
    std::vector<int> token_ids;
    std::vector<uint8_t> token_mask;
    int label = -1;
};

// Token-axis concatenation F = fv (+) ft, visual rows first.
FeatureMatrix concat_multimodal(const FeatureMatrix& fv, const FeatureMatrix& ft);

FeatureMatrix multimodal_encode(const FeatureMatrix& f, Binder& bind,
                                const ModelConfig& cfg, const RunCtx& ctx);

// softmax(F M^T / sqrt(d_model)) times the configured value matrix (F by
// default); estimates the mediator-level intervention.
FeatureMatrix fda_mdo(const FeatureMatrix& f, const FeatureMatrix& m,
                      const ModelConfig& cfg, const RunCtx& ctx);

// softmax(F M_do^T / sqrt(d_model)) * M; estimates the multi-modal-feature
// intervention.
FeatureMatrix fda_out(const FeatureMatrix& f, const FeatureMatrix& m,
                      const FeatureMatrix& m_do, const ModelConfig& cfg,
                      const RunCtx& ctx);

// Masked mean pool over tokens, then an affine map to class logits (1 x C).
Var classify(const FeatureMatrix& features, Binder& bind);

// Full pipeline: encode both modalities, build the mediator, encode the
// concatenated features, apply the two-stage adjustment, classify. With
// cfg.ablate_cf_fda the mediator and adjustment stages are absent from the
// graph and the encoded multi-modal features feed the classifier directly.
Var adpc_forward(const SampleInput& sample, Binder& bind, const ModelConfig& cfg,
                 const RunCtx& ctx);

}  // namespace adpc::frontdoor
