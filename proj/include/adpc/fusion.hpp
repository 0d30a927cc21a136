#pragma once

#include "adpc/nn.hpp"

namespace adpc::fusion {

using nn::Binder;
using nn::FeatureMatrix;
using nn::ModelConfig;
using nn::RunCtx;

struct CrossAttended {
    FeatureMatrix f_vtt;  // visual queries over textual keys/values, scaled by alpha
    FeatureMatrix f_tvv;  // textual queries over visual keys/values, scaled by beta
};

CrossAttended cross_attend(const FeatureMatrix& fv, const FeatureMatrix& ft,
                           Binder& bind, const ModelConfig& cfg, const RunCtx& ctx);

// Token-axis concatenation, f_vtt rows first; masks concatenate in the same
// order.
FeatureMatrix fuse_concat(const FeatureMatrix& f_vtt, const FeatureMatrix& f_tvv);

// Dual-branch causal attention: shared scores s feed a causal branch
// softmax(s) and a confounder branch softmax(-s); the combined mix
// A*v - lambda * Abar*v goes through the shared output projection and a
// residual connection. lambda is clamped to [0, 1] at read time.
FeatureMatrix caam_forward(const FeatureMatrix& f_cm, Binder& bind,
                           const ModelConfig& cfg, const RunCtx& ctx);

// Full CF module: LN(CaaM(concat(cross_attend(fv, ft)))). The result is the
// mediator; token count is n_v + n_t.
FeatureMatrix cf_forward(const FeatureMatrix& fv, const FeatureMatrix& ft,
                         Binder& bind, const ModelConfig& cfg, const RunCtx& ctx);

}  // namespace adpc::fusion
