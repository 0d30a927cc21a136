#include "adpc/frontdoor.hpp"

#include <cmath>

namespace adpc::frontdoor {

FeatureMatrix concat_multimodal(const FeatureMatrix& fv, const FeatureMatrix& ft) {
    if (fv.dim() != ft.dim()) throw ShapeMismatch("concat_multimodal: d_model differs");
    Var data = ag::concat_rows(fv.data, ft.data);
    std::vector<uint8_t> mask = fv.mask;
    mask.insert(mask.end(), ft.mask.begin(), ft.mask.end());
    return FeatureMatrix{data, std::move(mask)};
}

FeatureMatrix multimodal_encode(const FeatureMatrix& f, Binder& bind,
                                const ModelConfig& cfg, const RunCtx& ctx) {
    FeatureMatrix x = f;
    for (int i = 0; i < cfg.mm_blocks; ++i)
        x = nn::encoder_block(x, bind, "mm.blk" + std::to_string(i), cfg, ctx);
    return x;
}

namespace {

Var attention_mix(const FeatureMatrix& queries, const FeatureMatrix& keys,
                  const FeatureMatrix& values, const RunCtx& ctx) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(queries.dim()));
    Var scores = ag::scale(ag::matmul_nt(queries.data, keys.data), inv_sqrt_d);
    Var attn = ag::softmax_rows_masked(scores, keys.mask);
    if (ctx.trace) ctx.trace->weights.push_back(attn.value());
    return ag::matmul(attn, values.data);
}

}  // namespace

FeatureMatrix fda_mdo(const FeatureMatrix& f, const FeatureMatrix& m,
                      const ModelConfig& cfg, const RunCtx& ctx) {
    if (f.tokens() != m.tokens() || f.dim() != m.dim())
        throw ShapeMismatch("fda_mdo: F and M shapes differ");
    const FeatureMatrix& values = cfg.fda_eq8_values == nn::Eq8Values::kF ? f : m;
    return FeatureMatrix{attention_mix(f, m, values, ctx), f.mask};
}

FeatureMatrix fda_out(const FeatureMatrix& f, const FeatureMatrix& m,
                      const FeatureMatrix& m_do, const ModelConfig& cfg,
                      const RunCtx& ctx) {
    if (f.tokens() != m_do.tokens() || f.dim() != m_do.dim() || f.tokens() != m.tokens())
        throw ShapeMismatch("fda_out: shapes differ");
    (void)cfg;
    return FeatureMatrix{attention_mix(f, m_do, m, ctx), f.mask};
}

Var classify(const FeatureMatrix& features, Binder& bind) {
    Var pooled = ag::mean_rows_masked(features.data, features.mask);
    return ag::add_rowvec(ag::matmul(pooled, bind("head.weight")), bind("head.bias"));
}

Var adpc_forward(const SampleInput& sample, Binder& bind, const ModelConfig& cfg,
                 const RunCtx& ctx) {
    FeatureMatrix fv =
        std::holds_alternative<VolumeGrid>(sample.visual)
            ? nn::visual_encode(std::get<VolumeGrid>(sample.visual), bind, cfg, ctx)
            : nn::visual_encode(std::get<Mat>(sample.visual), bind, cfg, ctx);
    FeatureMatrix ft =
        nn::text_encode(sample.token_ids, sample.token_mask, bind, cfg, ctx);

    FeatureMatrix f = concat_multimodal(fv, ft);
    FeatureMatrix f_mm = multimodal_encode(f, bind, cfg, ctx);
    if (cfg.ablate_cf_fda) return classify(f_mm, bind);

    FeatureMatrix mediator = fusion::cf_forward(fv, ft, bind, cfg, ctx);
    FeatureMatrix m_do = fda_mdo(f_mm, mediator, cfg, ctx);
    FeatureMatrix f_out = fda_out(f_mm, mediator, m_do, cfg, ctx);
    return classify(f_out, bind);
}

}  // namespace adpc::frontdoor
