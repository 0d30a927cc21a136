#include "adpc/fusion.hpp"

#include <cmath>

namespace adpc::fusion {

using ag::Var;

CrossAttended cross_attend(const FeatureMatrix& fv, const FeatureMatrix& ft,
                           Binder& bind, const ModelConfig& cfg, const RunCtx& ctx) {
    if (fv.dim() != ft.dim()) throw ShapeMismatch("cross_attend: d_model differs");
    nn::MhaParams v2t = nn::bind_mha(bind, "cf.v2t");
    nn::MhaParams t2v = nn::bind_mha(bind, "cf.t2v");
    FeatureMatrix vtt = nn::mha(fv, ft, ft, v2t, cfg.n_heads, ctx);
    FeatureMatrix tvv = nn::mha(ft, fv, fv, t2v, cfg.n_heads, ctx);
    vtt.data = ag::scale(vtt.data, bind("cf.alpha"));
    tvv.data = ag::scale(tvv.data, bind("cf.beta"));
    return CrossAttended{std::move(vtt), std::move(tvv)};
}

FeatureMatrix fuse_concat(const FeatureMatrix& f_vtt, const FeatureMatrix& f_tvv) {
    if (f_vtt.dim() != f_tvv.dim()) throw ShapeMismatch("fuse_concat: d_model differs");
    Var data = ag::concat_rows(f_vtt.data, f_tvv.data);
    std::vector<uint8_t> mask = f_vtt.mask;
    mask.insert(mask.end(), f_tvv.mask.begin(), f_tvv.mask.end());
    return FeatureMatrix{data, std::move(mask)};
}

FeatureMatrix caam_forward(const FeatureMatrix& f_cm, Binder& bind,
                           const ModelConfig& cfg, const RunCtx& ctx) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(f_cm.dim()));
    Var q = ag::add_rowvec(ag::matmul(f_cm.data, bind("cf.caam.q.weight")),
                           bind("cf.caam.q.bias"));
    Var k = ag::add_rowvec(ag::matmul(f_cm.data, bind("cf.caam.k.weight")),
                           bind("cf.caam.k.bias"));
    Var v = ag::add_rowvec(ag::matmul(f_cm.data, bind("cf.caam.v.weight")),
                           bind("cf.caam.v.bias"));
    Var scores = ag::scale(ag::matmul_nt(q, k), inv_sqrt_d);
    Var causal = ag::softmax_rows_masked(scores, f_cm.mask);
    Var confound = ag::softmax_rows_masked(ag::scale(scores, -1.0), f_cm.mask);
    if (ctx.trace) {
        ctx.trace->weights.push_back(causal.value());
        ctx.trace->weights.push_back(confound.value());
    }
    Var lambda = ag::clamp(bind("cf.caam.lambda"), 0.0, 1.0);
    Var mix = ag::sub(ag::matmul(causal, v), ag::scale(ag::matmul(confound, v), lambda));
    Var proj = ag::add_rowvec(ag::matmul(mix, bind("cf.caam.o.weight")),
                              bind("cf.caam.o.bias"));
    return FeatureMatrix{ag::add(f_cm.data, proj), f_cm.mask};
}

FeatureMatrix cf_forward(const FeatureMatrix& fv, const FeatureMatrix& ft,
                         Binder& bind, const ModelConfig& cfg, const RunCtx& ctx) {
    CrossAttended ca = cross_attend(fv, ft, bind, cfg, ctx);
    FeatureMatrix f_cm = fuse_concat(ca.f_vtt, ca.f_tvv);
    FeatureMatrix suppressed = caam_forward(f_cm, bind, cfg, ctx);
    Var m = nn::layer_norm(suppressed.data, bind("cf.ln.weight"), bind("cf.ln.bias"));
    return FeatureMatrix{m, suppressed.mask};
}

}  // namespace adpc::fusion
