#include "adpc/nn.hpp"

#include <cmath>

namespace adpc::nn {

using nlohmann::json;

int ModelConfig::visual_tokens() const {
    if (visual_source == VisualSource::kFeatures) return feature_tokens;
    return (vol_h / patch) * (vol_w / patch) * (vol_d / patch);
}

void ModelConfig::validate() const {
    if (d_model < 2 || n_heads < 1) throw ShapeMismatch("config: d_model/n_heads");
    if (d_model % n_heads != 0)
        throw ShapeMismatch("config: d_model not divisible by n_heads");
    if (visual_source == VisualSource::kVolume &&
        (vol_h % patch || vol_w % patch || vol_d % patch))
        throw IndivisibleVolume("config: volume dims not divisible by patch");
    if (visual_source == VisualSource::kFeatures && feature_tokens <= 0)
        throw ShapeMismatch("config: feature_tokens must be positive");
    if (max_len < 2) throw ShapeMismatch("config: max_len must be >= 2");
    if (n_classes < 2) throw ShapeMismatch("config: n_classes must be >= 2");
    if (dropout < 0.0 || dropout >= 1.0) throw ShapeMismatch("config: dropout");
}

json ModelConfig::to_json() const {
    return json{{"d_model", d_model},
                {"n_heads", n_heads},
                {"text_blocks", text_blocks},
                {"visual_blocks", visual_blocks},
                {"mm_blocks", mm_blocks},
                {"ffn_ratio", ffn_ratio},
                {"dropout", dropout},
                {"vocab_size", vocab_size},
                {"max_len", max_len},
                {"vol_h", vol_h},
                {"vol_w", vol_w},
                {"vol_d", vol_d},
                {"patch", patch},
                {"visual_source",
                 visual_source == VisualSource::kVolume ? "volume" : "features"},
                {"feature_tokens", feature_tokens},
                {"n_classes", n_classes},
                {"ablate_cf_fda", ablate_cf_fda},
                {"fda_eq8_values", fda_eq8_values == Eq8Values::kF ? "F" : "M"}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.text_blocks = j.value("text_blocks", c.text_blocks);
    c.visual_blocks = j.value("visual_blocks", c.visual_blocks);
    c.mm_blocks = j.value("mm_blocks", c.mm_blocks);
    c.ffn_ratio = j.value("ffn_ratio", c.ffn_ratio);
    c.dropout = j.value("dropout", c.dropout);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_len = j.value("max_len", c.max_len);
    c.vol_h = j.value("vol_h", c.vol_h);
    c.vol_w = j.value("vol_w", c.vol_w);
    c.vol_d = j.value("vol_d", c.vol_d);
    c.patch = j.value("patch", c.patch);
    c.visual_source = j.value("visual_source", "volume") == std::string("features")
                          ? VisualSource::kFeatures
                          : VisualSource::kVolume;
    c.feature_tokens = j.value("feature_tokens", c.feature_tokens);
    c.n_classes = j.value("n_classes", c.n_classes);
    c.ablate_cf_fda = j.value("ablate_cf_fda", c.ablate_cf_fda);
    c.fda_eq8_values = j.value("fda_eq8_values", "F") == std::string("M")
                           ? Eq8Values::kM
                           : Eq8Values::kF;
    return c;
}

int ParameterStore::add(const std::string& name, Mat init) {
    if (index_.count(name)) throw ShapeMismatch("duplicate parameter: " + name);
    int idx = static_cast<int>(names_.size());
    names_.push_back(name);
    values_.push_back(std::make_shared<Mat>(std::move(init)));
    index_[name] = idx;
    return idx;
}

int ParameterStore::index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeMismatch("unknown parameter: " + name);
    return it->second;
}

size_t ParameterStore::scalar_count() const {
    size_t n = 0;
    for (const auto& v : values_) n += static_cast<size_t>(v->size());
    return n;
}

Var Binder::operator()(const std::string& name) {
    int idx = store_->index(name);
    Var& slot = leaves_[static_cast<size_t>(idx)];
    if (!slot.defined()) slot = Var::leaf(store_->ptr(idx), true);
    return slot;
}

void Binder::collect(GradVec& grads) const {
    if (grads.size() != leaves_.size()) grads.resize(leaves_.size());
    for (size_t i = 0; i < leaves_.size(); ++i) {
        if (!leaves_[i].defined()) continue;
        const Mat& g = leaves_[i].grad();
        if (g.size() == 0) continue;
        if (grads[i].size() == 0)
            grads[i] = g;
        else
            grads[i] += g;
    }
}

Mat Binder::grad_of(const std::string& name) const {
    int idx = store_->index(name);
    const Var& leaf = leaves_[static_cast<size_t>(idx)];
    const Mat& v = store_->at(idx);
    if (!leaf.defined() || leaf.grad().size() == 0) return Mat::Zero(v.rows(), v.cols());
    return leaf.grad();
}

Mat softmax(const Mat& scores, int axis) {
    if (!scores.allFinite()) throw NonFiniteInput("softmax: non-finite input");
    if (axis == 0) return softmax(scores.transpose(), 1).transpose();
    Mat out(scores.rows(), scores.cols());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        double mx = scores.row(i).maxCoeff();
        out.row(i) = (scores.row(i).array() - mx).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

MhaParams bind_mha(Binder& bind, const std::string& path) {
    return MhaParams{bind(path + ".q.weight"), bind(path + ".q.bias"),
                     bind(path + ".k.weight"), bind(path + ".k.bias"),
                     bind(path + ".v.weight"), bind(path + ".v.bias"),
                     bind(path + ".o.weight"), bind(path + ".o.bias")};
}

FeatureMatrix mha(const FeatureMatrix& query_src, const FeatureMatrix& key_src,
                  const FeatureMatrix& value_src, const MhaParams& p, int n_heads,
                  const RunCtx& ctx) {
    const Eigen::Index d = query_src.dim();
    if (key_src.dim() != d || value_src.dim() != d) throw ShapeMismatch("mha: d_model");
    if (key_src.tokens() != value_src.tokens())
        throw ShapeMismatch("mha: key/value token counts differ");
    if (d % n_heads != 0) throw ShapeMismatch("mha: d_model not divisible by n_heads");
    const Eigen::Index dk = d / n_heads;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

    Var q = ag::add_rowvec(ag::matmul(query_src.data, p.wq), p.bq);
    Var k = ag::add_rowvec(ag::matmul(key_src.data, p.wk), p.bk);
    Var v = ag::add_rowvec(ag::matmul(value_src.data, p.wv), p.bv);

    std::vector<Var> heads;
    heads.reserve(static_cast<size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
        Var qh = ag::slice_cols(q, h * dk, dk);
        Var kh = ag::slice_cols(k, h * dk, dk);
        Var vh = ag::slice_cols(v, h * dk, dk);
        Var scores = ag::scale(ag::matmul_nt(qh, kh), inv_sqrt_dk);
        Var attn = ag::softmax_rows_masked(scores, key_src.mask);
        if (ctx.trace) ctx.trace->weights.push_back(attn.value());
        heads.push_back(ag::matmul(attn, vh));
    }
    Var merged = n_heads == 1 ? heads[0] : ag::concat_cols(heads);
    Var out = ag::add_rowvec(ag::matmul(merged, p.wo), p.bo);
    return FeatureMatrix{out, query_src.mask};
}

Var layer_norm(const Var& x, const Var& weight, const Var& bias, double eps) {
    return ag::add_rowvec(ag::mul_rowvec(ag::normalize_rows(x, eps), weight), bias);
}

namespace {

Var maybe_dropout(const Var& x, const ModelConfig& cfg, const RunCtx& ctx) {
    if (!ctx.training || cfg.dropout <= 0.0) return x;
    if (!ctx.rng) throw ShapeMismatch("training forward requires an rng");
    return ag::dropout(x, cfg.dropout, *ctx.rng);
}

}  // namespace

FeatureMatrix encoder_block(const FeatureMatrix& x, Binder& bind,
                            const std::string& path, const ModelConfig& cfg,
                            const RunCtx& ctx) {
    Var ln1 = layer_norm(x.data, bind(path + ".ln1.weight"), bind(path + ".ln1.bias"));
    FeatureMatrix normed{ln1, x.mask};
    MhaParams attn = bind_mha(bind, path + ".attn");
    FeatureMatrix a = mha(normed, normed, normed, attn, cfg.n_heads, ctx);
    Var h = ag::add(x.data, maybe_dropout(a.data, cfg, ctx));

    Var ln2 = layer_norm(h, bind(path + ".ln2.weight"), bind(path + ".ln2.bias"));
    Var f1 = ag::gelu(ag::add_rowvec(ag::matmul(ln2, bind(path + ".ffn.fc1.weight")),
                                     bind(path + ".ffn.fc1.bias")));
    Var f2 = ag::add_rowvec(ag::matmul(f1, bind(path + ".ffn.fc2.weight")),
                            bind(path + ".ffn.fc2.bias"));
    Var out = ag::add(h, maybe_dropout(f2, cfg, ctx));
    return FeatureMatrix{out, x.mask};
}

FeatureMatrix patch_embed_3d(const VolumeGrid& vol, int patch, Binder& bind,
                             const std::string& path, int pos_tokens) {
    Mat flat(static_cast<Eigen::Index>(vol.size()), 1);
    for (size_t i = 0; i < vol.size(); ++i)
        flat(static_cast<Eigen::Index>(i), 0) = vol.voxels[i];
    Var patches = ag::patchify3d(Var::constant(std::move(flat)), vol.h, vol.w, vol.d, patch);
    Var proj = ag::add_rowvec(ag::matmul(patches, bind(path + ".patch.weight")),
                              bind(path + ".patch.bias"));
    if (proj.rows() != pos_tokens)
        throw ShapeMismatch("patch_embed_3d: token count differs from positional table");
    Var out = ag::add(proj, bind(path + ".pos"));
    return FeatureMatrix{out, std::vector<uint8_t>(static_cast<size_t>(proj.rows()), 1)};
}

namespace {

FeatureMatrix run_blocks(FeatureMatrix x, Binder& bind, const std::string& prefix,
                         int n_blocks, const ModelConfig& cfg, const RunCtx& ctx) {
    for (int i = 0; i < n_blocks; ++i)
        x = encoder_block(x, bind, prefix + ".blk" + std::to_string(i), cfg, ctx);
    return x;
}

}  // namespace

FeatureMatrix text_encode(const std::vector<int>& ids, const std::vector<uint8_t>& mask,
                          Binder& bind, const ModelConfig& cfg, const RunCtx& ctx) {
    if (static_cast<int>(ids.size()) != cfg.max_len || mask.size() != ids.size())
        throw ShapeMismatch("text_encode: sequence length != max_len");
    Var emb = ag::embedding(bind("text.embed.table"), ids);
    Var x = ag::add(emb, bind("text.embed.pos"));
    return run_blocks(FeatureMatrix{x, mask}, bind, "text", cfg.text_blocks, cfg, ctx);
}

FeatureMatrix visual_encode(const VolumeGrid& vol, Binder& bind, const ModelConfig& cfg,
                            const RunCtx& ctx) {
    if (vol.h != cfg.vol_h || vol.w != cfg.vol_w || vol.d != cfg.vol_d)
        throw ShapeMismatch("visual_encode: volume dims differ from config");
    FeatureMatrix x = patch_embed_3d(vol, cfg.patch, bind, "visual", cfg.visual_tokens());
    return run_blocks(x, bind, "visual", cfg.visual_blocks, cfg, ctx);
}

FeatureMatrix visual_encode(const Mat& features, Binder& bind, const ModelConfig& cfg,
                            const RunCtx& ctx) {
    if (features.cols() != cfg.d_model)
        throw ShapeMismatch("visual_encode: feature width != d_model");
    if (features.rows() != cfg.visual_tokens())
        throw ShapeMismatch("visual_encode: feature token count differs from config");
    Var x = ag::add(Var::constant(features), bind("visual.pos"));
    FeatureMatrix fm{x, std::vector<uint8_t>(static_cast<size_t>(features.rows()), 1)};
    return run_blocks(fm, bind, "visual", cfg.visual_blocks, cfg, ctx);
}

namespace {

void add_affine(ParameterStore& s, Rng& rng, const std::string& path, int in, int out,
                double std_dev, bool zero = false) {
    Mat w(in, out);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j)
            w(i, j) = zero ? 0.0 : rng.normal(0.0, std_dev);
    s.add(path + ".weight", std::move(w));
    s.add(path + ".bias", Mat::Zero(1, out));
}

void add_ln(ParameterStore& s, const std::string& path, int d) {
    s.add(path + ".weight", Mat::Ones(1, d));
    s.add(path + ".bias", Mat::Zero(1, d));
}

void add_mha(ParameterStore& s, Rng& rng, const std::string& path, int d) {
    add_affine(s, rng, path + ".q", d, d, 0.02);
    add_affine(s, rng, path + ".k", d, d, 0.02);
    add_affine(s, rng, path + ".v", d, d, 0.02);
    add_affine(s, rng, path + ".o", d, d, 0.02);
}

void add_block(ParameterStore& s, Rng& rng, const std::string& path,
               const ModelConfig& cfg) {
    add_ln(s, path + ".ln1", cfg.d_model);
    add_mha(s, rng, path + ".attn", cfg.d_model);
    add_ln(s, path + ".ln2", cfg.d_model);
    add_affine(s, rng, path + ".ffn.fc1", cfg.d_model, cfg.d_model * cfg.ffn_ratio, 0.02);
    add_affine(s, rng, path + ".ffn.fc2", cfg.d_model * cfg.ffn_ratio, cfg.d_model, 0.02);
}

Mat random_mat(Rng& rng, int rows, int cols, double std_dev) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal(0.0, std_dev);
    return m;
}

}  // namespace

ParameterStore init_parameters(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ParameterStore s;
    Rng rng(seed);

    s.add("text.embed.table", random_mat(rng, cfg.vocab_size, cfg.d_model, 0.02));
    s.add("text.embed.pos", random_mat(rng, cfg.max_len, cfg.d_model, 0.02));
    for (int i = 0; i < cfg.text_blocks; ++i)
        add_block(s, rng, "text.blk" + std::to_string(i), cfg);

    if (cfg.visual_source == VisualSource::kVolume)
        add_affine(s, rng, "visual.patch", cfg.patch * cfg.patch * cfg.patch,
                   cfg.d_model, 0.02);
    s.add("visual.pos", random_mat(rng, cfg.visual_tokens(), cfg.d_model, 0.02));
    for (int i = 0; i < cfg.visual_blocks; ++i)
        add_block(s, rng, "visual.blk" + std::to_string(i), cfg);

    if (!cfg.ablate_cf_fda) {
        add_mha(s, rng, "cf.v2t", cfg.d_model);
        add_mha(s, rng, "cf.t2v", cfg.d_model);
        s.add("cf.alpha", Mat::Ones(1, 1));
        s.add("cf.beta", Mat::Ones(1, 1));
        add_mha(s, rng, "cf.caam", cfg.d_model);
        s.add("cf.caam.lambda", Mat::Constant(1, 1, 0.5));
        add_ln(s, "cf.ln", cfg.d_model);
    }

    for (int i = 0; i < cfg.mm_blocks; ++i)
        add_block(s, rng, "mm.blk" + std::to_string(i), cfg);

    add_affine(s, rng, "head", cfg.d_model, cfg.n_classes, 0.0, /*zero=*/true);
    return s;
}

bool is_no_decay_param(const std::string& name) {
    auto ends_with = [&](const std::string& suffix) {
        return name.size() >= suffix.size() &&
               name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with(".bias")) return true;
    // norm affine: ln1/ln2/cf.ln weight tensors
    if (ends_with(".weight") && name.find(".ln") != std::string::npos) return true;
    return false;
}

}  // namespace adpc::nn
