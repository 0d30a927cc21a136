#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adpc/autodiff.hpp"
#include "adpc/rng.hpp"

namespace adpc::nn {

using ag::Mat;
using ag::Var;

// Token features plus per-token validity. The mask travels outside the tape;
// masked tokens get zero attention weight as keys and are skipped by pooling.
struct FeatureMatrix {
    Var data;
    std::vector<uint8_t> mask;

    Eigen::Index tokens() const { return data.rows(); }
    Eigen::Index dim() const { return data.cols(); }
};

enum class VisualSource { kVolume, kFeatures };
enum class Eq8Values { kF, kM };

struct ModelConfig {
    int d_model = 64;
    int n_heads = 4;
    int text_blocks = 6;
    int visual_blocks = 6;
    int mm_blocks = 4;
    int ffn_ratio = 4;
    double dropout = 0.1;
    int vocab_size = 2048;
    int max_len = 128;
    int vol_h = 32, vol_w = 32, vol_d = 32;
    int patch = 8;
    VisualSource visual_source = VisualSource::kVolume;
    int feature_tokens = 0;  // token count when visual_source == kFeatures
    int n_classes = 3;
    bool ablate_cf_fda = false;        // drop CF + FDA stages structurally
    Eq8Values fda_eq8_values = Eq8Values::kF;

    int visual_tokens() const;
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// Named tensors in a stable insertion order; the order defines checkpoint
// layout and gradient-merge order, so it must not depend on map iteration.
class ParameterStore {
public:
    int add(const std::string& name, Mat init);
    int index(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Mat& at(int idx) { return *values_[static_cast<size_t>(idx)]; }
    const Mat& at(int idx) const { return *values_[static_cast<size_t>(idx)]; }
    Mat& at(const std::string& name) { return at(index(name)); }
    const Mat& at(const std::string& name) const { return at(index(name)); }
    std::shared_ptr<const Mat> ptr(int idx) const { return values_[static_cast<size_t>(idx)]; }
    const std::string& name(int idx) const { return names_[static_cast<size_t>(idx)]; }
    size_t size() const { return names_.size(); }
    size_t scalar_count() const;

private:
    std::vector<std::string> names_;
    std::vector<std::shared_ptr<Mat>> values_;
    std::map<std::string, int> index_;
};

// Per-tensor gradient accumulator aligned with a ParameterStore.
using GradVec = std::vector<Mat>;

// Binds store tensors as tape leaves, one leaf per tensor per graph, and
// collects their gradients after the reverse pass.
class Binder {
public:
    explicit Binder(const ParameterStore& store)
        : store_(&store), leaves_(store.size()) {}

    Var operator()(const std::string& name);
    const ParameterStore& store() const { return *store_; }

    // grads[i] += d(loss)/d(param i); allocates rows on first touch.
    void collect(GradVec& grads) const;
    // Gradient of one tensor from this graph (zeros if untouched).
    Mat grad_of(const std::string& name) const;

private:
    const ParameterStore* store_;
    std::vector<Var> leaves_;
};

// Collects every row-stochastic attention matrix produced during a forward
// pass; used by shape/normalization tests.
struct AttnTrace {
    std::vector<Mat> weights;
};

struct RunCtx {
    bool training = false;
    Rng* rng = nullptr;          // dropout stream; required when training
    AttnTrace* trace = nullptr;  // optional attention capture
};

// Standalone softmax over rows (axis=1) or columns (axis=0); the tape
// equivalents live in adpc::ag.
Mat softmax(const Mat& scores, int axis);

struct MhaParams {
    Var wq, bq, wk, bk, wv, bv, wo, bo;
};
MhaParams bind_mha(Binder& bind, const std::string& path);

FeatureMatrix mha(const FeatureMatrix& query_src, const FeatureMatrix& key_src,
                  const FeatureMatrix& value_src, const MhaParams& p, int n_heads,
                  const RunCtx& ctx = {});

Var layer_norm(const Var& x, const Var& weight, const Var& bias, double eps = 1e-5);

// Pre-norm transformer block: x + MHA(LN(x)) then + FFN(LN(.)).
FeatureMatrix encoder_block(const FeatureMatrix& x, Binder& bind,
                            const std::string& path, const ModelConfig& cfg,
                            const RunCtx& ctx);

struct VolumeGrid {
    int h = 0, w = 0, d = 0;
    std::vector<double> voxels;  // index (z * h + y) * w + x

    size_t size() const { return voxels.size(); }
    double& at(int x, int y, int z) {
        return voxels[(static_cast<size_t>(z) * h + y) * w + x];
    }
};

FeatureMatrix patch_embed_3d(const VolumeGrid& vol, int patch, Binder& bind,
                             const std::string& path, int pos_tokens);

struct TokenSequenceView {
    const std::vector<int>* ids;
    const std::vector<uint8_t>* mask;
};

FeatureMatrix text_encode(const std::vector<int>& ids, const std::vector<uint8_t>& mask,
                          Binder& bind, const ModelConfig& cfg, const RunCtx& ctx);

// Visual path: either a raw volume (patch-embedded internally) or a
// precomputed token x d_model feature matrix from an external extractor.
FeatureMatrix visual_encode(const VolumeGrid& vol, Binder& bind, const ModelConfig& cfg,
                            const RunCtx& ctx);
FeatureMatrix visual_encode(const Mat& features, Binder& bind, const ModelConfig& cfg,
                            const RunCtx& ctx);

// Creates every trainable tensor for the configured model. Weights are
// normal(0, 0.02), biases zero, norm affine identity, gains alpha/beta 1,
// caam lambda 0.5, classifier zero.
ParameterStore init_parameters(const ModelConfig& cfg, uint64_t seed);

// True for tensors excluded from weight decay (biases and norm affine).
bool is_no_decay_param(const std::string& name);

}  // namespace adpc::nn
