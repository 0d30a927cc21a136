#include "adpc/analysis.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "adpc/util.hpp"

namespace adpc::analysis {

using ag::Mat;
using ag::Var;

SaliencyTable embedding_saliency(const nn::ParameterStore& params,
                                 const train::TrainConfig& cfg,
                                 const text::Vocabulary& vocab,
                                 const std::vector<data::SampleRecord>& records,
                                 const std::string& class_name, int n_samples) {
    if (n_samples < 1) throw InvalidSpec("embedding_saliency: n_samples >= 1");
    const int class_idx = data::label_index(class_name, cfg.model.n_classes);
    std::vector<data::SampleRecord> selected;
    for (const auto& r : records) {
        if (r.label == class_name) selected.push_back(r);
        if (static_cast<int>(selected.size()) == n_samples) break;
    }
    if (selected.empty())
        throw ClassAbsent("no samples of class " + class_name + " in manifest");

    auto samples = train::load_samples(selected, vocab, cfg.model);
    const Eigen::Index v = params.at("text.embed.table").rows();
    std::vector<Mat> norms(samples.size());
    util::parallel_for(samples.size(), cfg.n_threads, [&](size_t i) {
        nn::Binder bind(params);
        Var logits = frontdoor::adpc_forward(samples[i].input, bind, cfg.model, {});
        Var target = ag::pick(logits, 0, class_idx);
        ag::backward(target);
        const Mat g = bind.grad_of("text.embed.table");
        Mat rows(v, 1);
        for (Eigen::Index r = 0; r < v; ++r) rows(r, 0) = g.row(r).norm();
        norms[i] = std::move(rows);
    });

    SaliencyTable table;
    table.class_name = class_name;
    table.n_samples = static_cast<int>(samples.size());
    table.checkpoint_digest = cfg.digest();
    table.scores.assign(static_cast<size_t>(v), 0.0);
    for (const auto& rows : norms)
        for (Eigen::Index r = 0; r < v; ++r)
            table.scores[static_cast<size_t>(r)] += rows(r, 0);
    for (double& s : table.scores) s /= static_cast<double>(samples.size());
    const double mx = *std::max_element(table.scores.begin(), table.scores.end());
    if (mx > 0)
        for (double& s : table.scores) s /= mx;
    return table;
}

std::vector<RankedToken> ranking_report(const SaliencyTable& table,
                                        const text::Vocabulary& vocab, int top_k) {
    if (top_k < 0 || top_k > static_cast<int>(table.scores.size()))
        throw InvalidSpec("ranking_report: top_k exceeds vocabulary size");
    std::vector<int> ids(table.scores.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
        if (table.scores[static_cast<size_t>(a)] != table.scores[static_cast<size_t>(b)])
            return table.scores[static_cast<size_t>(a)] >
                   table.scores[static_cast<size_t>(b)];
        return a < b;
    });
    std::vector<RankedToken> out;
    for (int k = 0; k < top_k; ++k) {
        RankedToken t;
        t.rank = k + 1;
        t.token_id = ids[static_cast<size_t>(k)];
        t.token = vocab.token(t.token_id);
        t.score = table.scores[static_cast<size_t>(t.token_id)];
        out.push_back(std::move(t));
    }
    return out;
}

std::string ranking_csv(const std::vector<RankedToken>& ranking) {
    std::ostringstream out;
    out << "rank,token,score\n";
    for (const auto& r : ranking)
        out << r.rank << ',' << r.token << ',' << util::format_double(r.score) << '\n';
    return out.str();
}

FeatureStage feature_stage_from_string(const std::string& s) {
    if (s == "post_fda_pooled") return FeatureStage::kPostFdaPooled;
    if (s == "multimodal_pooled") return FeatureStage::kMultimodalPooled;
    throw InvalidSpec("unknown feature stage: " + s);
}

namespace {

Mat pooled_features(const frontdoor::SampleInput& input, const nn::ParameterStore& params,
                    const nn::ModelConfig& cfg, FeatureStage stage) {
    nn::Binder bind(params);
    nn::RunCtx ctx;
    nn::FeatureMatrix fv =
        std::holds_alternative<nn::VolumeGrid>(input.visual)
            ? nn::visual_encode(std::get<nn::VolumeGrid>(input.visual), bind, cfg, ctx)
            : nn::visual_encode(std::get<Mat>(input.visual), bind, cfg, ctx);
    nn::FeatureMatrix ft = nn::text_encode(input.token_ids, input.token_mask, bind,
                                           cfg, ctx);
    nn::FeatureMatrix f = frontdoor::concat_multimodal(fv, ft);
    nn::FeatureMatrix f_mm = frontdoor::multimodal_encode(f, bind, cfg, ctx);
    if (stage == FeatureStage::kMultimodalPooled)
        return ag::mean_rows_masked(f_mm.data, f_mm.mask).value();
    if (cfg.ablate_cf_fda)
        throw InvalidSpec("post_fda_pooled is undefined for the ablated model");
    nn::FeatureMatrix mediator = fusion::cf_forward(fv, ft, bind, cfg, ctx);
    nn::FeatureMatrix m_do = frontdoor::fda_mdo(f_mm, mediator, cfg, ctx);
    nn::FeatureMatrix f_out = frontdoor::fda_out(f_mm, mediator, m_do, cfg, ctx);
    return ag::mean_rows_masked(f_out.data, f_out.mask).value();
}

}  // namespace

void export_features(const nn::ParameterStore& params, const train::TrainConfig& cfg,
                     const text::Vocabulary& vocab,
                     const std::vector<data::SampleRecord>& records,
                     FeatureStage stage, const std::string& path) {
    auto samples = train::load_samples(records, vocab, cfg.model);
    std::vector<Mat> rows(samples.size());
    util::parallel_for(samples.size(), cfg.n_threads, [&](size_t i) {
        rows[i] = pooled_features(samples[i].input, params, cfg.model, stage);
    });
    std::ostringstream out;
    out << "id,label";
    for (int j = 0; j < cfg.model.d_model; ++j) out << ",f" << j;
    out << '\n';
    for (size_t i = 0; i < samples.size(); ++i) {
        out << records[i].id << ',' << records[i].label;
        for (Eigen::Index j = 0; j < rows[i].cols(); ++j)
            out << ',' << util::format_double(rows[i](0, j));
        out << '\n';
    }
    util::write_file(path, out.str());
}

}  // namespace adpc::analysis
