#include "adpc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adpc/data.hpp"

namespace adpc::metrics {

using nlohmann::json;

double binary_auc(const std::vector<int>& labels01, const std::vector<double>& scores) {
    if (labels01.size() != scores.size())
        throw ShapeMismatch("binary_auc: label/score lengths differ");
    size_t n_pos = 0, n_neg = 0;
    for (int l : labels01) (l ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw ClassAbsentInSplit("binary_auc: a class is absent");

    // average ranks, ties shared
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(scores.size(), 0.0);
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    for (size_t k = 0; k < labels01.size(); ++k)
        if (labels01[k]) rank_sum_pos += rank[k];
    double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MetricsReport compute_metrics(const std::vector<int>& labels,
                              const std::vector<int>& preds,
                              const std::vector<std::vector<double>>& probs,
                              int n_classes) {
    if (labels.size() != preds.size())
        throw ShapeMismatch("compute_metrics: label/pred lengths differ");
    MetricsReport r;
    r.n_samples = static_cast<int>(labels.size());
    r.confusion.assign(static_cast<size_t>(n_classes),
                       std::vector<int>(static_cast<size_t>(n_classes), 0));
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_classes || preds[i] < 0 ||
            preds[i] >= n_classes)
            throw ShapeMismatch("compute_metrics: class index out of range");
        r.confusion[static_cast<size_t>(labels[i])][static_cast<size_t>(preds[i])]++;
    }

    int correct = 0;
    for (int c = 0; c < n_classes; ++c) correct += r.confusion[static_cast<size_t>(c)]
                                                              [static_cast<size_t>(c)];
    r.acc = labels.empty() ? 0.0 : static_cast<double>(correct) / r.n_samples;

    const auto& names = data::class_names(n_classes);
    double mp = 0, mr = 0, mf = 0;
    for (int c = 0; c < n_classes; ++c) {
        PerClass pc;
        pc.name = names[static_cast<size_t>(c)];
        int tp = r.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
        int fp = 0, fn = 0;
        for (int k = 0; k < n_classes; ++k) {
            if (k == c) continue;
            fp += r.confusion[static_cast<size_t>(k)][static_cast<size_t>(c)];
            fn += r.confusion[static_cast<size_t>(c)][static_cast<size_t>(k)];
        }
        pc.support = tp + fn;
        pc.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        pc.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        pc.f1 = pc.precision + pc.recall > 0
                    ? 2.0 * pc.precision * pc.recall / (pc.precision + pc.recall)
                    : 0.0;
        if (!probs.empty()) {
            std::vector<int> ovr(labels.size());
            std::vector<double> score(labels.size());
            for (size_t i = 0; i < labels.size(); ++i) {
                ovr[i] = labels[i] == c ? 1 : 0;
                score[i] = probs[i][static_cast<size_t>(c)];
            }
            try {
                pc.auc = binary_auc(ovr, score);
            } catch (const ClassAbsentInSplit&) {
                pc.auc = std::nullopt;  // undefined, reported as absent
            }
        }
        mp += pc.precision;
        mr += pc.recall;
        mf += pc.f1;
        r.per_class.push_back(std::move(pc));
    }
    r.precision = mp / n_classes;
    r.recall = mr / n_classes;
    r.f1 = mf / n_classes;

    if (!probs.empty()) {
        if (n_classes == 2) {
            r.auc = r.per_class[1].auc;  // positive class rank statistic
        } else {
            double sum = 0;
            int defined = 0;
            for (const auto& pc : r.per_class)
                if (pc.auc) {
                    sum += *pc.auc;
                    ++defined;
                }
            if (defined > 0) r.auc = sum / defined;
        }
    }
    return r;
}

json MetricsReport::to_json() const {
    json per = json::array();
    for (const auto& pc : per_class) {
        json e{{"class", pc.name},
               {"support", pc.support},
               {"precision", pc.precision},
               {"recall", pc.recall},
               {"f1", pc.f1}};
        if (pc.auc)
            e["auc"] = *pc.auc;
        else
            e["auc"] = nullptr;
        per.push_back(std::move(e));
    }
    json j{{"n_samples", n_samples},
           {"acc", acc},
           {"precision", precision},
           {"recall", recall},
           {"f1", f1},
           {"per_class", per},
           {"confusion", confusion}};
    if (auc)
        j["auc"] = *auc;
    else
        j["auc"] = nullptr;
    return j;
}

}  // namespace adpc::metrics
