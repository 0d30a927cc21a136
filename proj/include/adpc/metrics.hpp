#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adpc/errors.hpp"

namespace adpc::metrics {

struct PerClass {
    std::string name;
    int support = 0;
    double precision = 0.0;  // 0 when the class is never predicted
    double recall = 0.0;
    double f1 = 0.0;
    std::optional<double> auc;  // absent when the class is missing from labels
};

struct MetricsReport {
    int n_samples = 0;
    double acc = 0.0;
    double precision = 0.0;  // macro
    double recall = 0.0;     // macro
    double f1 = 0.0;         // macro
    std::optional<double> auc;  // binary AUC (2-class) or macro one-vs-rest
    std::vector<PerClass> per_class;
    std::vector<std::vector<int>> confusion;  // [true][predicted]

    nlohmann::json to_json() const;
};

// Mann-Whitney rank statistic; tied scores contribute 0.5 per pair.
// Throws ClassAbsentInSplit when either class is empty.
double binary_auc(const std::vector<int>& labels01, const std::vector<double>& scores);

// labels/preds in [0, n_classes); probs rows are per-class scores used for
// the AUC terms (may be empty to skip AUC).
MetricsReport compute_metrics(const std::vector<int>& labels,
                              const std::vector<int>& preds,
                              const std::vector<std::vector<double>>& probs,
                              int n_classes);

}  // namespace adpc::metrics
