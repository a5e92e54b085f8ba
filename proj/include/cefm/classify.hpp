#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cefm/mlp.hpp"

namespace cefm {

struct SingleClass : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LabeledDataset {
    Matrix z;                       // N x d projected image embeddings
    std::vector<int> labels;        // 0 = nevus, 1 = melanoma
    std::vector<std::string> ids;
};

struct HeadConfig {
    double lr = 0.05;
    int epochs = 500;
    std::uint64_t seed = 0;
    bool class_weighting = true;
};

// Logistic head: single linear layer d -> 1, trained full-batch with
// class-weighted binary cross-entropy (weights inverse to class frequency).
MlpParams train_head(const LabeledDataset& data, const HeadConfig& cfg = {});

// sigmoid(w . z + b); hard label is score > 0.5, ties classify negative.
double predict(const MlpParams& head, const double* z, int dim);
std::vector<double> predict_all(const MlpParams& head, const Matrix& z);

struct Metrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double specificity = 0.0;
    double sensitivity = 0.0;
    double auc = 0.0;           // NaN when either class is absent
    long tp = 0, fp = 0, tn = 0, fn = 0;
    bool auc_defined = false;
    bool degenerate_precision = false;  // tp + fp == 0

    long total() const { return tp + fp + tn + fn; }
};

// Rank-statistic (Mann-Whitney) AUC with midranks for ties.
double auc_rank(const std::vector<double>& scores, const std::vector<int>& labels);

Metrics evaluate(const MlpParams& head, const LabeledDataset& data);
Metrics evaluate_scores(const std::vector<double>& scores, const std::vector<int>& labels);

nlohmann::ordered_json metrics_to_json(const Metrics& m);

}  // namespace cefm
