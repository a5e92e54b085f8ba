#include "cefm/classify.hpp"

#include "cefm/align.hpp"  // NonFiniteLoss

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cefm {

namespace {

double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

MlpParams train_head(const LabeledDataset& data, const HeadConfig& cfg) {
    const int n = data.z.rows;
    const int d = data.z.cols;
    if (n == 0) throw SingleClass("empty dataset");
    if (static_cast<int>(data.labels.size()) != n)
        throw DimMismatch("labels do not match dataset rows");

    long npos = 0;
    for (int y : data.labels) npos += (y == 1);
    const long nneg = n - npos;
    if (npos == 0 || nneg == 0)
        throw SingleClass("training needs both classes, got " + std::to_string(npos) +
                          " positives of " + std::to_string(n));

    // weight inverse to class frequency, normalized so weights average to 1
    const double wpos = cfg.class_weighting ? n / (2.0 * npos) : 1.0;
    const double wneg = cfg.class_weighting ? n / (2.0 * nneg) : 1.0;

    // seeded He-uniform init; the objective is convex, so seeds shift the
    // finite-epoch endpoint only slightly
    Rng rng(cfg.seed);
    MlpParams head = init_mlp({d, 1}, {Activation::Identity}, rng);

    AdamState st = make_adam_state(head);
    MlpGrads g = zero_grads_like(head);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::fill(g.w[0].data.begin(), g.w[0].data.end(), 0.0);
        g.b[0][0] = 0.0;
        double loss = 0.0;
        for (int i = 0; i < n; ++i) {
            const double* zi = data.z.row(i);
            double logit = head.layers[0].b[0];
            const double* w = head.layers[0].w.row(0);
            for (int k = 0; k < d; ++k) logit += w[k] * zi[k];
            const double p = sigmoid(logit);
            const double y = data.labels[i] == 1 ? 1.0 : 0.0;
            const double wt = data.labels[i] == 1 ? wpos : wneg;
            const double eps = 1e-12;
            loss -= wt * (y * std::log(p + eps) + (1.0 - y) * std::log(1.0 - p + eps));
            const double dlogit = wt * (p - y) / n;
            g.b[0][0] += dlogit;
            double* gw = g.w[0].row(0);
            for (int k = 0; k < d; ++k) gw[k] += dlogit * zi[k];
        }
        if (!std::isfinite(loss)) throw NonFiniteLoss("head training diverged");
        adam_step(head, g, st, cfg.lr);
    }
    return head;
}

double predict(const MlpParams& head, const double* z, int dim) {
    if (head.layers.size() != 1 || head.in_dim() != dim)
        throw DimMismatch("classification head dim mismatch");
    double logit = head.layers[0].b[0];
    const double* w = head.layers[0].w.row(0);
    for (int k = 0; k < dim; ++k) logit += w[k] * z[k];
    return sigmoid(logit);
}

std::vector<double> predict_all(const MlpParams& head, const Matrix& z) {
    std::vector<double> scores(z.rows);
    for (int i = 0; i < z.rows; ++i) scores[i] = predict(head, z.row(i), z.cols);
    return scores;
}

double auc_rank(const std::vector<double>& scores, const std::vector<int>& labels) {
    const std::size_t n = scores.size();
    long npos = 0;
    for (int y : labels) npos += (y == 1);
    const long nneg = static_cast<long>(n) - npos;
    if (npos == 0 || nneg == 0) return std::numeric_limits<double>::quiet_NaN();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // midranks over tied score groups
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }

    double rank_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        if (labels[k] == 1) rank_sum += rank[k];

    return (rank_sum - static_cast<double>(npos) * (npos + 1) / 2.0) /
           (static_cast<double>(npos) * static_cast<double>(nneg));
}

Metrics evaluate_scores(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.empty() || scores.size() != labels.size())
        throw DimMismatch("evaluate: scores/labels size mismatch");

    Metrics m;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] > 0.5;  // tie at 0.5 classifies negative
        const bool truth = labels[i] == 1;
        if (pred && truth)
            ++m.tp;
        else if (pred && !truth)
            ++m.fp;
        else if (!pred && !truth)
            ++m.tn;
        else
            ++m.fn;
    }
    const long total = m.total();
    m.accuracy = static_cast<double>(m.tp + m.tn) / total;
    if (m.tp + m.fp == 0) {
        m.precision = 0.0;
        m.degenerate_precision = true;
    } else {
        m.precision = static_cast<double>(m.tp) / (m.tp + m.fp);
    }
    m.specificity = (m.tn + m.fp) > 0 ? static_cast<double>(m.tn) / (m.tn + m.fp) : 0.0;
    m.sensitivity = (m.tp + m.fn) > 0 ? static_cast<double>(m.tp) / (m.tp + m.fn) : 0.0;

    m.auc = auc_rank(scores, labels);
    m.auc_defined = std::isfinite(m.auc);
    return m;
}

Metrics evaluate(const MlpParams& head, const LabeledDataset& data) {
    return evaluate_scores(predict_all(head, data.z), data.labels);
}

nlohmann::ordered_json metrics_to_json(const Metrics& m) {
    nlohmann::ordered_json j;
    j["accuracy"] = m.accuracy;
    j["precision"] = m.precision;
    j["specificity"] = m.specificity;
    j["sensitivity"] = m.sensitivity;
    if (m.auc_defined)
        j["auc"] = m.auc;
    else
        j["auc"] = nullptr;  // AUC undefined with a single class
    j["tp"] = m.tp;
    j["fp"] = m.fp;
    j["tn"] = m.tn;
    j["fn"] = m.fn;
    j["n"] = m.total();
    if (m.degenerate_precision) j["degenerate_precision"] = true;
    return j;
}

}  // namespace cefm
