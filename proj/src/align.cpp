#include "cefm/align.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cefm {

namespace {

Matrix standardize(const Matrix& c, const std::array<double, 5>& mean,
                   const std::array<double, 5>& std) {
    if (c.cols != 5) throw DimMismatch("clinical matrix must have 5 columns");
    Matrix out = c;
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < 5; ++j) out(i, j) = (out(i, j) - mean[j]) / std[j];
    return out;
}

}  // namespace

std::vector<double> l2_normalize_rows(Matrix& z) {
    std::vector<double> norms(z.rows);
    for (int i = 0; i < z.rows; ++i) {
        double s = 0.0;
        const double* row = z.row(i);
        for (int j = 0; j < z.cols; ++j) s += row[j] * row[j];
        const double n = std::sqrt(s);
        if (n < 1e-12)
            throw ZeroNorm("projected vector " + std::to_string(i) +
                           " has near-zero norm (dead relu path?)");
        norms[i] = n;
        double* rw = z.row(i);
        for (int j = 0; j < z.cols; ++j) rw[j] /= n;
    }
    return norms;
}

Matrix l2_normalize_backward(const Matrix& unit, const std::vector<double>& norms,
                             const Matrix& dunit) {
    Matrix dz(unit.rows, unit.cols);
    for (int i = 0; i < unit.rows; ++i) {
        const double* u = unit.row(i);
        const double* g = dunit.row(i);
        double dot = 0.0;
        for (int j = 0; j < unit.cols; ++j) dot += u[j] * g[j];
        double* out = dz.row(i);
        for (int j = 0; j < unit.cols; ++j) out[j] = (g[j] - dot * u[j]) / norms[i];
    }
    return dz;
}

namespace {

void check_unit_rows(const Matrix& z, const char* which) {
    for (int i = 0; i < z.rows; ++i) {
        double s = 0.0;
        const double* row = z.row(i);
        for (int j = 0; j < z.cols; ++j) s += row[j] * row[j];
        if (std::abs(std::sqrt(s) - 1.0) > 1e-6)
            throw NotNormalized(std::string(which) + " row " + std::to_string(i) +
                                " is not unit norm");
    }
}

}  // namespace

void project_and_normalize(const ProjectionPair& pair, const Matrix& v, const Matrix& c,
                           Matrix& zv_out, Matrix& zc_out) {
    if (v.rows != c.rows) throw DimMismatch("image and clinical batches differ in size");
    zv_out = mlp_forward(pair.h_v, v);
    const Matrix u = mlp_forward(pair.f_c, standardize(c, pair.clinical_mean, pair.clinical_std));
    zc_out = mlp_forward(pair.h_c, u);
    l2_normalize_rows(zv_out);
    l2_normalize_rows(zc_out);
}

double ntxent_loss(const Matrix& zv, const Matrix& zc, double tau, Matrix* dzv, Matrix* dzc) {
    if (zv.rows != zc.rows || zv.cols != zc.cols)
        throw DimMismatch("ntxent: modality matrices must share shape");
    if (tau <= 0.0) throw DimMismatch("ntxent: temperature must be positive");
    check_unit_rows(zv, "image");
    check_unit_rows(zc, "clinical");

    const int n = zv.rows;
    const int d = zv.cols;

    // similarity matrix s_ij = zv_i . zc_j, scaled by 1/tau
    Matrix s(n, n);
    for (int i = 0; i < n; ++i) {
        const double* a = zv.row(i);
        for (int j = 0; j < n; ++j) {
            const double* b = zc.row(j);
            double dot = 0.0;
            for (int k = 0; k < d; ++k) dot += a[k] * b[k];
            s(i, j) = dot / tau;
        }
    }

    // row softmax (image -> clinical) and column softmax (clinical -> image),
    // both with max subtraction
    Matrix prow(n, n), pcol(n, n);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        double mx = s(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, s(i, j));
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(s(i, j) - mx);
        for (int j = 0; j < n; ++j) prow(i, j) = std::exp(s(i, j) - mx) / z;
        loss -= s(i, i) - mx - std::log(z);
    }
    for (int j = 0; j < n; ++j) {
        double mx = s(0, j);
        for (int i = 1; i < n; ++i) mx = std::max(mx, s(i, j));
        double z = 0.0;
        for (int i = 0; i < n; ++i) z += std::exp(s(i, j) - mx);
        for (int i = 0; i < n; ++i) pcol(i, j) = std::exp(s(i, j) - mx) / z;
        loss -= s(j, j) - mx - std::log(z);
    }
    loss /= 2.0 * n;

    if (dzv || dzc) {
        // dL/ds_ij = (prow_ij - I + pcol_ij - I) / (2 N tau)
        Matrix ds(n, n);
        const double scale = 1.0 / (2.0 * n * tau);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double g = prow(i, j) + pcol(i, j);
                if (i == j) g -= 2.0;
                ds(i, j) = g * scale;
            }
        if (dzv) {
            *dzv = Matrix(n, d);
            for (int i = 0; i < n; ++i) {
                double* out = dzv->row(i);
                for (int j = 0; j < n; ++j) {
                    const double g = ds(i, j);
                    const double* b = zc.row(j);
                    for (int k = 0; k < d; ++k) out[k] += g * b[k];
                }
            }
        }
        if (dzc) {
            *dzc = Matrix(n, d);
            for (int j = 0; j < n; ++j) {
                double* out = dzc->row(j);
                for (int i = 0; i < n; ++i) {
                    const double g = ds(i, j);
                    const double* a = zv.row(i);
                    for (int k = 0; k < d; ++k) out[k] += g * a[k];
                }
            }
        }
    }
    return loss;
}

TrainResult train_align(const AlignBatch& data, const TrainConfig& cfg) {
    const int n = data.v.rows;
    if (n < 2) throw InsufficientData("alignment training needs at least 2 pairs");
    if (data.c.rows != n) throw DimMismatch("image/clinical row mismatch");
    if (data.c.cols != 5) throw DimMismatch("clinical matrix must have 5 columns");
    if (cfg.tau <= 0.0 || cfg.batch < 2 || cfg.d < 1)
        throw InsufficientData("invalid training config");

    TrainResult res;
    ProjectionPair& pair = res.pair;
    pair.d = cfg.d;

    // standardization constants from the training set
    for (int j = 0; j < 5; ++j) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += data.c(i, j);
        mean /= n;
        double var = 0.0;
        for (int i = 0; i < n; ++i) {
            const double dd = data.c(i, j) - mean;
            var += dd * dd;
        }
        const double sd = std::sqrt(var / n);
        pair.clinical_mean[j] = mean;
        pair.clinical_std[j] = sd < 1e-12 ? 1.0 : sd;
    }

    Rng rng(derive_seed(cfg.seed, "align-init"));
    pair.f_c = init_mlp({5, cfg.hidden_clinical, cfg.d}, rng);
    pair.h_v = init_mlp({data.v.cols, cfg.hidden_head, cfg.d}, rng);
    pair.h_c = init_mlp({cfg.d, cfg.hidden_head, cfg.d}, rng);

    AdamState st_fc = make_adam_state(pair.f_c);
    AdamState st_hv = make_adam_state(pair.h_v);
    AdamState st_hc = make_adam_state(pair.h_c);
    MlpGrads g_fc = zero_grads_like(pair.f_c);
    MlpGrads g_hv = zero_grads_like(pair.h_v);
    MlpGrads g_hc = zero_grads_like(pair.h_c);

    const Matrix cs = standardize(data.c, pair.clinical_mean, pair.clinical_std);

    Rng shuffle_rng(derive_seed(cfg.seed, "align-shuffle"));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    res.epoch_loss.reserve(cfg.epochs);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_sum = 0.0;
        int epoch_count = 0;

        for (int start = 0; start < n; start += cfg.batch) {
            const int bs = std::min(cfg.batch, n - start);
            if (bs < 2) break;  // drop degenerate tail batch

            Matrix vb(bs, data.v.cols), cb(bs, 5);
            for (int i = 0; i < bs; ++i) {
                const int src = order[start + i];
                std::copy(data.v.row(src), data.v.row(src) + data.v.cols, vb.row(i));
                std::copy(cs.row(src), cs.row(src) + 5, cb.row(i));
            }

            ForwardCache cache_hv, cache_fc, cache_hc;
            Matrix zv = mlp_forward(pair.h_v, vb, &cache_hv);
            Matrix u = mlp_forward(pair.f_c, cb, &cache_fc);
            Matrix zc = mlp_forward(pair.h_c, u, &cache_hc);

            Matrix zvn = zv, zcn = zc;
            const std::vector<double> nv = l2_normalize_rows(zvn);
            const std::vector<double> nc = l2_normalize_rows(zcn);

            Matrix dzvn, dzcn;
            const double loss = ntxent_loss(zvn, zcn, cfg.tau, &dzvn, &dzcn);
            if (!std::isfinite(loss))
                throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch offset " + std::to_string(start));
            epoch_sum += loss * bs;
            epoch_count += bs;

            const Matrix dzv = l2_normalize_backward(zvn, nv, dzvn);
            const Matrix dzc = l2_normalize_backward(zcn, nc, dzcn);

            mlp_backward(pair.h_v, cache_hv, dzv, g_hv);
            const Matrix du = mlp_backward(pair.h_c, cache_hc, dzc, g_hc);
            mlp_backward(pair.f_c, cache_fc, du, g_fc);

            adam_step(pair.h_v, g_hv, st_hv, cfg.lr);
            adam_step(pair.h_c, g_hc, st_hc, cfg.lr);
            adam_step(pair.f_c, g_fc, st_fc, cfg.lr);
        }
        res.epoch_loss.push_back(epoch_count > 0 ? epoch_sum / epoch_count : 0.0);
    }
    return res;
}

SimilarityStats similarity_stats(const ProjectionPair& pair, const AlignBatch& data,
                                 std::size_t max_negatives, std::uint64_t seed) {
    Matrix zv, zc;
    project_and_normalize(pair, data.v, data.c, zv, zc);
    const int n = zv.rows;
    const int d = zv.cols;

    SimilarityStats st;
    st.positives.reserve(n);
    auto sim = [&](int i, int j) {
        const double* a = zv.row(i);
        const double* b = zc.row(j);
        double dot = 0.0;
        for (int k = 0; k < d; ++k) dot += a[k] * b[k];
        return dot;
    };

    for (int i = 0; i < n; ++i) st.positives.push_back(sim(i, i));

    const std::size_t total_neg = static_cast<std::size_t>(n) * n - n;
    if (total_neg <= max_negatives) {
        st.negatives.reserve(total_neg);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (i != j) st.negatives.push_back(sim(i, j));
    } else {
        Rng rng(derive_seed(seed, "simstats-negatives"));
        st.negatives.reserve(max_negatives);
        while (st.negatives.size() < max_negatives) {
            const int i = static_cast<int>(rng.below(n));
            const int j = static_cast<int>(rng.below(n));
            if (i != j) st.negatives.push_back(sim(i, j));
        }
    }

    if (!st.positives.empty())
        st.pos_mean = std::accumulate(st.positives.begin(), st.positives.end(), 0.0) /
                      static_cast<double>(st.positives.size());
    if (!st.negatives.empty())
        st.neg_mean = std::accumulate(st.negatives.begin(), st.negatives.end(), 0.0) /
                      static_cast<double>(st.negatives.size());
    return st;
}

nlohmann::json align_to_json(const ProjectionPair& pair, const TrainConfig& cfg) {
    nlohmann::json j;
    j["schema"] = "ALIGN1";
    j["config"] = {{"tau", cfg.tau},       {"lr", cfg.lr},
                   {"epochs", cfg.epochs}, {"batch", cfg.batch},
                   {"seed", cfg.seed},     {"d", cfg.d},
                   {"hidden_clinical", cfg.hidden_clinical},
                   {"hidden_head", cfg.hidden_head}};
    j["standardization"] = {{"mean", pair.clinical_mean}, {"std", pair.clinical_std}};
    j["f_c"] = mlp_to_json(pair.f_c);
    j["h_v"] = mlp_to_json(pair.h_v);
    j["h_c"] = mlp_to_json(pair.h_c);
    return j;
}

ProjectionPair align_from_json(const nlohmann::json& j, TrainConfig* cfg_out) {
    if (j.value("schema", "") != "ALIGN1") throw DimMismatch("not an ALIGN1 document");
    ProjectionPair pair;
    pair.f_c = mlp_from_json(j.at("f_c"));
    pair.h_v = mlp_from_json(j.at("h_v"));
    pair.h_c = mlp_from_json(j.at("h_c"));
    pair.d = pair.h_v.out_dim();
    const auto& std_block = j.at("standardization");
    const auto mean = std_block.at("mean").get<std::vector<double>>();
    const auto sd = std_block.at("std").get<std::vector<double>>();
    if (mean.size() != 5 || sd.size() != 5)
        throw DimMismatch("ALIGN1: standardization vectors must have 5 entries");
    std::copy(mean.begin(), mean.end(), pair.clinical_mean.begin());
    std::copy(sd.begin(), sd.end(), pair.clinical_std.begin());
    if (cfg_out) {
        const auto& c = j.at("config");
        cfg_out->tau = c.value("tau", 0.07);
        cfg_out->lr = c.value("lr", 1e-3);
        cfg_out->epochs = c.value("epochs", 200);
        cfg_out->batch = c.value("batch", 64);
        cfg_out->seed = c.value("seed", 0ULL);
        cfg_out->d = c.value("d", pair.d);
        cfg_out->hidden_clinical = c.value("hidden_clinical", 64);
        cfg_out->hidden_head = c.value("hidden_head", 256);
    }
    return pair;
}

}  // namespace cefm
