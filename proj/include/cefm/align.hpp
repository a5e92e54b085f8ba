#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cefm/mlp.hpp"

namespace cefm {

struct ZeroNorm : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NotNormalized : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InsufficientData : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NonFiniteLoss : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Clinical encoder f_c plus the two projection heads h_v / h_c, and the
// standardization constants applied to clinical vectors before f_c.
struct ProjectionPair {
    MlpParams f_c;
    MlpParams h_v;
    MlpParams h_c;
    int d = 0;
    std::array<double, 5> clinical_mean = {0, 0, 0, 0, 0};
    std::array<double, 5> clinical_std = {1, 1, 1, 1, 1};
};

// Row i of both matrices refers to the same lesion (the positive pair).
struct AlignBatch {
    Matrix v;  // N x d_v image embeddings
    Matrix c;  // N x 5 clinical feature vectors
    std::vector<std::string> ids;
};

struct TrainConfig {
    double tau = 0.07;
    double lr = 1e-3;
    int epochs = 200;
    int batch = 64;
    std::uint64_t seed = 0;
    int d = 128;
    int hidden_clinical = 64;  // f_c hidden width
    int hidden_head = 256;     // h_v / h_c hidden width
};

// Row-wise l2 normalization in place; returns the original row norms.
// Throws ZeroNorm below 1e-12.
std::vector<double> l2_normalize_rows(Matrix& z);

// Gradient through row normalization: given the unit rows, their original
// norms and d(loss)/d(unit rows), returns d(loss)/d(pre-normalization rows).
Matrix l2_normalize_backward(const Matrix& unit, const std::vector<double>& norms,
                             const Matrix& dunit);

// Projects both modalities and l2-normalizes rows. Standardization from
// `pair` is applied to the clinical matrix before f_c.
void project_and_normalize(const ProjectionPair& pair, const Matrix& v, const Matrix& c,
                           Matrix& zv_out, Matrix& zc_out);

// Bidirectional NT-Xent on unit-norm rows. Returns the loss; writes analytic
// gradients w.r.t. both normalized matrices when the outputs are non-null.
double ntxent_loss(const Matrix& zv, const Matrix& zc, double tau, Matrix* dzv = nullptr,
                   Matrix* dzc = nullptr);

struct TrainResult {
    ProjectionPair pair;
    std::vector<double> epoch_loss;
};

// Trains f_c, h_v, h_c with the image embeddings held fixed. Clinical
// features are standardized with training-set statistics, persisted in the
// returned pair.
TrainResult train_align(const AlignBatch& data, const TrainConfig& cfg);

struct SimilarityStats {
    std::vector<double> positives;
    std::vector<double> negatives;
    double pos_mean = 0.0;
    double neg_mean = 0.0;
};

// Diagonal vs off-diagonal cosine similarities over the whole dataset.
// Negatives are subsampled (seeded) when the cross product exceeds the cap.
SimilarityStats similarity_stats(const ProjectionPair& pair, const AlignBatch& data,
                                 std::size_t max_negatives = 1000000,
                                 std::uint64_t seed = 0);

// ALIGN1 checkpoint.
nlohmann::json align_to_json(const ProjectionPair& pair, const TrainConfig& cfg);
ProjectionPair align_from_json(const nlohmann::json& j, TrainConfig* cfg_out = nullptr);

}  // namespace cefm
