#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cefm {

struct BadDims : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major matrix of doubles. All training math runs in double;
// single precision appears only in embedding storage.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    double& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }

    double* row(int i) { return data.data() + static_cast<std::size_t>(i) * cols; }
    const double* row(int i) const { return data.data() + static_cast<std::size_t>(i) * cols; }
};

std::uint64_t splitmix64_next(std::uint64_t& state);

// Deterministic sub-seed for a named purpose, so one --seed drives every
// random stream in a run without the streams colliding.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);

// xoshiro256** seeded via splitmix64. Identical seed, identical stream.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next();
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);
    double normal();                        // standard normal, Box-Muller
    std::uint64_t below(std::uint64_t n);   // [0, n), rejection sampled

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::uint64_t s_[4];
};

enum class Activation { Relu, Identity };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct Layer {
    Matrix w;                // out x in
    std::vector<double> b;   // out
    Activation act = Activation::Identity;
};

struct MlpParams {
    std::vector<Layer> layers;

    int in_dim() const { return layers.empty() ? 0 : layers.front().w.cols; }
    int out_dim() const { return layers.empty() ? 0 : layers.back().w.rows; }
};

// He-uniform weights (bound sqrt(6/fan_in)), zero biases.
MlpParams init_mlp(const std::vector<int>& dims, const std::vector<Activation>& acts, Rng& rng);

// Default activation plan: relu on hidden layers, identity on the last.
MlpParams init_mlp(const std::vector<int>& dims, Rng& rng);

struct ForwardCache {
    std::vector<Matrix> inputs;  // inputs[l] = input to layer l; inputs[0] is the batch
    std::vector<Matrix> pre;     // pre[l] = pre-activation of layer l
};

Matrix mlp_forward(const MlpParams& p, const Matrix& x, ForwardCache* cache = nullptr);

struct MlpGrads {
    std::vector<Matrix> w;
    std::vector<std::vector<double>> b;
};

MlpGrads zero_grads_like(const MlpParams& p);
void accumulate(MlpGrads& into, const MlpGrads& g);

// Exact analytic gradients of whatever mlp_forward cached. Returns grad
// w.r.t. the batch input.
Matrix mlp_backward(const MlpParams& p, const ForwardCache& cache, const Matrix& grad_out,
                    MlpGrads& grads);

struct AdamState {
    MlpGrads m;
    MlpGrads v;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

AdamState make_adam_state(const MlpParams& p);
void adam_step(MlpParams& p, const MlpGrads& g, AdamState& st, double lr);

// MLP1 checkpoint schema. Round-trips weights exactly.
nlohmann::json mlp_to_json(const MlpParams& p);
MlpParams mlp_from_json(const nlohmann::json& j);

}  // namespace cefm
