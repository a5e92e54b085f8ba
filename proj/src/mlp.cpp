#include "cefm/mlp.hpp"

#include <cmath>
#include <cstring>

namespace cefm {

std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

static std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
    std::uint64_t state = seed ^ fnv1a64(purpose);
    return splitmix64_next(state);
}

Rng::Rng(std::uint64_t seed) {
    std::uint64_t state = seed;
    for (auto& w : s_) w = splitmix64_next(state);
}

static inline std::uint64_t rotl64(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

std::uint64_t Rng::next() {
    const std::uint64_t result = rotl64(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl64(s_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal() {
    // Box-Muller; draws two uniforms per call, keeps the cosine branch.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = next();
    } while (x >= limit);
    return x % n;
}

std::string activation_name(Activation a) {
    return a == Activation::Relu ? "relu" : "identity";
}

Activation activation_from_name(const std::string& name) {
    if (name == "relu") return Activation::Relu;
    if (name == "identity") return Activation::Identity;
    throw BadDims("unknown activation: " + name);
}

MlpParams init_mlp(const std::vector<int>& dims, const std::vector<Activation>& acts, Rng& rng) {
    if (dims.size() < 2) throw BadDims("init_mlp needs at least 2 dims");
    if (acts.size() != dims.size() - 1) throw BadDims("activation plan length must be dims-1");
    for (int d : dims)
        if (d < 1) throw BadDims("layer dims must be >= 1");

    MlpParams p;
    p.layers.resize(dims.size() - 1);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const int fan_in = dims[l];
        const int fan_out = dims[l + 1];
        const double bound = std::sqrt(6.0 / fan_in);
        Layer& layer = p.layers[l];
        layer.w = Matrix(fan_out, fan_in);
        for (double& v : layer.w.data) v = rng.uniform(-bound, bound);
        layer.b.assign(fan_out, 0.0);
        layer.act = acts[l];
    }
    return p;
}

MlpParams init_mlp(const std::vector<int>& dims, Rng& rng) {
    if (dims.size() < 2) throw BadDims("init_mlp needs at least 2 dims");
    std::vector<Activation> acts(dims.size() - 1, Activation::Relu);
    acts.back() = Activation::Identity;
    return init_mlp(dims, acts, rng);
}

Matrix mlp_forward(const MlpParams& p, const Matrix& x, ForwardCache* cache) {
    if (p.layers.empty()) throw BadDims("forward on empty MLP");
    if (x.cols != p.in_dim())
        throw DimMismatch("forward: input dim " + std::to_string(x.cols) + " != " +
                          std::to_string(p.in_dim()));
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
    }

    Matrix a = x;
    for (const Layer& layer : p.layers) {
        const int n = a.rows;
        const int in = layer.w.cols;
        const int out = layer.w.rows;
        Matrix z(n, out);
        for (int i = 0; i < n; ++i) {
            const double* ai = a.row(i);
            double* zi = z.row(i);
            for (int o = 0; o < out; ++o) zi[o] = layer.b[o];
            for (int k = 0; k < in; ++k) {
                const double aik = ai[k];
                const double* wk = layer.w.data.data() + k;  // column k, stride = in
                for (int o = 0; o < out; ++o) zi[o] += aik * wk[static_cast<std::size_t>(o) * in];
            }
        }
        if (cache) {
            cache->inputs.push_back(std::move(a));
            cache->pre.push_back(z);
        }
        if (layer.act == Activation::Relu) {
            for (double& v : z.data) v = v > 0.0 ? v : 0.0;
        }
        a = std::move(z);
    }
    return a;
}

MlpGrads zero_grads_like(const MlpParams& p) {
    MlpGrads g;
    g.w.reserve(p.layers.size());
    g.b.reserve(p.layers.size());
    for (const Layer& layer : p.layers) {
        g.w.emplace_back(layer.w.rows, layer.w.cols);
        g.b.emplace_back(layer.b.size(), 0.0);
    }
    return g;
}

void accumulate(MlpGrads& into, const MlpGrads& g) {
    if (into.w.size() != g.w.size()) throw ShapeMismatch("accumulate: layer count differs");
    for (std::size_t l = 0; l < g.w.size(); ++l) {
        for (std::size_t i = 0; i < g.w[l].data.size(); ++i) into.w[l].data[i] += g.w[l].data[i];
        for (std::size_t i = 0; i < g.b[l].size(); ++i) into.b[l][i] += g.b[l][i];
    }
}

Matrix mlp_backward(const MlpParams& p, const ForwardCache& cache, const Matrix& grad_out,
                    MlpGrads& grads) {
    const std::size_t nl = p.layers.size();
    if (cache.inputs.size() != nl || cache.pre.size() != nl)
        throw ShapeMismatch("backward: cache does not match params");
    if (grad_out.rows != cache.pre.back().rows || grad_out.cols != p.out_dim())
        throw ShapeMismatch("backward: grad_out shape mismatch");
    if (grads.w.size() != nl) grads = zero_grads_like(p);

    Matrix da = grad_out;
    for (std::size_t li = nl; li-- > 0;) {
        const Layer& layer = p.layers[li];
        const Matrix& z = cache.pre[li];
        const Matrix& in = cache.inputs[li];
        const int n = da.rows;
        const int out = layer.w.rows;
        const int fan_in = layer.w.cols;

        // dz = da * act'(z)
        Matrix dz = da;
        if (layer.act == Activation::Relu) {
            for (std::size_t i = 0; i < dz.data.size(); ++i)
                if (z.data[i] <= 0.0) dz.data[i] = 0.0;
        }

        Matrix& gw = grads.w[li];
        std::vector<double>& gb = grads.b[li];
        std::fill(gw.data.begin(), gw.data.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);

        for (int i = 0; i < n; ++i) {
            const double* dzi = dz.row(i);
            const double* ini = in.row(i);
            for (int o = 0; o < out; ++o) {
                const double d = dzi[o];
                gb[o] += d;
                double* gwo = gw.row(o);
                for (int k = 0; k < fan_in; ++k) gwo[k] += d * ini[k];
            }
        }

        // da_prev = dz * W
        Matrix prev(n, fan_in);
        for (int i = 0; i < n; ++i) {
            const double* dzi = dz.row(i);
            double* pi = prev.row(i);
            for (int o = 0; o < out; ++o) {
                const double d = dzi[o];
                const double* wo = layer.w.row(o);
                for (int k = 0; k < fan_in; ++k) pi[k] += d * wo[k];
            }
        }
        da = std::move(prev);
    }
    return da;
}

AdamState make_adam_state(const MlpParams& p) {
    AdamState st;
    st.m = zero_grads_like(p);
    st.v = zero_grads_like(p);
    return st;
}

void adam_step(MlpParams& p, const MlpGrads& g, AdamState& st, double lr) {
    if (g.w.size() != p.layers.size() || st.m.w.size() != p.layers.size())
        throw ShapeMismatch("adam_step: shape mismatch");
    st.step += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));

    auto update = [&](double& param, double grad, double& m, double& v) {
        m = st.beta1 * m + (1.0 - st.beta1) * grad;
        v = st.beta2 * v + (1.0 - st.beta2) * grad * grad;
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        param -= lr * mhat / (std::sqrt(vhat) + st.eps);
    };

    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        Layer& layer = p.layers[l];
        if (g.w[l].data.size() != layer.w.data.size() || g.b[l].size() != layer.b.size())
            throw ShapeMismatch("adam_step: layer shape mismatch");
        for (std::size_t i = 0; i < layer.w.data.size(); ++i)
            update(layer.w.data[i], g.w[l].data[i], st.m.w[l].data[i], st.v.w[l].data[i]);
        for (std::size_t i = 0; i < layer.b.size(); ++i)
            update(layer.b[i], g.b[l][i], st.m.b[l][i], st.v.b[l][i]);
    }
}

nlohmann::json mlp_to_json(const MlpParams& p) {
    nlohmann::json j;
    j["schema"] = "MLP1";
    std::vector<int> dims;
    std::vector<std::string> acts;
    dims.push_back(p.in_dim());
    for (const Layer& layer : p.layers) {
        dims.push_back(layer.w.rows);
        acts.push_back(activation_name(layer.act));
    }
    j["dims"] = dims;
    j["activations"] = acts;
    nlohmann::json layers = nlohmann::json::array();
    for (const Layer& layer : p.layers) {
        nlohmann::json jl;
        nlohmann::json w = nlohmann::json::array();
        for (int o = 0; o < layer.w.rows; ++o) {
            nlohmann::json row = nlohmann::json::array();
            for (int k = 0; k < layer.w.cols; ++k) row.push_back(layer.w(o, k));
            w.push_back(std::move(row));
        }
        jl["w"] = std::move(w);
        jl["b"] = layer.b;
        layers.push_back(std::move(jl));
    }
    j["layers"] = std::move(layers);
    return j;
}

MlpParams mlp_from_json(const nlohmann::json& j) {
    if (j.value("schema", "") != "MLP1") throw BadDims("not an MLP1 document");
    const auto dims = j.at("dims").get<std::vector<int>>();
    const auto acts = j.at("activations").get<std::vector<std::string>>();
    if (dims.size() < 2 || acts.size() != dims.size() - 1)
        throw BadDims("MLP1: inconsistent dims/activations");

    MlpParams p;
    const auto& layers = j.at("layers");
    if (layers.size() != acts.size()) throw BadDims("MLP1: layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Layer layer;
        layer.act = activation_from_name(acts[l]);
        const auto& w = layers[l].at("w");
        layer.w = Matrix(dims[l + 1], dims[l]);
        if (static_cast<int>(w.size()) != dims[l + 1]) throw BadDims("MLP1: weight rows mismatch");
        for (int o = 0; o < dims[l + 1]; ++o) {
            const auto& row = w[o];
            if (static_cast<int>(row.size()) != dims[l]) throw BadDims("MLP1: weight cols mismatch");
            for (int k = 0; k < dims[l]; ++k) layer.w(o, k) = row[k].get<double>();
        }
        layer.b = layers[l].at("b").get<std::vector<double>>();
        if (static_cast<int>(layer.b.size()) != dims[l + 1]) throw BadDims("MLP1: bias size mismatch");
        p.layers.push_back(std::move(layer));
    }
    return p;
}

}  // namespace cefm
