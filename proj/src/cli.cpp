#include "cefm/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "cefm/align.hpp"
#include "cefm/classify.hpp"
#include "cefm/embedding.hpp"
#include "cefm/explain.hpp"
#include "cefm/features.hpp"
#include "cefm/mlp.hpp"
#include "cefm/raster.hpp"
#include "cefm/report.hpp"

namespace fs = std::filesystem;

namespace cefm::cli {

namespace {

// ---- run configuration -------------------------------------------------

// Every result-affecting knob, merged flag > config file > default. Paths
// and execution-only settings (jobs, output locations) stay outside so the
// provenance hash is stable across equivalent runs.
struct RunConfig {
    std::uint64_t seed = 42;
    std::string axis = "vertical-centroid";
    int samples = 128;
    int threshold = 128;
    int grid = 8;
    double tau = 0.07;
    double lr = 1e-3;
    int epochs = 200;
    int batch = 64;
    int d = 128;
    int hidden_clinical = 64;
    int hidden_head = 256;
    double head_lr = 0.05;
    int head_epochs = 500;
    int concepts_k = 5;

    std::map<std::string, std::string> as_map() const {
        std::map<std::string, std::string> m;
        m["seed"] = std::to_string(seed);
        m["axis"] = axis;
        m["samples"] = std::to_string(samples);
        m["threshold"] = std::to_string(threshold);
        m["grid"] = std::to_string(grid);
        m["tau"] = format_double(tau);
        m["lr"] = format_double(lr);
        m["epochs"] = std::to_string(epochs);
        m["batch"] = std::to_string(batch);
        m["d"] = std::to_string(d);
        m["hidden_clinical"] = std::to_string(hidden_clinical);
        m["hidden_head"] = std::to_string(hidden_head);
        m["head_lr"] = format_double(head_lr);
        m["head_epochs"] = std::to_string(head_epochs);
        m["concepts_k"] = std::to_string(concepts_k);
        return m;
    }
};

std::string config_hash(const RunConfig& cfg) {
    std::string canon;
    for (const auto& [k, v] : cfg.as_map()) canon += k + "=" + v + "\n";
    return prompt_hash_hex(canon);
}

std::string provenance_line(const RunConfig& cfg) {
    std::string line = std::string("cefm ") + kVersion + " config_hash=" + config_hash(cfg);
    for (const auto& [k, v] : cfg.as_map()) line += " " + k + "=" + v;
    return line;
}

nlohmann::ordered_json provenance_json(const RunConfig& cfg) {
    nlohmann::ordered_json p;
    p["tool"] = "cefm";
    p["version"] = kVersion;
    p["seed"] = cfg.seed;
    p["config_hash"] = config_hash(cfg);
    nlohmann::ordered_json c;
    for (const auto& [k, v] : cfg.as_map()) c[k] = v;
    p["config"] = c;
    return p;
}

// Line-oriented `key = value` config files, `#` starts a comment.
std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CLI::ValidationError("--config", "cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos)
                throw CLI::ValidationError(
                    "--config", "line " + std::to_string(lineno) + " is not `key = value`");
            continue;
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!key.empty()) kv[key] = value;
    }
    return kv;
}

void apply_config_map(RunConfig& cfg, const std::map<std::string, std::string>& kv) {
    auto geti = [&](const char* k, int& into) {
        if (auto it = kv.find(k); it != kv.end()) into = std::stoi(it->second);
    };
    auto getd = [&](const char* k, double& into) {
        if (auto it = kv.find(k); it != kv.end()) into = std::stod(it->second);
    };
    if (auto it = kv.find("seed"); it != kv.end()) cfg.seed = std::stoull(it->second);
    if (auto it = kv.find("axis"); it != kv.end()) cfg.axis = it->second;
    geti("samples", cfg.samples);
    geti("threshold", cfg.threshold);
    geti("grid", cfg.grid);
    getd("tau", cfg.tau);
    getd("lr", cfg.lr);
    geti("epochs", cfg.epochs);
    geti("batch", cfg.batch);
    geti("d", cfg.d);
    geti("hidden_clinical", cfg.hidden_clinical);
    geti("hidden_head", cfg.hidden_head);
    getd("head_lr", cfg.head_lr);
    geti("head_epochs", cfg.head_epochs);
    geti("concepts_k", cfg.concepts_k);
}

void register_config_flags(CLI::App* cmd, RunConfig& cfg) {
    cmd->add_option("--seed", cfg.seed, "master seed; every random stream derives from it");
    cmd->add_option("--axis", cfg.axis, "asymmetry mirror axis: vertical-centroid or principal")
        ->check(CLI::IsMember({"vertical-centroid", "principal"}));
    cmd->add_option("--samples", cfg.samples, "contour resampling count")->check(CLI::Range(8, 100000));
    cmd->add_option("--threshold", cfg.threshold, "mask binarization threshold (0..255)")
        ->check(CLI::Range(0, 255));
    cmd->add_option("--grid", cfg.grid, "toy encoder grid size per side");
    cmd->add_option("--tau", cfg.tau, "NT-Xent temperature");
    cmd->add_option("--lr", cfg.lr, "alignment learning rate");
    cmd->add_option("--epochs", cfg.epochs, "alignment training epochs");
    cmd->add_option("--batch", cfg.batch, "alignment mini-batch size");
    cmd->add_option("--dim", cfg.d, "shared embedding dimension d");
    cmd->add_option("--hidden-clinical", cfg.hidden_clinical, "f_c hidden width");
    cmd->add_option("--hidden-head", cfg.hidden_head, "projection head hidden width");
    cmd->add_option("--head-lr", cfg.head_lr, "classification head learning rate");
    cmd->add_option("--head-epochs", cfg.head_epochs, "classification head epochs");
    cmd->add_option("--concepts-k", cfg.concepts_k, "max matched concepts");
}

AsymmetryAxis axis_from(const RunConfig& cfg) {
    return cfg.axis == "principal" ? AsymmetryAxis::Principal : AsymmetryAxis::VerticalCentroid;
}

// ---- shared data plumbing ----------------------------------------------

std::vector<fs::path> list_rasters(const fs::path& dir) {
    if (!fs::is_directory(dir))
        throw CLI::ValidationError("directory", dir.string() + " is not a directory");
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png" || ext == ".ppm" || ext == ".pgm") out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

fs::path find_raster_by_stem(const fs::path& dir, const std::string& stem) {
    for (const char* ext : {".png", ".ppm", ".pgm"}) {
        const fs::path candidate = dir / (stem + ext);
        if (fs::exists(candidate)) return candidate;
    }
    return {};
}



std::map<std::string, int> read_label_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound("no such labels file: " + path);
    std::map<std::string, int> labels;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("id,", 0) == 0) continue;
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos) continue;
        labels[line.substr(0, comma)] = std::stoi(line.substr(comma + 1));
    }
    return labels;
}

// Image embeddings for the ids in `rows`, either from an EMB1 file or from
// the toy encoder over an image directory. Exits with the offending ids when
// the sources disagree.
Matrix gather_embeddings(const std::vector<FeatureRow>& rows, const std::string& emb_path,
                         const std::string& images_dir, const RunConfig& cfg) {
    std::vector<std::vector<float>> vecs(rows.size());
    std::vector<std::string> offenders;

    if (!emb_path.empty()) {
        const EmbeddingStore store = read_embeddings(emb_path);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (!store.contains(rows[i].id)) {
                offenders.push_back(rows[i].id);
                continue;
            }
            vecs[i] = store.get(rows[i].id).values;
        }
    } else {
        for (std::size_t i = 0; i < rows.size(); ++i) {
            fs::path img = find_raster_by_stem(images_dir, rows[i].id);
            if (img.empty()) {
                offenders.push_back(rows[i].id);
                continue;
            }
            vecs[i] = toy_patch_encoder(load_image(img.string()), cfg.grid).values;
        }
    }

    if (!offenders.empty()) {
        std::ostringstream msg;
        msg << offenders.size() << " feature ids have no embedding; first offenders:";
        for (std::size_t i = 0; i < offenders.size() && i < 10; ++i) msg << " " << offenders[i];
        throw InsufficientData(msg.str());
    }

    const int dv = static_cast<int>(vecs.front().size());
    Matrix v(static_cast<int>(rows.size()), dv);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (static_cast<int>(vecs[i].size()) != dv)
            throw DimMismatch("embedding dim differs across ids");
        for (int j = 0; j < dv; ++j) v(static_cast<int>(i), j) = vecs[i][j];
    }
    return v;
}

AlignBatch batch_from(const std::vector<FeatureRow>& rows, Matrix v) {
    AlignBatch b;
    b.v = std::move(v);
    b.c = Matrix(static_cast<int>(rows.size()), 5);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto arr = rows[i].f.as_array();
        for (int j = 0; j < 5; ++j) b.c(static_cast<int>(i), j) = arr[j];
        b.ids.push_back(rows[i].id);
    }
    return b;
}

// Projected, normalized image embeddings (the classifier input space).
Matrix project_images(const ProjectionPair& pair, const Matrix& v) {
    Matrix zv = mlp_forward(pair.h_v, v);
    for (int i = 0; i < zv.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < zv.cols; ++j) s += zv(i, j) * zv(i, j);
        const double n = std::sqrt(s);
        if (n < 1e-12) throw ZeroNorm("projected image embedding has near-zero norm");
        for (int j = 0; j < zv.cols; ++j) zv(i, j) /= n;
    }
    return zv;
}

std::string companion_sev_path(const std::string& align_path) {
    const fs::path p(align_path);
    if (p.extension() == ".json") {
        fs::path q = p;
        q.replace_extension(".sev.json");
        return q.string();
    }
    return align_path + ".sev.json";
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write: " + path);
    out << text;
}

void write_json_doc(const std::string& path, const nlohmann::ordered_json& j) {
    write_text(path, j.dump(2) + "\n");
}

// ---- extract -------------------------------------------------------------

struct ExtractArgs {
    std::string images, masks, out, labels;
    int jobs = 1;
};

int cmd_extract(const ExtractArgs& a, const RunConfig& cfg) {
    const std::vector<fs::path> images = list_rasters(a.images);
    if (images.empty()) {
        std::cerr << "extract: no images found in " << a.images << "\n";
        return 2;
    }
    std::map<std::string, int> label_map;
    if (!a.labels.empty()) label_map = read_label_map(a.labels);

    struct Item {
        std::string id;
        fs::path image, mask;
    };
    std::vector<Item> items;
    std::vector<std::string> skipped;
    for (const fs::path& img : images) {
        const std::string stem = img.stem().string();
        const fs::path mask = find_raster_by_stem(a.masks, stem);
        if (mask.empty()) {
            skipped.push_back(stem + " (no mask)");
            continue;
        }
        items.push_back({stem, img, mask});
    }
    if (items.empty()) {
        std::cerr << "extract: no image/mask pairs found\n";
        return 2;
    }

    FeatureConfig fcfg;
    fcfg.axis = axis_from(cfg);
    fcfg.contour_samples = cfg.samples;

    std::vector<FeatureRow> rows(items.size());
    std::vector<char> ok(items.size(), 0);
    std::vector<std::string> errors(items.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= items.size()) return;
            try {
                const RgbImage image = load_image(items[i].image.string());
                const MaskLoadResult mr = load_mask(items[i].mask.string(), cfg.threshold);
                if (mr.empty_mask) throw EmptyMask("mask has no true pixels");
                FeatureRow r;
                r.id = items[i].id;
                r.f = extract_all(image, mr.mask, fcfg);
                auto it = label_map.find(r.id);
                r.label = it == label_map.end() ? -1 : it->second;
                rows[i] = std::move(r);
                ok[i] = 1;
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };

    const int jobs = std::max(1, a.jobs);
    std::vector<std::thread> pool;
    for (int t = 1; t < jobs; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::vector<FeatureRow> good;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (ok[i])
            good.push_back(std::move(rows[i]));
        else
            skipped.push_back(items[i].id + " (" + errors[i] + ")");
    }
    std::sort(good.begin(), good.end(),
              [](const FeatureRow& x, const FeatureRow& y) { return x.id < y.id; });

    if (good.empty()) {
        std::cerr << "extract: every pair failed\n";
        for (const std::string& s : skipped) std::cerr << "  skipped: " << s << "\n";
        return 2;
    }

    write_feature_csv(good, a.out, provenance_line(cfg));
    std::cout << "extract: wrote " << good.size() << " rows to " << a.out << ", skipped "
              << skipped.size() << "\n";
    for (const std::string& s : skipped) std::cout << "  skipped: " << s << "\n";
    return 0;
}

// ---- thresholds ----------------------------------------------------------

int cmd_thresholds(const std::string& features_path, const std::string& out,
                   const RunConfig& cfg) {
    const std::vector<FeatureRow> rows = read_feature_csv(features_path);
    std::vector<ClinicalFeatures> feats;
    feats.reserve(rows.size());
    for (const FeatureRow& r : rows) feats.push_back(r.f);
    const SeverityThresholds thr = fit_thresholds(feats);
    nlohmann::ordered_json j = thresholds_to_json(thr);
    j["provenance"] = provenance_json(cfg);
    write_json_doc(out, j);
    std::cout << "thresholds: fitted on " << feats.size() << " samples -> " << out << "\n";
    return 0;
}

// ---- train-align ----------------------------------------------------------

struct TrainAlignArgs {
    std::string features, embeddings, images, out, log;
    bool toy_encoder = false;
};

int cmd_train_align(const TrainAlignArgs& a, const RunConfig& cfg) {
    const std::vector<FeatureRow> rows = read_feature_csv(a.features);
    if (rows.size() < 2) {
        std::cerr << "train-align: need at least 2 feature rows\n";
        return 2;
    }
    Matrix v = gather_embeddings(rows, a.embeddings, a.images, cfg);
    AlignBatch data = batch_from(rows, std::move(v));

    TrainConfig tc;
    tc.tau = cfg.tau;
    tc.lr = cfg.lr;
    tc.epochs = cfg.epochs;
    tc.batch = cfg.batch;
    tc.seed = cfg.seed;
    tc.d = cfg.d;
    tc.hidden_clinical = cfg.hidden_clinical;
    tc.hidden_head = cfg.hidden_head;

    const TrainResult res = train_align(data, tc);

    nlohmann::ordered_json j = align_to_json(res.pair, tc);
    j["provenance"] = provenance_json(cfg);
    write_json_doc(a.out, j);

    // severity thresholds fitted on the same training set, kept alongside
    std::vector<ClinicalFeatures> feats;
    for (const FeatureRow& r : rows) feats.push_back(r.f);
    nlohmann::ordered_json sev = thresholds_to_json(fit_thresholds(feats));
    sev["provenance"] = provenance_json(cfg);
    write_json_doc(companion_sev_path(a.out), sev);

    const std::string log_path = a.log.empty() ? a.out + ".loss.csv" : a.log;
    std::ostringstream log;
    log << "# " << provenance_line(cfg) << "\n";
    log << "epoch,loss\n";
    for (std::size_t e = 0; e < res.epoch_loss.size(); ++e)
        log << e << "," << format_double(res.epoch_loss[e]) << "\n";
    write_text(log_path, log.str());

    std::cout << "train-align: " << rows.size() << " pairs, " << cfg.epochs
              << " epochs, final loss " << (res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back())
              << " -> " << a.out << "\n";
    return 0;
}

// ---- train-classify / evaluate ---------------------------------------------

struct ClassifyArgs {
    std::string align, features, embeddings, images, head, head_out, out, scores;
    int repeats = 1;
    bool toy_encoder = false;
};

LabeledDataset projected_dataset(const ClassifyArgs& a, const RunConfig& cfg,
                                 ProjectionPair& pair_out) {
    std::ifstream chk(a.align);
    if (!chk) throw FileNotFound("no such checkpoint: " + a.align);
    nlohmann::json cj;
    chk >> cj;
    pair_out = align_from_json(cj);

    const std::vector<FeatureRow> rows = read_feature_csv(a.features);
    const Matrix v = gather_embeddings(rows, a.embeddings, a.images, cfg);

    LabeledDataset data;
    data.z = project_images(pair_out, v);
    for (const FeatureRow& r : rows) {
        data.labels.push_back(r.label);
        data.ids.push_back(r.id);
    }
    return data;
}

LabeledDataset labeled_subset(const LabeledDataset& data) {
    LabeledDataset out;
    std::vector<int> keep;
    for (std::size_t i = 0; i < data.labels.size(); ++i)
        if (data.labels[i] >= 0) keep.push_back(static_cast<int>(i));
    out.z = Matrix(static_cast<int>(keep.size()), data.z.cols);
    for (std::size_t i = 0; i < keep.size(); ++i) {
        std::copy(data.z.row(keep[i]), data.z.row(keep[i]) + data.z.cols,
                  out.z.row(static_cast<int>(i)));
        out.labels.push_back(data.labels[keep[i]]);
        out.ids.push_back(data.ids[keep[i]]);
    }
    return out;
}

void write_scores_csv(const std::string& path, const LabeledDataset& data,
                      const std::vector<double>& scores, const RunConfig& cfg) {
    std::ostringstream out;
    out << "# " << provenance_line(cfg) << "\n";
    out << "id,score,label\n";
    for (std::size_t i = 0; i < scores.size(); ++i)
        out << data.ids[i] << "," << format_double(scores[i]) << "," << data.labels[i] << "\n";
    write_text(path, out.str());
}

int cmd_train_classify(const ClassifyArgs& a, const RunConfig& cfg) {
    ProjectionPair pair;
    const LabeledDataset all = projected_dataset(a, cfg, pair);
    const LabeledDataset data = labeled_subset(all);
    if (data.labels.empty()) {
        std::cerr << "train-classify: no labeled rows (label column all -1?)\n";
        return 2;
    }

    const int repeats = std::max(1, a.repeats);
    std::vector<Metrics> per_run;
    MlpParams first_head;
    std::vector<double> first_scores;

    for (int r = 0; r < repeats; ++r) {
        HeadConfig hc;
        hc.lr = cfg.head_lr;
        hc.epochs = cfg.head_epochs;
        hc.seed = derive_seed(cfg.seed, "head-repeat-" + std::to_string(r));
        const MlpParams head = train_head(data, hc);
        const std::vector<double> scores = predict_all(head, data.z);
        per_run.push_back(evaluate_scores(scores, data.labels));
        if (r == 0) {
            first_head = head;
            first_scores = scores;
        }
    }

    nlohmann::ordered_json j;
    j["provenance"] = provenance_json(cfg);
    if (repeats == 1) {
        j.update(metrics_to_json(per_run[0]));
    } else {
        auto agg = [&](auto get) {
            double mean = 0.0;
            for (const Metrics& m : per_run) mean += get(m);
            mean /= repeats;
            double var = 0.0;
            for (const Metrics& m : per_run) {
                const double d = get(m) - mean;
                var += d * d;
            }
            return std::pair<double, double>(mean, std::sqrt(var / repeats));
        };
        const auto [acc_m, acc_s] = agg([](const Metrics& m) { return m.accuracy; });
        const auto [auc_m, auc_s] = agg([](const Metrics& m) { return m.auc; });
        const auto [pre_m, pre_s] = agg([](const Metrics& m) { return m.precision; });
        const auto [spe_m, spe_s] = agg([](const Metrics& m) { return m.specificity; });
        j["repeats"] = repeats;
        j["mean"] = {{"accuracy", acc_m}, {"auc", auc_m}, {"precision", pre_m},
                     {"specificity", spe_m}};
        j["std"] = {{"accuracy", acc_s}, {"auc", auc_s}, {"precision", pre_s},
                    {"specificity", spe_s}};
        nlohmann::ordered_json runs = nlohmann::ordered_json::array();
        for (const Metrics& m : per_run) runs.push_back(metrics_to_json(m));
        j["runs"] = runs;
    }
    write_json_doc(a.out, j);

    if (!a.head_out.empty()) {
        nlohmann::ordered_json hj = mlp_to_json(first_head);
        hj["provenance"] = provenance_json(cfg);
        write_json_doc(a.head_out, hj);
    }
    if (!a.scores.empty()) write_scores_csv(a.scores, data, first_scores, cfg);

    std::cout << "train-classify: " << data.labels.size() << " labeled samples, accuracy "
              << per_run[0].accuracy << ", auc " << per_run[0].auc << " -> " << a.out << "\n";
    return 0;
}

int cmd_evaluate(const ClassifyArgs& a, const RunConfig& cfg) {
    ProjectionPair pair;
    const LabeledDataset all = projected_dataset(a, cfg, pair);
    const LabeledDataset data = labeled_subset(all);
    if (data.labels.empty()) {
        std::cerr << "evaluate: no labeled rows\n";
        return 2;
    }

    std::ifstream hf(a.head);
    if (!hf) throw FileNotFound("no such head checkpoint: " + a.head);
    nlohmann::json hj;
    hf >> hj;
    const MlpParams head = mlp_from_json(hj);

    const std::vector<double> scores = predict_all(head, data.z);
    const Metrics m = evaluate_scores(scores, data.labels);

    nlohmann::ordered_json j;
    j["provenance"] = provenance_json(cfg);
    j.update(metrics_to_json(m));
    write_json_doc(a.out, j);
    if (!a.scores.empty()) write_scores_csv(a.scores, data, scores, cfg);

    std::cout << "evaluate: " << data.labels.size() << " samples, accuracy " << m.accuracy
              << ", auc " << m.auc << " -> " << a.out << "\n";
    return 0;
}

// ---- simhist ----------------------------------------------------------------

struct SimhistArgs {
    std::string align, features, embeddings, images, out, svg;
    bool toy_encoder = false;
};

std::string histogram_svg(const std::vector<long>& pos, const std::vector<long>& neg,
                          const std::string& provenance) {
    const int bins = static_cast<int>(pos.size());
    long peak = 1;
    for (int i = 0; i < bins; ++i) peak = std::max({peak, pos[i], neg[i]});

    const int width = 800, height = 300, margin = 40;
    const double bw = static_cast<double>(width - 2 * margin) / bins;
    std::ostringstream svg;
    svg << "<!-- " << provenance << " -->\n";
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    auto bars = [&](const std::vector<long>& counts, const char* color, double shift) {
        for (int i = 0; i < bins; ++i) {
            if (counts[i] == 0) continue;
            const double h = (height - 2.0 * margin) * counts[i] / peak;
            svg << "<rect x=\"" << margin + i * bw + shift << "\" y=\"" << height - margin - h
                << "\" width=\"" << bw / 2 << "\" height=\"" << h << "\" fill=\"" << color
                << "\"/>\n";
        }
    };
    bars(neg, "#888888", bw / 2);
    bars(pos, "#c0392b", 0.0);
    svg << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
        << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << margin << "\" y=\"" << height - margin + 16
        << "\" font-size=\"12\">-1</text>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"" << height - margin + 16
        << "\" font-size=\"12\">0</text>\n";
    svg << "<text x=\"" << width - margin << "\" y=\"" << height - margin + 16
        << "\" font-size=\"12\">1</text>\n";
    svg << "<text x=\"" << margin << "\" y=\"" << margin - 10
        << "\" font-size=\"12\">cosine similarity: positives (red) vs negatives (gray)</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

int cmd_simhist(const SimhistArgs& a, const RunConfig& cfg) {
    std::ifstream chk(a.align);
    if (!chk) throw FileNotFound("no such checkpoint: " + a.align);
    nlohmann::json cj;
    chk >> cj;
    const ProjectionPair pair = align_from_json(cj);

    const std::vector<FeatureRow> rows = read_feature_csv(a.features);
    Matrix v = gather_embeddings(rows, a.embeddings, a.images, cfg);
    const AlignBatch data = batch_from(rows, std::move(v));

    const SimilarityStats st = similarity_stats(pair, data, 1000000, cfg.seed);

    constexpr int kBins = 50;
    std::vector<long> pos(kBins, 0), neg(kBins, 0);
    auto bin_of = [&](double x) {
        int b = static_cast<int>((x + 1.0) / 2.0 * kBins);
        return std::clamp(b, 0, kBins - 1);
    };
    for (double s : st.positives) ++pos[bin_of(s)];
    for (double s : st.negatives) ++neg[bin_of(s)];

    std::ostringstream out;
    out << "# " << provenance_line(cfg) << "\n";
    out << "bin_lo,bin_hi,positives,negatives\n";
    for (int b = 0; b < kBins; ++b) {
        const double lo = -1.0 + 2.0 * b / kBins;
        const double hi = -1.0 + 2.0 * (b + 1) / kBins;
        out << format_double(lo) << "," << format_double(hi) << "," << pos[b] << "," << neg[b]
            << "\n";
    }
    write_text(a.out, out.str());
    if (!a.svg.empty()) write_text(a.svg, histogram_svg(pos, neg, provenance_line(cfg)));

    std::cout << "simhist: " << st.positives.size() << " positives (mean " << st.pos_mean << "), "
              << st.negatives.size() << " negatives (mean " << st.neg_mean << ") -> " << a.out
              << "\n";
    return 0;
}

// ---- report -------------------------------------------------------------------

struct ReportArgs {
    std::string image, mask, align, head, thresholds, concept_embeddings, concepts_file, out;
    std::string format = "auto";
    bool no_clinical = false;
    bool no_concepts = false;
    bool remote = false;
};

int cmd_report(const ReportArgs& a, const RunConfig& cfg) {
    if (a.no_clinical && a.no_concepts) {
        std::cerr << "report: --no-clinical and --no-concepts together leave nothing to explain\n";
        return 2;
    }

    std::ifstream chk(a.align);
    if (!chk) throw FileNotFound("no such checkpoint: " + a.align);
    nlohmann::json cj;
    chk >> cj;
    const ProjectionPair pair = align_from_json(cj);

    std::ifstream hf(a.head);
    if (!hf) throw FileNotFound("no such head checkpoint: " + a.head);
    nlohmann::json hj;
    hf >> hj;
    const MlpParams head = mlp_from_json(hj);

    const std::string sev_path = a.thresholds.empty() ? companion_sev_path(a.align) : a.thresholds;
    std::ifstream sf(sev_path);
    if (!sf) throw FileNotFound("no such thresholds file: " + sev_path);
    nlohmann::json sj;
    sf >> sj;
    const SeverityThresholds thr = thresholds_from_json(sj);

    const RgbImage image = load_image(a.image);
    const MaskLoadResult mr = load_mask(a.mask, cfg.threshold);
    if (mr.empty_mask) throw EmptyMask("mask has no true pixels: " + a.mask);

    FeatureConfig fcfg;
    fcfg.axis = axis_from(cfg);
    fcfg.contour_samples = cfg.samples;
    const ClinicalFeatures feats = extract_all(image, mr.mask, fcfg);
    const SeverityProfile profile = discretize(feats, thr);

    const Embedding emb = toy_patch_encoder(image, cfg.grid);
    Matrix v(1, emb.dim());
    for (int j = 0; j < emb.dim(); ++j) v(0, j) = emb.values[j];
    const Matrix zv = project_images(pair, v);
    const double score = predict(head, zv.row(0), zv.cols);

    std::vector<ConceptDescriptor> concepts;
    if (!a.no_concepts) {
        const std::vector<ConceptVocabularyEntry> vocab =
            a.concepts_file.empty() ? concept_vocabulary()
                                    : load_concept_vocabulary(a.concepts_file);
        if (!a.concept_embeddings.empty()) {
            const EmbeddingStore store = read_embeddings(a.concept_embeddings);
            concepts = match_concepts(profile, score, ConceptMode::Embedding, &emb, &store,
                                      cfg.concepts_k, vocab);
        } else {
            concepts = match_concepts(profile, score, ConceptMode::Rule, nullptr, nullptr,
                                      cfg.concepts_k, vocab);
        }
    }

    ReportInputs in;
    in.features = feats;
    in.profile = profile;
    in.concepts = concepts;
    in.score = score;
    in.flags.clinical = !a.no_clinical;
    in.flags.concepts = !a.no_concepts;
    in.prompt = assemble_prompt(feats, profile, concepts, score, in.flags);

    ReportDocument doc;
    if (a.remote) {
        LlmEndpointConfig lc;
        if (const char* url = std::getenv("REPORT_LLM_URL")) lc.base_url = url;
        if (const char* token = std::getenv("REPORT_LLM_TOKEN")) lc.token = token;
        if (const char* model = std::getenv("REPORT_LLM_MODEL")) lc.model = model;
        doc = generate_remote(in, lc);
    } else {
        doc = generate_template(in);
    }

    const bool as_json = a.format == "json" ||
                         (a.format == "auto" && fs::path(a.out).extension() == ".json");
    std::string text;
    if (as_json) {
        nlohmann::ordered_json j = nlohmann::ordered_json::parse(render(doc, ReportFormat::Json));
        j["run_provenance"] = provenance_json(cfg);
        text = j.dump(2) + "\n";
    } else {
        text = "<!-- " + provenance_line(cfg) + " -->\n" + render(doc, ReportFormat::Markdown);
    }
    write_text(a.out, text);

    std::cout << "report: " << doc.diagnosis << " (score " << score << ", engine "
              << doc.provenance.engine << ") -> " << a.out << "\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"CEFM desk-scale pipeline: ABC lesion features, cross-modal contrastive "
                 "alignment, classification, and diagnostic report generation"};
    app.set_version_flag("--version", std::string("cefm ") + kVersion);
    app.require_subcommand(1);

    // --config is extracted ahead of CLI11 so flags can override file values
    RunConfig cfg;
    for (std::size_t i = 0; i + 1 < args.size(); ++i)
        if (args[i] == "--config") apply_config_map(cfg, parse_config_file(args[i + 1]));
    std::string config_path;

    ExtractArgs ex;
    CLI::App* extract = app.add_subcommand("extract", "compute ABC features for image/mask pairs");
    extract->add_option("--images", ex.images, "directory of lesion images")->required();
    extract->add_option("--masks", ex.masks, "directory of lesion masks (same filename stems)")
        ->required();
    extract->add_option("--out", ex.out, "output feature CSV")->required();
    extract->add_option("--labels", ex.labels, "optional id,label CSV (0 nevus, 1 melanoma)");
    extract->add_option("--jobs", ex.jobs, "parallel workers")->check(CLI::Range(1, 256));
    extract->add_option("--config", config_path, "key = value config file");
    register_config_flags(extract, cfg);

    std::string thr_features, thr_out;
    CLI::App* thresholds =
        app.add_subcommand("thresholds", "fit five-level severity cut points from a feature CSV");
    thresholds->add_option("--features", thr_features, "feature CSV")->required();
    thresholds->add_option("--out", thr_out, "output SEV1 JSON")->required();
    thresholds->add_option("--config", config_path, "key = value config file");
    register_config_flags(thresholds, cfg);

    TrainAlignArgs ta;
    CLI::App* train_align_cmd =
        app.add_subcommand("train-align", "train the cross-modal projection heads");
    train_align_cmd->add_option("--features", ta.features, "feature CSV")->required();
    auto* ta_emb = train_align_cmd->add_option("--embeddings", ta.embeddings, "EMB1 image embeddings");
    auto* ta_toy = train_align_cmd->add_flag("--toy-encoder", ta.toy_encoder,
                                             "encode images with the toy patch encoder");
    train_align_cmd->add_option("--images", ta.images, "image directory for --toy-encoder");
    train_align_cmd->add_option("--out", ta.out, "output ALIGN1 checkpoint")->required();
    train_align_cmd->add_option("--log", ta.log, "per-epoch loss CSV (default <out>.loss.csv)");
    train_align_cmd->add_option("--config", config_path, "key = value config file");
    register_config_flags(train_align_cmd, cfg);
    ta_toy->excludes(ta_emb);

    ClassifyArgs tc;
    CLI::App* train_classify =
        app.add_subcommand("train-classify", "train the classification head on projected embeddings");
    train_classify->add_option("--align", tc.align, "ALIGN1 checkpoint")->required();
    train_classify->add_option("--features", tc.features, "feature CSV with labels")->required();
    train_classify->add_option("--embeddings", tc.embeddings, "EMB1 image embeddings");
    train_classify->add_flag("--toy-encoder", tc.toy_encoder, "encode images with the toy encoder");
    train_classify->add_option("--images", tc.images, "image directory for --toy-encoder");
    train_classify->add_option("--head-out", tc.head_out, "output MLP1 head checkpoint");
    train_classify->add_option("--out", tc.out, "output metrics JSON")->required();
    train_classify->add_option("--scores", tc.scores, "per-sample score CSV");
    train_classify->add_option("--repeats", tc.repeats, "seeded training repeats")
        ->check(CLI::Range(1, 1000));
    train_classify->add_option("--config", config_path, "key = value config file");
    register_config_flags(train_classify, cfg);

    ClassifyArgs ev;
    CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a trained head");
    evaluate_cmd->add_option("--align", ev.align, "ALIGN1 checkpoint")->required();
    evaluate_cmd->add_option("--head", ev.head, "MLP1 head checkpoint")->required();
    evaluate_cmd->add_option("--features", ev.features, "feature CSV with labels")->required();
    evaluate_cmd->add_option("--embeddings", ev.embeddings, "EMB1 image embeddings");
    evaluate_cmd->add_flag("--toy-encoder", ev.toy_encoder, "encode images with the toy encoder");
    evaluate_cmd->add_option("--images", ev.images, "image directory for --toy-encoder");
    evaluate_cmd->add_option("--out", ev.out, "output metrics JSON")->required();
    evaluate_cmd->add_option("--scores", ev.scores, "per-sample score CSV");
    evaluate_cmd->add_option("--config", config_path, "key = value config file");
    register_config_flags(evaluate_cmd, cfg);

    SimhistArgs sh;
    CLI::App* simhist =
        app.add_subcommand("simhist", "positive/negative cosine similarity histogram");
    simhist->add_option("--align", sh.align, "ALIGN1 checkpoint")->required();
    simhist->add_option("--features", sh.features, "feature CSV")->required();
    simhist->add_option("--embeddings", sh.embeddings, "EMB1 image embeddings");
    simhist->add_flag("--toy-encoder", sh.toy_encoder, "encode images with the toy encoder");
    simhist->add_option("--images", sh.images, "image directory for the toy encoder");
    simhist->add_option("--out", sh.out, "output histogram CSV")->required();
    simhist->add_option("--svg", sh.svg, "optional SVG bar chart");
    simhist->add_option("--config", config_path, "key = value config file");
    register_config_flags(simhist, cfg);

    ReportArgs rp;
    CLI::App* report_cmd = app.add_subcommand("report", "full single-lesion diagnostic report");
    report_cmd->add_option("--image", rp.image, "lesion image")->required();
    report_cmd->add_option("--mask", rp.mask, "lesion mask")->required();
    report_cmd->add_option("--align", rp.align, "ALIGN1 checkpoint")->required();
    report_cmd->add_option("--head", rp.head, "MLP1 head checkpoint")->required();
    report_cmd->add_option("--thresholds", rp.thresholds,
                           "SEV1 thresholds (default: companion of --align)");
    report_cmd->add_option("--concept-embeddings", rp.concept_embeddings,
                           "EMB1 concept text embeddings (switches concept matching to "
                           "embedding mode)");
    report_cmd->add_option("--concepts-file", rp.concepts_file,
                           "JSON concept vocabulary overriding the built-in set");
    report_cmd->add_option("--out", rp.out, "output report path")->required();
    report_cmd->add_option("--format", rp.format, "markdown|json|auto (by extension)")
        ->check(CLI::IsMember({"markdown", "json", "auto"}));
    report_cmd->add_flag("--no-clinical", rp.no_clinical, "drop the quantitative block");
    report_cmd->add_flag("--no-concepts", rp.no_concepts, "drop the visual-concept block");
    report_cmd->add_flag("--remote", rp.remote,
                         "use the REPORT_LLM_URL endpoint (falls back to the template engine)");
    report_cmd->add_option("--config", config_path, "key = value config file");
    register_config_flags(report_cmd, cfg);

    try {
        std::vector<std::string> argv(args.rbegin(), args.rend());
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (extract->parsed()) return cmd_extract(ex, cfg);
        if (thresholds->parsed()) return cmd_thresholds(thr_features, thr_out, cfg);
        if (train_align_cmd->parsed()) {
            if (ta.embeddings.empty() && ta.images.empty()) {
                std::cerr << "train-align: need --embeddings or --toy-encoder with --images\n";
                return 2;
            }
            return cmd_train_align(ta, cfg);
        }
        if (train_classify->parsed()) {
            if (tc.embeddings.empty() && tc.images.empty()) {
                std::cerr << "train-classify: need --embeddings or --toy-encoder with --images\n";
                return 2;
            }
            return cmd_train_classify(tc, cfg);
        }
        if (evaluate_cmd->parsed()) {
            if (ev.embeddings.empty() && ev.images.empty()) {
                std::cerr << "evaluate: need --embeddings or --toy-encoder with --images\n";
                return 2;
            }
            return cmd_evaluate(ev, cfg);
        }
        if (simhist->parsed()) {
            if (sh.embeddings.empty() && sh.images.empty()) {
                std::cerr << "simhist: need --embeddings or --images\n";
                return 2;
            }
            return cmd_simhist(sh, cfg);
        }
        if (report_cmd->parsed()) return cmd_report(rp, cfg);
        std::cerr << "no subcommand\n";
        return 2;
    } catch (const FileNotFound& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const UnsupportedFormat& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DecodeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const RasterError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const EmbeddingError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const InsufficientData& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const SingleClass& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const TooFewSamples& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NothingToExplain& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace cefm::cli
