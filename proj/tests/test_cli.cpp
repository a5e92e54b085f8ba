#include <doctest.h>

#include <fstream>
#include <numeric>
#include <sstream>

#include "cefm/cli.hpp"
#include "cefm/embedding.hpp"
#include "cefm/features.hpp"
#include "cefm/mlp.hpp"
#include "cefm/raster.hpp"
#include "cefm/report.hpp"
#include "helpers.hpp"
#include "mock_llm.hpp"

using namespace cefm;
using testutil::TempDir;

namespace {

int run(std::initializer_list<std::string> args) { return cli::run(std::vector<std::string>(args)); }

// image/mask pair fixtures: blobs of varying shade on a dark background
void make_pair(const std::string& img_path, const std::string& mask_path, int size, int radius,
               std::uint8_t shade, std::uint64_t seed) {
    Rng rng(seed);
    RgbImage img(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const std::uint8_t noise = static_cast<std::uint8_t>(rng.below(40));
            img.set(x, y, noise, noise, noise);
        }
    const int c = size / 2;
    RgbImage mask(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            if ((x - c) * (x - c) + (y - c) * (y - c) <= radius * radius) {
                img.set(x, y, shade, static_cast<std::uint8_t>(shade / 2), shade);
                mask.set(x, y, 255, 255, 255);
            }
    write_png(img, img_path);
    write_png(mask, mask_path);
}

// synthetic features + embeddings with class structure, for the training commands
void make_training_fixture(const TempDir& dir, int n, const std::string& csv_name,
                           const std::string& emb_name) {
    Rng rng(4242);
    std::vector<FeatureRow> rows;
    EmbeddingStore store;
    for (int i = 0; i < n; ++i) {
        const int label = i % 2;
        const double shift = label == 1 ? 2.0 : -2.0;
        FeatureRow r;
        r.id = "l" + std::to_string(i);
        r.f = {0.5 + shift * 0.1 + 0.01 * rng.normal(), 0.05 + 0.001 * rng.normal(),
               0.1 + 0.05 * label + 0.005 * rng.normal(), 0.2 + 0.01 * rng.normal(),
               0.3 + 0.01 * rng.normal()};
        r.label = label;
        rows.push_back(r);

        Embedding e;
        for (int k = 0; k < 8; ++k)
            e.values.push_back(static_cast<float>((k == 0 ? shift : 0.0) + 0.1 * rng.normal()));
        store.add(r.id, std::move(e));
    }
    write_feature_csv(rows, dir.file(csv_name), "fixture");
    write_embeddings(store, dir.file(emb_name));
}

std::string slurp(const std::string& path) { return testutil::read_file(path); }

// linear-map pairs written to CSV + EMB1, for the alignment-quality checks
void make_linear_fixture(const TempDir& dir, int n, int dv, std::uint64_t seed) {
    Rng rng(seed);
    Matrix v(n, dv), g(5, dv);
    for (auto& x : v.data) x = rng.normal();
    for (auto& x : g.data) x = rng.normal();

    std::vector<FeatureRow> rows;
    EmbeddingStore store;
    for (int i = 0; i < n; ++i) {
        FeatureRow r;
        r.id = "p" + std::to_string(i);
        double c[5];
        for (int j = 0; j < 5; ++j) {
            c[j] = 0.01 * rng.normal();
            for (int k = 0; k < dv; ++k) c[j] += g(j, k) * v(i, k);
        }
        r.f = {c[0], c[1], c[2], c[3], c[4]};
        r.label = i % 2;
        rows.push_back(r);

        Embedding e;
        for (int k = 0; k < dv; ++k) e.values.push_back(static_cast<float>(v(i, k)));
        store.add(r.id, std::move(e));
    }
    write_feature_csv(rows, dir.file("lin.csv"), "fixture");
    write_embeddings(store, dir.file("lin.emb"));
}

struct HistBins {
    std::vector<double> lo;
    std::vector<long> pos, neg;
};

HistBins read_hist(const std::string& path) {
    HistBins h;
    std::istringstream in(testutil::read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("bin_lo", 0) == 0) continue;
        std::stringstream ss(line);
        std::string f;
        std::vector<std::string> fs;
        while (std::getline(ss, f, ',')) fs.push_back(f);
        h.lo.push_back(std::stod(fs[0]));
        h.pos.push_back(std::stol(fs[2]));
        h.neg.push_back(std::stol(fs[3]));
    }
    return h;
}

double hist_ks(const HistBins& h) {
    const double np = std::accumulate(h.pos.begin(), h.pos.end(), 0L);
    const double nn = std::accumulate(h.neg.begin(), h.neg.end(), 0L);
    double cp = 0.0, cn = 0.0, ks = 0.0;
    for (std::size_t b = 0; b < h.lo.size(); ++b) {
        cp += h.pos[b] / np;
        cn += h.neg[b] / nn;
        ks = std::max(ks, std::abs(cp - cn));
    }
    return ks;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("extract writes one row per valid pair and skips bad ones") {
    TempDir dir("cli_extract");
    std::filesystem::create_directories(dir.path() / "img");
    std::filesystem::create_directories(dir.path() / "msk");

    make_pair(dir.file("img/a.png"), dir.file("msk/a.png"), 48, 12, 200, 1);
    make_pair(dir.file("img/b.png"), dir.file("msk/b.png"), 48, 10, 150, 2);
    make_pair(dir.file("img/c.png"), dir.file("msk/c.png"), 48, 8, 230, 3);

    SUBCASE("three clean pairs") {
        const int rc = run({"extract", "--images", dir.file("img"), "--masks", dir.file("msk"),
                            "--out", dir.file("f.csv")});
        CHECK(rc == 0);
        CHECK(read_feature_csv(dir.file("f.csv")).size() == 3);
    }

    SUBCASE("an empty mask is skipped, not fatal") {
        write_png(testutil::uniform_image(48, 48, 0, 0, 0), dir.file("msk/b.png"));
        const int rc = run({"extract", "--images", dir.file("img"), "--masks", dir.file("msk"),
                            "--out", dir.file("f.csv")});
        CHECK(rc == 0);
        const auto rows = read_feature_csv(dir.file("f.csv"));
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].id == "a");
        CHECK(rows[1].id == "c");
    }

    SUBCASE("labels map onto rows") {
        testutil::write_file(dir.file("labels.csv"), "id,label\na,1\nb,0\n");
        const int rc = run({"extract", "--images", dir.file("img"), "--masks", dir.file("msk"),
                            "--labels", dir.file("labels.csv"), "--out", dir.file("f.csv")});
        CHECK(rc == 0);
        const auto rows = read_feature_csv(dir.file("f.csv"));
        CHECK(rows[0].label == 1);
        CHECK(rows[1].label == 0);
        CHECK(rows[2].label == -1);
    }

    SUBCASE("jobs do not change the bytes") {
        const int rc1 = run({"extract", "--images", dir.file("img"), "--masks", dir.file("msk"),
                             "--out", dir.file("j1.csv"), "--jobs", "1"});
        const int rc8 = run({"extract", "--images", dir.file("img"), "--masks", dir.file("msk"),
                             "--out", dir.file("j8.csv"), "--jobs", "8"});
        CHECK(rc1 == 0);
        CHECK(rc8 == 0);
        CHECK(slurp(dir.file("j1.csv")) == slurp(dir.file("j8.csv")));
    }

    SUBCASE("the axis flag changes the asymmetry column") {
        // make one lesion left/right asymmetric so the two axes disagree
        RgbImage img = load_image(dir.file("img/a.png"));
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width / 2; ++x) img.set(x, y, 30, 30, 30);
        write_png(img, dir.file("img/a.png"));

        REQUIRE(run({"extract", "--images", dir.file("img"), "--masks", dir.file("msk"),
                     "--out", dir.file("v.csv"), "--axis", "vertical-centroid"}) == 0);
        REQUIRE(run({"extract", "--images", dir.file("img"), "--masks", dir.file("msk"),
                     "--out", dir.file("p.csv"), "--axis", "principal"}) == 0);
        const auto v = read_feature_csv(dir.file("v.csv"));
        const auto p = read_feature_csv(dir.file("p.csv"));
        CHECK(v[0].f.a != p[0].f.a);
        CHECK(v[0].f.b2 == p[0].f.b2);  // the axis only affects asymmetry
    }

    SUBCASE("empty input set exits 2") {
        std::filesystem::create_directories(dir.path() / "empty");
        const int rc = run({"extract", "--images", dir.file("empty"), "--masks", dir.file("msk"),
                            "--out", dir.file("f.csv")});
        CHECK(rc == 2);
    }
}

TEST_CASE("thresholds command fits SEV1 files") {
    TempDir dir("cli_thr");
    make_training_fixture(dir, 20, "f.csv", "e.emb");
    const int rc =
        run({"thresholds", "--features", dir.file("f.csv"), "--out", dir.file("sev.json")});
    CHECK(rc == 0);
    const auto j = nlohmann::json::parse(slurp(dir.file("sev.json")));
    CHECK(j.at("schema") == "SEV1");
    CHECK(j.at("cuts").at("a").size() == 4);
}

TEST_CASE("train-align produces checkpoint, loss log and companion thresholds") {
    TempDir dir("cli_align");
    make_training_fixture(dir, 24, "f.csv", "e.emb");

    const int rc = run({"train-align", "--features", dir.file("f.csv"), "--embeddings",
                        dir.file("e.emb"), "--out", dir.file("align.json"), "--epochs", "8",
                        "--batch", "8", "--dim", "8", "--hidden-clinical", "8", "--hidden-head",
                        "8", "--seed", "5"});
    CHECK(rc == 0);

    const auto j = nlohmann::json::parse(slurp(dir.file("align.json")));
    CHECK(j.at("schema") == "ALIGN1");
    CHECK(j.at("provenance").at("seed") == 5);
    CHECK(std::filesystem::exists(dir.file("align.sev.json")));

    const std::string log = slurp(dir.file("align.json.loss.csv"));
    CHECK(log.find("epoch,loss") != std::string::npos);
    int lines = 0;
    for (char c : log) lines += (c == '\n');
    CHECK(lines == 2 + 8);  // provenance + header + 8 epochs

    SUBCASE("same seed twice is byte-identical") {
        const int rc2 = run({"train-align", "--features", dir.file("f.csv"), "--embeddings",
                             dir.file("e.emb"), "--out", dir.file("align2.json"), "--epochs", "8",
                             "--batch", "8", "--dim", "8", "--hidden-clinical", "8",
                             "--hidden-head", "8", "--seed", "5"});
        CHECK(rc2 == 0);
        CHECK(slurp(dir.file("align.json")) == slurp(dir.file("align2.json")));
    }

    SUBCASE("mismatched ids exit 2 and name offenders") {
        std::vector<FeatureRow> extra = read_feature_csv(dir.file("f.csv"));
        FeatureRow rogue;
        rogue.id = "zz_missing";
        rogue.f = {0.1, 0.1, 0.1, 0.1, 0.1};
        extra.push_back(rogue);
        write_feature_csv(extra, dir.file("f2.csv"));
        const int rc2 = run({"train-align", "--features", dir.file("f2.csv"), "--embeddings",
                             dir.file("e.emb"), "--out", dir.file("x.json")});
        CHECK(rc2 == 2);

        // through the real binary, the offending ids reach stderr
        if (const char* bin = std::getenv("CEFM_BIN")) {
            const std::string cmd = std::string("\"") + bin + "\" train-align --features " +
                                    dir.file("f2.csv") + " --embeddings " + dir.file("e.emb") +
                                    " --out " + dir.file("x.json") + " 2>&1";
            std::string captured;
            if (FILE* pipe = popen(cmd.c_str(), "r")) {
                char buf[256];
                while (fgets(buf, sizeof buf, pipe)) captured += buf;
                pclose(pipe);
            }
            CHECK(captured.find("zz_missing") != std::string::npos);
        }
    }
}

TEST_CASE("train-align smoothed loss decreases on the synthetic fixture") {
    TempDir dir("cli_loss");
    make_training_fixture(dir, 64, "f.csv", "e.emb");
    const int rc = run({"train-align", "--features", dir.file("f.csv"), "--embeddings",
                        dir.file("e.emb"), "--out", dir.file("a.json"), "--epochs", "200",
                        "--batch", "32", "--dim", "16", "--hidden-clinical", "16", "--hidden-head",
                        "16", "--seed", "11", "--log", dir.file("loss.csv")});
    REQUIRE(rc == 0);

    std::vector<double> loss;
    std::istringstream in(slurp(dir.file("loss.csv")));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("epoch", 0) == 0) continue;
        loss.push_back(std::stod(line.substr(line.find(',') + 1)));
    }
    REQUIRE(loss.size() == 200);

    std::vector<double> ma;
    for (std::size_t i = 0; i + 10 <= loss.size(); ++i) {
        double s = 0.0;
        for (std::size_t k = i; k < i + 10; ++k) s += loss[k];
        ma.push_back(s / 10);
    }
    for (std::size_t i = 1; i < ma.size(); ++i) CHECK(ma[i] <= ma[i - 1] + 0.01);
    CHECK(ma.back() < 0.5 * loss.front());
}

TEST_CASE("train-classify and evaluate close the loop") {
    TempDir dir("cli_cls");
    make_training_fixture(dir, 40, "f.csv", "e.emb");
    REQUIRE(run({"train-align", "--features", dir.file("f.csv"), "--embeddings", dir.file("e.emb"),
                 "--out", dir.file("a.json"), "--epochs", "30", "--batch", "16", "--dim", "8",
                 "--hidden-clinical", "8", "--hidden-head", "8", "--seed", "2"}) == 0);

    const int rc = run({"train-classify", "--align", dir.file("a.json"), "--features",
                        dir.file("f.csv"), "--embeddings", dir.file("e.emb"), "--head-out",
                        dir.file("head.json"), "--out", dir.file("m.json"), "--scores",
                        dir.file("s.csv"), "--head-epochs", "300"});
    CHECK(rc == 0);

    const auto m = nlohmann::json::parse(slurp(dir.file("m.json")));
    CHECK(m.at("accuracy").get<double>() >= 0.9);
    CHECK(m.at("auc").get<double>() >= 0.95);
    CHECK(m.at("n") == 40);

    const std::string scores = slurp(dir.file("s.csv"));
    CHECK(scores.find("id,score,label") != std::string::npos);

    SUBCASE("evaluate reproduces the training metrics") {
        const int rc2 = run({"evaluate", "--align", dir.file("a.json"), "--head",
                             dir.file("head.json"), "--features", dir.file("f.csv"),
                             "--embeddings", dir.file("e.emb"), "--out", dir.file("m2.json")});
        CHECK(rc2 == 0);
        const auto m2 = nlohmann::json::parse(slurp(dir.file("m2.json")));
        CHECK(m2.at("accuracy") == m.at("accuracy"));
        CHECK(m2.at("auc") == m.at("auc"));
    }

    SUBCASE("seeded repeats add a mean/std block") {
        const int rc2 = run({"train-classify", "--align", dir.file("a.json"), "--features",
                             dir.file("f.csv"), "--embeddings", dir.file("e.emb"), "--out",
                             dir.file("mr.json"), "--repeats", "5", "--head-epochs", "100"});
        CHECK(rc2 == 0);
        const auto mr = nlohmann::json::parse(slurp(dir.file("mr.json")));
        CHECK(mr.at("repeats") == 5);
        CHECK(mr.at("mean").contains("accuracy"));
        CHECK(mr.at("std").contains("auc"));
        CHECK(mr.at("runs").size() == 5);
    }

    SUBCASE("single-class labels exit 2") {
        auto rows = read_feature_csv(dir.file("f.csv"));
        for (auto& r : rows) r.label = 1;
        write_feature_csv(rows, dir.file("one.csv"));
        CHECK(run({"train-classify", "--align", dir.file("a.json"), "--features",
                   dir.file("one.csv"), "--embeddings", dir.file("e.emb"), "--out",
                   dir.file("x.json")}) == 2);
    }

    SUBCASE("malformed feature csv exits 2") {
        testutil::write_file(dir.file("broken.csv"), "id,a,b2\n1,2,3\n");
        CHECK(run({"train-classify", "--align", dir.file("a.json"), "--features",
                   dir.file("broken.csv"), "--embeddings", dir.file("e.emb"), "--out",
                   dir.file("x.json")}) == 2);
    }
}

TEST_CASE("simhist bins cover every pair") {
    TempDir dir("cli_hist");
    make_training_fixture(dir, 30, "f.csv", "e.emb");
    REQUIRE(run({"train-align", "--features", dir.file("f.csv"), "--embeddings", dir.file("e.emb"),
                 "--out", dir.file("a.json"), "--epochs", "10", "--batch", "16", "--dim", "8",
                 "--hidden-clinical", "8", "--hidden-head", "8"}) == 0);
    const int rc = run({"simhist", "--align", dir.file("a.json"), "--features", dir.file("f.csv"),
                        "--embeddings", dir.file("e.emb"), "--out", dir.file("h.csv"), "--svg",
                        dir.file("h.svg")});
    CHECK(rc == 0);

    long pos_total = 0, neg_total = 0, lines = 0;
    std::istringstream in(slurp(dir.file("h.csv")));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("bin_lo", 0) == 0) continue;
        ++lines;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> f;
        while (std::getline(ss, field, ',')) f.push_back(field);
        REQUIRE(f.size() == 4);
        pos_total += std::stol(f[2]);
        neg_total += std::stol(f[3]);
    }
    CHECK(lines == 50);
    CHECK(pos_total == 30);
    CHECK(neg_total == 30 * 29);

    const std::string svg = slurp(dir.file("h.svg"));
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("simhist separates trained from untrained checkpoints") {
    TempDir dir("cli_hist2");
    make_linear_fixture(dir, 64, 8, 4242);

    // trained: positives concentrate in the high-similarity region
    REQUIRE(run({"train-align", "--features", dir.file("lin.csv"), "--embeddings",
                 dir.file("lin.emb"), "--out", dir.file("trained.json"), "--epochs", "200",
                 "--batch", "32", "--dim", "16", "--hidden-clinical", "32", "--hidden-head", "32",
                 "--seed", "42"}) == 0);
    REQUIRE(run({"simhist", "--align", dir.file("trained.json"), "--features", dir.file("lin.csv"),
                 "--embeddings", dir.file("lin.emb"), "--out", dir.file("ht.csv")}) == 0);
    const HistBins trained = read_hist(dir.file("ht.csv"));
    long total = 0, high = 0;
    for (std::size_t b = 0; b < trained.lo.size(); ++b) {
        total += trained.pos[b];
        if (trained.lo[b] >= 0.75) high += trained.pos[b];
    }
    CHECK(total == 64);
    CHECK(high * 2 > total);  // over half the positive mass above 0.75

    // untrained: one epoch on two samples leaves the heads essentially random
    REQUIRE(run({"train-align", "--features", dir.file("lin.csv"), "--embeddings",
                 dir.file("lin.emb"), "--out", dir.file("rand.json"), "--epochs", "0", "--batch",
                 "32", "--dim", "16", "--hidden-clinical", "32", "--hidden-head", "32", "--seed",
                 "7"}) == 0);
    REQUIRE(run({"simhist", "--align", dir.file("rand.json"), "--features", dir.file("lin.csv"),
                 "--embeddings", dir.file("lin.emb"), "--out", dir.file("hr.csv")}) == 0);
    CHECK(hist_ks(read_hist(dir.file("hr.csv"))) < 0.3);
}

TEST_CASE("report command end to end") {
    TempDir dir("cli_report");
    std::filesystem::create_directories(dir.path() / "img");
    std::filesystem::create_directories(dir.path() / "msk");

    // a small corpus so align/thresholds/head exist
    for (int i = 0; i < 8; ++i)
        make_pair(dir.file("img/s" + std::to_string(i) + ".png"),
                  dir.file("msk/s" + std::to_string(i) + ".png"), 40, 8 + (i % 4), 120 + 15 * i,
                  100 + i);
    std::string labels = "id,label\n";
    for (int i = 0; i < 8; ++i)
        labels += "s" + std::to_string(i) + "," + std::to_string(i % 2) + "\n";
    testutil::write_file(dir.file("labels.csv"), labels);

    REQUIRE(run({"extract", "--images", dir.file("img"), "--masks", dir.file("msk"), "--labels",
                 dir.file("labels.csv"), "--out", dir.file("f.csv")}) == 0);
    REQUIRE(run({"train-align", "--features", dir.file("f.csv"), "--toy-encoder", "--images",
                 dir.file("img"), "--grid", "4", "--out", dir.file("a.json"), "--epochs", "5",
                 "--batch", "4", "--dim", "8", "--hidden-clinical", "8", "--hidden-head",
                 "8"}) == 0);
    REQUIRE(run({"train-classify", "--align", dir.file("a.json"), "--features", dir.file("f.csv"),
                 "--toy-encoder", "--images", dir.file("img"), "--grid", "4", "--head-out",
                 dir.file("head.json"), "--out", dir.file("m.json"), "--head-epochs",
                 "50"}) == 0);

    SUBCASE("markdown report with all blocks") {
        const int rc = run({"report", "--image", dir.file("img/s0.png"), "--mask",
                            dir.file("msk/s0.png"), "--align", dir.file("a.json"), "--head",
                            dir.file("head.json"), "--grid", "4", "--out", dir.file("r.md")});
        CHECK(rc == 0);
        const std::string md = slurp(dir.file("r.md"));
        CHECK(md.find("## AI Diagnosis") != std::string::npos);
        CHECK(md.find("## Quantitative Features") != std::string::npos);
        CHECK(md.find("## Visual Features") != std::string::npos);
        CHECK(md.find("## Risk Assessment") != std::string::npos);
        CHECK(md.find("engine: template") != std::string::npos);
    }

    SUBCASE("ablation flags map through") {
        REQUIRE(run({"report", "--image", dir.file("img/s0.png"), "--mask", dir.file("msk/s0.png"),
                     "--align", dir.file("a.json"), "--head", dir.file("head.json"), "--grid", "4",
                     "--no-clinical", "--out", dir.file("rc.md")}) == 0);
        CHECK(slurp(dir.file("rc.md")).find("Not assessed.") != std::string::npos);

        CHECK(run({"report", "--image", dir.file("img/s0.png"), "--mask", dir.file("msk/s0.png"),
                   "--align", dir.file("a.json"), "--head", dir.file("head.json"), "--grid", "4",
                   "--no-clinical", "--no-concepts", "--out", dir.file("rx.md")}) == 2);
    }

    SUBCASE("remote engine reaches the mock endpoint") {
        testutil::MockLlmServer server(testutil::MockLlmServer::Mode::Ok);
        setenv("REPORT_LLM_URL", server.url().c_str(), 1);
        setenv("REPORT_LLM_TOKEN", "CLI_SECRET_TOKEN", 1);
        setenv("REPORT_LLM_MODEL", "mock-model", 1);
        const int rc = run({"report", "--image", dir.file("img/s0.png"), "--mask",
                            dir.file("msk/s0.png"), "--align", dir.file("a.json"), "--head",
                            dir.file("head.json"), "--grid", "4", "--remote", "--out",
                            dir.file("rr.md")});
        unsetenv("REPORT_LLM_URL");
        unsetenv("REPORT_LLM_TOKEN");
        unsetenv("REPORT_LLM_MODEL");
        CHECK(rc == 0);
        const std::string md = slurp(dir.file("rr.md"));
        CHECK(md.find("engine: remote") != std::string::npos);
        CHECK(md.find("CLI_SECRET_TOKEN") == std::string::npos);
        CHECK(server.hits() == 1);
    }

    SUBCASE("json report round-trips") {
        REQUIRE(run({"report", "--image", dir.file("img/s1.png"), "--mask", dir.file("msk/s1.png"),
                     "--align", dir.file("a.json"), "--head", dir.file("head.json"), "--grid", "4",
                     "--out", dir.file("r.json")}) == 0);
        const ReportDocument doc = parse_report_json(slurp(dir.file("r.json")));
        CHECK((doc.diagnosis == "Suspicious for Melanoma" || doc.diagnosis == "Likely Benign Lesion"));
    }

    SUBCASE("template reports are deterministic modulo timestamp") {
        REQUIRE(run({"report", "--image", dir.file("img/s2.png"), "--mask", dir.file("msk/s2.png"),
                     "--align", dir.file("a.json"), "--head", dir.file("head.json"), "--grid", "4",
                     "--out", dir.file("d1.json")}) == 0);
        REQUIRE(run({"report", "--image", dir.file("img/s2.png"), "--mask", dir.file("msk/s2.png"),
                     "--align", dir.file("a.json"), "--head", dir.file("head.json"), "--grid", "4",
                     "--out", dir.file("d2.json")}) == 0);
        ReportDocument a = parse_report_json(slurp(dir.file("d1.json")));
        ReportDocument b = parse_report_json(slurp(dir.file("d2.json")));
        a.provenance.timestamp.clear();
        b.provenance.timestamp.clear();
        CHECK(a == b);
    }
}

TEST_CASE("config file merges under flags") {
    TempDir dir("cli_cfg");
    make_training_fixture(dir, 10, "f.csv", "e.emb");
    testutil::write_file(dir.file("run.cfg"),
                         "# run settings\nseed = 77\nepochs = 3\nlr = 0.005\n");

    REQUIRE(run({"train-align", "--features", dir.file("f.csv"), "--embeddings", dir.file("e.emb"),
                 "--out", dir.file("a.json"), "--config", dir.file("run.cfg"), "--lr", "0.007",
                 "--batch", "4", "--dim", "6", "--hidden-clinical", "6", "--hidden-head",
                 "6"}) == 0);
    const auto j = nlohmann::json::parse(slurp(dir.file("a.json")));
    CHECK(j.at("provenance").at("seed") == 77);                       // from config file
    CHECK(j.at("provenance").at("config").at("lr") == "0.0070000000000000001");  // flag wins
    CHECK(j.at("provenance").at("config").at("epochs") == "3");
    CHECK(j.at("config").at("epochs") == 3);
}

TEST_CASE("unknown flags and missing subcommands exit 2") {
    CHECK(run({"extract", "--nonsense"}) == 2);
    CHECK(run({}) == 2);
}

}  // TEST_SUITE
