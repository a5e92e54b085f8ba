#include <doctest.h>

#include <cctype>
#include <set>

#include "cefm/explain.hpp"
#include "cefm/mlp.hpp"
#include "helpers.hpp"

using namespace cefm;

namespace {

// The attribute vocabulary the tests accept, written out literally so a
// wording regression in the library cannot hide.
const std::set<std::string> kBenignPhrases = {
    "Regular symmetric shape", "Smooth borders",      "Uniform color",
    "Light brown color",       "Small size",          "Well-defined edges",
    "No ulceration",           "No bleeding",         "No satellite lesions",
    "Dome-shaped structure",   "Single color tone"};
const std::set<std::string> kMelanomaPhrases = {
    "Asymmetric shape", "Irregular borders", "Uneven color",   "Dark brown areas",
    "Black areas",      "Blue-gray areas",   "Red areas",      "White areas",
    "Multiple mixed colors", "Fuzzy edges",  "Ulceration",     "Bleeding",
    "Crusting",         "Scaling",           "Satellite lesions"};

std::vector<ClinicalFeatures> ramp_features(int n) {
    std::vector<ClinicalFeatures> fs;
    for (int i = 1; i <= n; ++i) {
        const double v = static_cast<double>(i);
        fs.push_back({v, v, v, v, v});
    }
    return fs;
}

SeverityProfile profile_of(std::array<int, 5> levels) {
    SeverityProfile p;
    p.level = levels;
    return p;
}

}  // namespace

TEST_SUITE("explain") {

TEST_CASE("quantile cuts on 1..100") {
    const SeverityThresholds thr = fit_thresholds(ramp_features(100));
    for (int fi = 0; fi < 5; ++fi) {
        CHECK(thr.cuts[fi][0] == doctest::Approx(20.8).epsilon(1e-12));
        CHECK(thr.cuts[fi][1] == doctest::Approx(40.6).epsilon(1e-12));
        CHECK(thr.cuts[fi][2] == doctest::Approx(60.4).epsilon(1e-12));
        CHECK(thr.cuts[fi][3] == doctest::Approx(80.2).epsilon(1e-12));
    }
}

TEST_CASE("degenerate all-equal samples still give ordered cuts") {
    std::vector<ClinicalFeatures> fs(6, ClinicalFeatures{2.5, 2.5, 2.5, 2.5, 2.5});
    const SeverityThresholds thr = fit_thresholds(fs);
    for (int fi = 0; fi < 5; ++fi) {
        for (int c = 1; c < 4; ++c) CHECK(thr.cuts[fi][c] > thr.cuts[fi][c - 1]);
        CHECK(thr.cuts[fi][0] == doctest::Approx(2.5).epsilon(1e-6));
        CHECK(thr.cuts[fi][3] == doctest::Approx(2.5).epsilon(1e-6));
    }
}

TEST_CASE("too few samples rejected") {
    CHECK_THROWS_AS(fit_thresholds(ramp_features(4)), TooFewSamples);
}

TEST_CASE("discretize boundary conventions") {
    SeverityThresholds thr;
    for (int fi = 0; fi < 5; ++fi) thr.cuts[fi] = {1.0, 2.0, 3.0, 4.0};

    CHECK(discretize({0.5, 0.5, 0.5, 0.5, 0.5}, thr).level[0] == 1);
    CHECK(std::string(kSeverityLabels[0]) == "minimal");

    // a value equal to a cut stays in the lower bin (strictly-below rule)
    CHECK(discretize({2.0, 0, 0, 0, 0}, thr).level[0] == 2);
    CHECK(discretize({2.0 + 1e-12, 0, 0, 0, 0}, thr).level[0] == 3);

    const SeverityProfile top = discretize({9.0, 0, 0, 0, 0}, thr);
    CHECK(top.level[0] == 5);
    CHECK(std::string(top.label(0)) == "severe");
}

TEST_CASE("levels are monotone in the feature value") {
    const SeverityThresholds thr = fit_thresholds(ramp_features(50));
    Rng rng(3);
    for (int rep = 0; rep < 100; ++rep) {
        const double v = rng.uniform(0.0, 55.0);
        const double w = v + rng.uniform(0.0, 10.0);
        const int lv = discretize({v, 0, 0, 0, 0}, thr).level[0];
        const int lw = discretize({w, 0, 0, 0, 0}, thr).level[0];
        CHECK(lw >= lv);
    }
}

TEST_CASE("training-set bins are balanced") {
    const SeverityThresholds thr = fit_thresholds(ramp_features(100));
    std::array<int, 5> counts{};
    for (const ClinicalFeatures& f : ramp_features(100)) ++counts[discretize(f, thr).level[0] - 1];
    for (int c : counts) CHECK(std::abs(c - 20) <= 1);
}

TEST_CASE("sev1 json round-trips") {
    const SeverityThresholds thr = fit_thresholds(ramp_features(30));
    const nlohmann::json j = thresholds_to_json(thr);
    CHECK(j.at("schema") == "SEV1");
    const SeverityThresholds back = thresholds_from_json(nlohmann::json::parse(j.dump()));
    for (int fi = 0; fi < 5; ++fi)
        for (int c = 0; c < 4; ++c) CHECK(back.cuts[fi][c] == thr.cuts[fi][c]);
}

TEST_CASE("rule-mode concepts for a quiet benign lesion") {
    const auto concepts = match_concepts(profile_of({1, 1, 1, 1, 1}), 0.1);
    std::set<std::string> texts;
    for (const auto& c : concepts) {
        texts.insert(c.text);
        CHECK(c.cls == ConceptClass::Benign);
        CHECK(kBenignPhrases.count(c.text) == 1);
    }
    CHECK(texts.count("Regular symmetric shape") == 1);
    CHECK(texts.count("Smooth borders") == 1);
    CHECK(texts.count("Uniform color") == 1);
}

TEST_CASE("rule-mode concepts for a high-risk lesion") {
    const auto concepts = match_concepts(profile_of({5, 5, 2, 2, 2}), 0.9);
    std::set<std::string> texts;
    for (const auto& c : concepts) {
        texts.insert(c.text);
        CHECK(c.cls == ConceptClass::Melanoma);
        CHECK(kMelanomaPhrases.count(c.text) == 1);
    }
    CHECK(texts.count("Asymmetric shape") == 1);
    CHECK(texts.count("Irregular borders") == 1);
}

TEST_CASE("rule mode is deterministic and k-limited") {
    const SeverityProfile p = profile_of({5, 5, 5, 5, 5});
    const auto a = match_concepts(p, 0.9);
    const auto b = match_concepts(p, 0.9);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].text == b[i].text);
    CHECK(a.size() <= 5);

    const auto two = match_concepts(p, 0.9, ConceptMode::Rule, nullptr, nullptr, 2);
    CHECK(two.size() == 2);
}

TEST_CASE("every vocabulary phrase is table-faithful") {
    for (const auto& e : concept_vocabulary()) {
        if (e.cls == ConceptClass::Benign)
            CHECK(kBenignPhrases.count(e.text) == 1);
        else
            CHECK(kMelanomaPhrases.count(e.text) == 1);
    }
    CHECK(concept_vocabulary().size() == kBenignPhrases.size() + kMelanomaPhrases.size());
}

TEST_CASE("concept vocabulary files load and validate") {
    testutil::TempDir dir("vocab");
    testutil::write_file(dir.file("v.json"),
                         R"([{"text":"Asymmetric shape","class":"melanoma"},
                             {"text":"Smooth borders","class":"benign"}])");
    const auto vocab = load_concept_vocabulary(dir.file("v.json"));
    REQUIRE(vocab.size() == 2);
    CHECK(vocab[0].text == "Asymmetric shape");
    CHECK(vocab[0].cls == ConceptClass::Melanoma);
    CHECK(vocab[1].cls == ConceptClass::Benign);

    testutil::write_file(dir.file("bad.json"), R"([{"text":"x","class":"spooky"}])");
    CHECK_THROWS(load_concept_vocabulary(dir.file("bad.json")));
}

TEST_CASE("embedding mode ranks by cosine and gates by class") {
    EmbeddingStore store;
    Embedding probe;
    probe.values = {1.0f, 0.0f, 0.0f};

    Embedding same;
    same.values = {2.0f, 0.0f, 0.0f};  // same direction, different scale
    Embedding off;
    off.values = {1.0f, 1.0f, 0.0f};
    Embedding anti;
    anti.values = {-1.0f, 0.0f, 0.0f};
    store.add("Asymmetric shape", std::move(same));
    store.add("Irregular borders", std::move(off));
    store.add("Uneven color", std::move(anti));
    store.add("Smooth borders", Embedding{{1.0f, 0.0f, 0.0f}});  // benign: gated out

    const auto ranked = match_concepts(profile_of({1, 1, 1, 1, 1}), 0.9, ConceptMode::Embedding,
                                       &probe, &store, 5);
    REQUIRE(ranked.size() == 3);
    CHECK(ranked[0].text == "Asymmetric shape");
    CHECK(ranked[0].similarity == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ranked[1].text == "Irregular borders");
    CHECK(ranked[2].text == "Uneven color");
    CHECK(ranked[2].similarity == doctest::Approx(-1.0).epsilon(1e-12));

    const auto benign = match_concepts(profile_of({1, 1, 1, 1, 1}), 0.1, ConceptMode::Embedding,
                                       &probe, &store, 5);
    REQUIRE(benign.size() == 1);
    CHECK(benign[0].text == "Smooth borders");

    Embedding short_probe;
    short_probe.values = {1.0f};
    CHECK_THROWS_AS(match_concepts(profile_of({1, 1, 1, 1, 1}), 0.9, ConceptMode::Embedding,
                                   &short_probe, &store, 5),
                    StoreDimMismatch);
    CHECK_THROWS_AS(match_concepts(profile_of({1, 1, 1, 1, 1}), 0.9, ConceptMode::Embedding,
                                   nullptr, nullptr, 5),
                    StoreDimMismatch);
}

TEST_CASE("prompt carries exactly the enabled blocks") {
    const ClinicalFeatures f = {0.1234, 0.0567, 0.11, 0.22, 0.33};
    const SeverityProfile p = profile_of({5, 4, 2, 3, 1});
    const auto concepts = match_concepts(p, 0.8);
    REQUIRE(!concepts.empty());

    SUBCASE("both blocks on") {
        const std::string prompt = assemble_prompt(f, p, concepts, 0.8);
        for (double v : f.as_array()) CHECK(prompt.find(format_double(v)) != std::string::npos);
        for (const auto& c : concepts) CHECK(prompt.find(c.text) != std::string::npos);
        CHECK(prompt.find("severe") != std::string::npos);
        CHECK(prompt.find("suspicious for melanoma") != std::string::npos);
    }
    SUBCASE("no clinical block means no digits anywhere") {
        const std::string prompt = assemble_prompt(f, p, concepts, 0.8, {false, true});
        for (char ch : prompt) CHECK_FALSE(std::isdigit(static_cast<unsigned char>(ch)));
        for (const auto& c : concepts) CHECK(prompt.find(c.text) != std::string::npos);
    }
    SUBCASE("no concept block drops every phrase") {
        const std::string prompt = assemble_prompt(f, p, concepts, 0.8, {true, false});
        for (const std::string& phrase : kMelanomaPhrases)
            CHECK(prompt.find(phrase) == std::string::npos);
        for (const std::string& phrase : kBenignPhrases)
            CHECK(prompt.find(phrase) == std::string::npos);
        CHECK(prompt.find(format_double(f.a)) != std::string::npos);
    }
    SUBCASE("nothing enabled is an error") {
        CHECK_THROWS_AS(assemble_prompt(f, p, concepts, 0.8, {false, false}), NothingToExplain);
    }
}

}  // TEST_SUITE
