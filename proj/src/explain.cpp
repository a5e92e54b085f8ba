#include "cefm/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace cefm {

namespace {

double quantile_linear(const std::vector<double>& sorted, double p) {
    const std::size_t n = sorted.size();
    const double pos = p * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= n) return sorted[n - 1];
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

SeverityThresholds fit_thresholds(const std::vector<ClinicalFeatures>& features) {
    if (features.size() < 5)
        throw TooFewSamples("severity thresholds need at least 5 samples, got " +
                            std::to_string(features.size()));

    SeverityThresholds thr;
    for (int fi = 0; fi < 5; ++fi) {
        std::vector<double> vals;
        vals.reserve(features.size());
        for (const ClinicalFeatures& f : features) vals.push_back(f.as_array()[fi]);
        std::sort(vals.begin(), vals.end());

        std::array<double, 4>& cuts = thr.cuts[fi];
        const double ps[4] = {0.2, 0.4, 0.6, 0.8};
        for (int c = 0; c < 4; ++c) cuts[c] = quantile_linear(vals, ps[c]);

        // repair duplicate cuts so the five bins stay distinguishable
        const double range = vals.back() - vals.front();
        const double eps = range > 0.0 ? 1e-9 * range
                                       : 1e-9 * std::max(1.0, std::abs(vals.front()));
        for (int c = 1; c < 4; ++c)
            if (cuts[c] <= cuts[c - 1])
                cuts[c] = std::max(cuts[c - 1] + eps,
                                   std::nextafter(cuts[c - 1], std::numeric_limits<double>::max()));
    }
    return thr;
}

SeverityProfile discretize(const ClinicalFeatures& f, const SeverityThresholds& thr) {
    SeverityProfile p;
    const auto vals = f.as_array();
    for (int fi = 0; fi < 5; ++fi) {
        int level = 1;
        for (double cut : thr.cuts[fi])
            if (cut < vals[fi]) ++level;
        p.level[fi] = level;
    }
    return p;
}

nlohmann::json thresholds_to_json(const SeverityThresholds& thr) {
    nlohmann::json j;
    j["schema"] = "SEV1";
    nlohmann::json cuts;
    for (int fi = 0; fi < 5; ++fi) cuts[kFeatureNames[fi]] = thr.cuts[fi];
    j["cuts"] = std::move(cuts);
    return j;
}

SeverityThresholds thresholds_from_json(const nlohmann::json& j) {
    if (j.value("schema", "") != "SEV1") throw TooFewSamples("not a SEV1 document");
    SeverityThresholds thr;
    const auto& cuts = j.at("cuts");
    for (int fi = 0; fi < 5; ++fi) {
        const auto arr = cuts.at(kFeatureNames[fi]).get<std::vector<double>>();
        if (arr.size() != 4) throw TooFewSamples("SEV1: each feature needs 4 cuts");
        std::copy(arr.begin(), arr.end(), thr.cuts[fi].begin());
    }
    return thr;
}

const std::vector<ConceptVocabularyEntry>& concept_vocabulary() {
    static const std::vector<ConceptVocabularyEntry> vocab = {
        {"Regular symmetric shape", ConceptClass::Benign},
        {"Smooth borders", ConceptClass::Benign},
        {"Uniform color", ConceptClass::Benign},
        {"Light brown color", ConceptClass::Benign},
        {"Small size", ConceptClass::Benign},
        {"Well-defined edges", ConceptClass::Benign},
        {"No ulceration", ConceptClass::Benign},
        {"No bleeding", ConceptClass::Benign},
        {"No satellite lesions", ConceptClass::Benign},
        {"Dome-shaped structure", ConceptClass::Benign},
        {"Single color tone", ConceptClass::Benign},
        {"Asymmetric shape", ConceptClass::Melanoma},
        {"Irregular borders", ConceptClass::Melanoma},
        {"Uneven color", ConceptClass::Melanoma},
        {"Dark brown areas", ConceptClass::Melanoma},
        {"Black areas", ConceptClass::Melanoma},
        {"Blue-gray areas", ConceptClass::Melanoma},
        {"Red areas", ConceptClass::Melanoma},
        {"White areas", ConceptClass::Melanoma},
        {"Multiple mixed colors", ConceptClass::Melanoma},
        {"Fuzzy edges", ConceptClass::Melanoma},
        {"Ulceration", ConceptClass::Melanoma},
        {"Bleeding", ConceptClass::Melanoma},
        {"Crusting", ConceptClass::Melanoma},
        {"Scaling", ConceptClass::Melanoma},
        {"Satellite lesions", ConceptClass::Melanoma},
    };
    return vocab;
}

std::vector<ConceptVocabularyEntry> load_concept_vocabulary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open concept vocabulary: " + path);
    nlohmann::json j;
    in >> j;
    std::vector<ConceptVocabularyEntry> vocab;
    for (const auto& e : j) {
        ConceptVocabularyEntry entry;
        entry.text = e.at("text").get<std::string>();
        const std::string cls = e.at("class").get<std::string>();
        if (cls == "benign")
            entry.cls = ConceptClass::Benign;
        else if (cls == "melanoma")
            entry.cls = ConceptClass::Melanoma;
        else
            throw std::runtime_error("concept class must be benign or melanoma: " + cls);
        vocab.push_back(std::move(entry));
    }
    return vocab;
}

namespace {

const ConceptVocabularyEntry* find_phrase(const std::vector<ConceptVocabularyEntry>& vocab,
                                          const std::string& text) {
    for (const auto& e : vocab)
        if (e.text == text) return &e;
    return nullptr;
}

// Deterministic severity -> phrase table. Only vocabulary phrases of the
// score-gated class are emitted, most indicative first.
std::vector<std::string> rule_phrases(const SeverityProfile& p, bool melanoma) {
    std::vector<std::string> out;
    if (melanoma) {
        if (p.a_level() >= 4) out.push_back("Asymmetric shape");
        if (p.b2_level() >= 4) out.push_back("Irregular borders");
        if (p.b2_level() == 3) out.push_back("Fuzzy edges");
        if (p.max_sigma_level() >= 4) {
            out.push_back("Uneven color");
            out.push_back("Multiple mixed colors");
        } else if (p.max_sigma_level() == 3) {
            out.push_back("Uneven color");
        }
    } else {
        if (p.a_level() <= 2) out.push_back("Regular symmetric shape");
        if (p.b2_level() <= 2) out.push_back("Smooth borders");
        if (p.max_sigma_level() <= 2) {
            out.push_back("Uniform color");
            out.push_back("Single color tone");
        }
        if (p.a_level() <= 2 && p.b2_level() <= 2) out.push_back("Well-defined edges");
    }
    return out;
}

}  // namespace

std::vector<ConceptDescriptor> match_concepts(const SeverityProfile& profile, double score,
                                              ConceptMode mode, const Embedding* image_embedding,
                                              const EmbeddingStore* concept_store, int k,
                                              const std::vector<ConceptVocabularyEntry>& vocabulary) {
    const bool melanoma = score >= 0.5;
    std::vector<ConceptDescriptor> out;

    if (mode == ConceptMode::Rule) {
        for (const std::string& text : rule_phrases(profile, melanoma)) {
            const ConceptVocabularyEntry* e = find_phrase(vocabulary, text);
            if (!e) continue;
            if (static_cast<int>(out.size()) >= k) break;
            out.push_back({e->text, e->cls, 0.0});
        }
        return out;
    }

    if (!image_embedding || !concept_store)
        throw StoreDimMismatch("embedding mode needs an image embedding and a concept store");
    if (concept_store->dim() != image_embedding->dim())
        throw StoreDimMismatch("concept store dim " + std::to_string(concept_store->dim()) +
                               " does not match image embedding dim " +
                               std::to_string(image_embedding->dim()));

    const std::vector<double> img = image_embedding->as_double();
    double img_norm = 0.0;
    for (double v : img) img_norm += v * v;
    img_norm = std::sqrt(img_norm);

    std::vector<ConceptDescriptor> ranked;
    for (std::size_t i = 0; i < concept_store->size(); ++i) {
        const ConceptVocabularyEntry* e = find_phrase(vocabulary, concept_store->id_at(i));
        if (!e) continue;  // store entries outside the vocabulary are ignored
        if ((e->cls == ConceptClass::Melanoma) != melanoma) continue;
        const std::vector<double> ce = concept_store->at(i).as_double();
        double dot = 0.0, cn = 0.0;
        for (std::size_t kk = 0; kk < ce.size(); ++kk) {
            dot += img[kk] * ce[kk];
            cn += ce[kk] * ce[kk];
        }
        cn = std::sqrt(cn);
        const double denom = img_norm * cn;
        ranked.push_back({e->text, e->cls, denom > 0.0 ? dot / denom : 0.0});
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const ConceptDescriptor& a, const ConceptDescriptor& b) {
                         return a.similarity > b.similarity;
                     });
    if (static_cast<int>(ranked.size()) > k) ranked.resize(k);
    return ranked;
}

std::string assemble_prompt(const ClinicalFeatures& f, const SeverityProfile& profile,
                            const std::vector<ConceptDescriptor>& concepts, double score,
                            const AblationFlags& flags) {
    if (!flags.clinical && !flags.concepts)
        throw NothingToExplain("both prompt content blocks are disabled");

    const bool melanoma = score >= 0.5;
    std::ostringstream out;
    out << "You are drafting a structured dermatology lesion report.\n\n";
    out << "Classifier assessment: "
        << (melanoma ? "suspicious for melanoma" : "likely benign lesion");
    if (flags.clinical) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", score);
        out << " (melanoma score " << buf << ")";
    }
    out << ".\n";

    if (flags.clinical) {
        static const char* long_names[5] = {"Asymmetry (A)", "Border irregularity (B2)",
                                            "Hue variation (sigma_H)",
                                            "Saturation variation (sigma_S)",
                                            "Brightness variation (sigma_V)"};
        out << "\nQuantitative lesion measurements:\n";
        const auto vals = f.as_array();
        for (int fi = 0; fi < 5; ++fi)
            out << "- " << long_names[fi] << ": " << format_double(vals[fi])
                << " - severity: " << profile.label(fi) << "\n";
    }

    if (flags.concepts) {
        out << "\nMatched visual concepts:\n";
        if (concepts.empty())
            out << "- none\n";
        else
            for (const ConceptDescriptor& c : concepts) out << "- " << c.text << "\n";
    }

    out << "\nWrite the report with exactly these sections: AI Diagnosis, "
           "Quantitative Features, Visual Features, Risk Assessment.\n"
           "Ground every statement in the data above and keep each section concise.\n";
    return out.str();
}

}  // namespace cefm
