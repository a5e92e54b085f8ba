#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cefm/embedding.hpp"
#include "cefm/features.hpp"

namespace cefm {

struct TooFewSamples : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NothingToExplain : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Four ascending cut points per feature define five severity bins.
struct SeverityThresholds {
    // feature order: a, b2, sigma_h, sigma_s, sigma_v
    std::array<std::array<double, 4>, 5> cuts{};
};

inline constexpr std::array<const char*, 5> kSeverityLabels = {"minimal", "mild", "moderate",
                                                               "marked", "severe"};

struct SeverityProfile {
    std::array<int, 5> level{};  // 1..5 per feature, order as kFeatureNames

    int a_level() const { return level[0]; }
    int b2_level() const { return level[1]; }
    int max_sigma_level() const { return std::max({level[2], level[3], level[4]}); }
    const char* label(int feature_idx) const { return kSeverityLabels[level[feature_idx] - 1]; }
};

// Empirical quantiles at {0.2, 0.4, 0.6, 0.8} with linear interpolation;
// duplicate cuts repaired by epsilon spreading so bins stay well ordered.
SeverityThresholds fit_thresholds(const std::vector<ClinicalFeatures>& features);

// level = 1 + number of cuts strictly below the value.
SeverityProfile discretize(const ClinicalFeatures& f, const SeverityThresholds& thr);

// SEV1 schema.
nlohmann::json thresholds_to_json(const SeverityThresholds& thr);
SeverityThresholds thresholds_from_json(const nlohmann::json& j);

enum class ConceptClass { Benign, Melanoma };

struct ConceptDescriptor {
    std::string text;
    ConceptClass cls = ConceptClass::Benign;
    double similarity = 0.0;  // embedding mode only
};

struct ConceptVocabularyEntry {
    std::string text;
    ConceptClass cls;
};

// Built-in dermatological attribute vocabulary (benign and melanoma phrases).
const std::vector<ConceptVocabularyEntry>& concept_vocabulary();
std::vector<ConceptVocabularyEntry> load_concept_vocabulary(const std::string& path);

enum class ConceptMode { Rule, Embedding };

// Rule mode maps severity levels and classifier score onto vocabulary
// phrases deterministically. Embedding mode ranks vocabulary phrases by the
// cosine similarity of their text embeddings against the image embedding;
// both modes emit only phrases of the class the score gates to
// (score >= 0.5 selects melanoma descriptors).
std::vector<ConceptDescriptor> match_concepts(
    const SeverityProfile& profile, double score, ConceptMode mode = ConceptMode::Rule,
    const Embedding* image_embedding = nullptr, const EmbeddingStore* concept_store = nullptr,
    int k = 5,
    const std::vector<ConceptVocabularyEntry>& vocabulary = concept_vocabulary());

struct AblationFlags {
    bool clinical = true;  // quantitative block
    bool concepts = true;  // visual-concept block
};

// Deterministic prompt for the report engine. The quantitative block is the
// only place numbers appear; with it disabled the prompt is number-free.
std::string assemble_prompt(const ClinicalFeatures& f, const SeverityProfile& profile,
                            const std::vector<ConceptDescriptor>& concepts, double score,
                            const AblationFlags& flags = {});

}  // namespace cefm
