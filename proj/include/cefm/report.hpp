#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cefm/explain.hpp"

namespace cefm {

struct QuantFeature {
    std::string name;      // e.g. "Asymmetry"
    std::string symbol;    // e.g. "A"
    double value = 0.0;
    std::string severity;  // minimal..severe
    std::string comment;

    bool operator==(const QuantFeature&) const = default;
};

struct VisualFeature {
    std::string phrase;     // verbatim vocabulary phrase
    std::string rationale;  // one line

    bool operator==(const VisualFeature&) const = default;
};

struct Provenance {
    std::string engine;     // "remote" or "template"
    std::string model;      // remote model id, empty for template
    std::string timestamp;  // ISO-8601 UTC
    std::string prompt_hash;
    std::string note;       // failure that triggered a fallback, if any

    bool operator==(const Provenance&) const = default;
};

// Four-section diagnostic report. Sections hold text; the structured rows
// behind the template sections are kept alongside for downstream use.
struct ReportDocument {
    std::string diagnosis;
    std::string quantitative;  // "Not assessed." sentinel under ablation
    std::string visual;
    std::string risk_assessment;
    std::vector<QuantFeature> quant_rows;
    std::vector<VisualFeature> visual_rows;
    Provenance provenance;
    bool parse_degraded = false;

    bool operator==(const ReportDocument&) const = default;
};

inline constexpr const char* kNotAssessed = "Not assessed.";

struct LlmEndpointConfig {
    std::string base_url;  // e.g. http://127.0.0.1:8080
    std::string token;     // environment-sourced; never serialized
    std::string model;
    int timeout_seconds = 30;
    int max_retries = 2;
};

// Everything both engines need: the assembled prompt plus the structured
// inputs the template path renders directly.
struct ReportInputs {
    ClinicalFeatures features;
    SeverityProfile profile;
    std::vector<ConceptDescriptor> concepts;
    double score = 0.0;
    AblationFlags flags;
    std::string prompt;
};

// Deterministic local engine. Pure function of its inputs except for the
// provenance timestamp.
ReportDocument generate_template(const ReportInputs& in);

// Chat-completion request against an OpenAI-style endpoint; any transport or
// HTTP failure falls back to generate_template with the failure recorded in
// provenance. A response without recognizable section headings degrades to a
// full-text report (parse_degraded).
ReportDocument generate_remote(const ReportInputs& in, const LlmEndpointConfig& cfg);

enum class ReportFormat { Markdown, Json };

std::string render(const ReportDocument& doc, ReportFormat format);
ReportDocument parse_report_json(const std::string& text);

std::string prompt_hash_hex(const std::string& prompt);

// Section splitter for remote responses; exposed for tests.
// Returns false when no recognizable headings were found.
bool split_sections(const std::string& text, std::string& diagnosis, std::string& quantitative,
                    std::string& visual, std::string& risk);

}  // namespace cefm
