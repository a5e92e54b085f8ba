#include "cefm/report.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <sstream>

#include <httplib.h>

#include "cefm/features.hpp"

namespace cefm {

std::string prompt_hash_hex(const std::string& prompt) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : prompt) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct FeatureNaming {
    const char* name;
    const char* symbol;
    const char* low_phrase;   // used in per-feature comments
    const char* risk_phrase;  // used in the risk listing
};

constexpr FeatureNaming kNaming[5] = {
    {"Asymmetry", "A", "symmetric halves", "asymmetry"},
    {"Border Irregularity", "B2", "smooth border", "border irregularity"},
    {"Color Variation", "H", "stable hue", "hue variation"},
    {"Saturation Variation", "S", "stable saturation", "saturation variation"},
    {"Brightness Variation", "V", "stable brightness", "brightness variation"},
};

std::string feature_comment(int level, const FeatureNaming& naming) {
    // e.g. "severe asymmetry, strong malignancy indicator"
    std::string c = std::string(kSeverityLabels[level - 1]) + " " + naming.risk_phrase;
    if (level >= 4)
        c += ", strong malignancy indicator";
    else if (level == 3)
        c += ", warrants attention";
    return c;
}

std::string concept_rationale(const ConceptDescriptor& c) {
    return c.cls == ConceptClass::Melanoma ? "melanoma-associated attribute"
                                           : "consistent with a benign lesion";
}

}  // namespace

ReportDocument generate_template(const ReportInputs& in) {
    ReportDocument doc;
    doc.provenance.engine = "template";
    doc.provenance.timestamp = utc_timestamp();
    doc.provenance.prompt_hash = prompt_hash_hex(in.prompt);

    const bool melanoma = in.score >= 0.5;
    doc.diagnosis = melanoma ? "Suspicious for Melanoma" : "Likely Benign Lesion";

    if (in.flags.clinical) {
        std::ostringstream q;
        const auto vals = in.features.as_array();
        for (int fi = 0; fi < 5; ++fi) {
            QuantFeature row;
            row.name = kNaming[fi].name;
            row.symbol = kNaming[fi].symbol;
            row.value = vals[fi];
            row.severity = kSeverityLabels[in.profile.level[fi] - 1];
            row.comment = feature_comment(in.profile.level[fi], kNaming[fi]);
            q << row.name << " (" << row.symbol << "): " << format_double(row.value) << " - "
              << row.comment << "\n";
            doc.quant_rows.push_back(std::move(row));
        }
        doc.quantitative = q.str();
    } else {
        doc.quantitative = kNotAssessed;
    }

    if (in.flags.concepts) {
        std::ostringstream v;
        if (in.concepts.empty()) {
            v << "No matched visual concepts.\n";
        } else {
            for (const ConceptDescriptor& c : in.concepts) {
                VisualFeature row{c.text, concept_rationale(c)};
                v << row.phrase << " - " << row.rationale << "\n";
                doc.visual_rows.push_back(std::move(row));
            }
        }
        doc.visual = v.str();
    } else {
        doc.visual = kNotAssessed;
    }

    // risk drivers: every feature at level >= 4 plus melanoma-class concepts
    std::vector<std::string> drivers;
    if (in.flags.clinical)
        for (int fi = 0; fi < 5; ++fi)
            if (in.profile.level[fi] >= 4)
                drivers.push_back(std::string(kSeverityLabels[in.profile.level[fi] - 1]) + " " +
                                  kNaming[fi].risk_phrase);
    if (in.flags.concepts)
        for (const ConceptDescriptor& c : in.concepts)
            if (c.cls == ConceptClass::Melanoma) drivers.push_back(c.text);

    std::ostringstream r;
    if (drivers.empty()) {
        r << (melanoma ? "Elevated classifier score without individual high-risk drivers; "
                         "recommend dermoscopic follow-up."
                       : "No high-risk drivers identified.");
    } else {
        r << (melanoma ? "High suspicion due to: " : "Findings noted: ");
        for (std::size_t i = 0; i < drivers.size(); ++i) {
            if (i) r << ", ";
            r << drivers[i];
        }
        r << ".";
    }
    doc.risk_assessment = r.str();
    return doc;
}

namespace {

std::string lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Strips markdown markers, numbering and trailing colons off a potential
// heading line.
std::string heading_key(const std::string& line) {
    std::string s = line;
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == '#' || s[b] == '*' || s[b] == '-' || s[b] == ' ' || s[b] == '\t' ||
                     std::isdigit(static_cast<unsigned char>(s[b])) || s[b] == '.' || s[b] == ')'))
        ++b;
    while (e > b && (s[e - 1] == '*' || s[e - 1] == ':' || s[e - 1] == ' ' || s[e - 1] == '\t' ||
                     s[e - 1] == '#'))
        --e;
    return lower(s.substr(b, e - b));
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

bool split_sections(const std::string& text, std::string& diagnosis, std::string& quantitative,
                    std::string& visual, std::string& risk) {
    static const struct {
        const char* key;
        int idx;
    } kHeadings[] = {
        {"ai diagnosis", 0},        {"diagnosis", 0},
        {"quantitative features", 1}, {"visual features", 2},
        {"risk assessment", 3},
    };

    std::array<std::string, 4> sections;
    int current = -1;
    bool any = false;

    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const std::string key = heading_key(line);
        int matched = -1;
        for (const auto& h : kHeadings)
            if (key == h.key) {
                matched = h.idx;
                break;
            }
        if (matched >= 0) {
            current = matched;
            any = true;
            continue;
        }
        if (current >= 0) {
            sections[current] += line;
            sections[current] += "\n";
        }
    }
    if (!any) return false;
    diagnosis = trim(sections[0]);
    quantitative = trim(sections[1]);
    visual = trim(sections[2]);
    risk = trim(sections[3]);
    return true;
}

namespace {

const char* kSystemPrompt =
    "You are a dermatology assistant. Produce a concise, clinically grounded "
    "melanoma report with exactly four sections titled AI Diagnosis, "
    "Quantitative Features, Visual Features, and Risk Assessment. Use only "
    "the findings provided by the user.";

}  // namespace

ReportDocument generate_remote(const ReportInputs& in, const LlmEndpointConfig& cfg) {
    auto fall_back = [&](const std::string& why) {
        ReportDocument doc = generate_template(in);
        doc.provenance.note = why + "; fell back to template engine";
        return doc;
    };

    if (cfg.base_url.empty()) return fall_back("no endpoint configured");

    nlohmann::json body;
    body["model"] = cfg.model;
    body["messages"] = nlohmann::json::array({
        nlohmann::json{{"role", "system"}, {"content", kSystemPrompt}},
        nlohmann::json{{"role", "user"}, {"content", in.prompt}},
    });
    body["temperature"] = 0;
    const std::string payload = body.dump();

    httplib::Client client(cfg.base_url);
    client.set_connection_timeout(cfg.timeout_seconds, 0);
    client.set_read_timeout(cfg.timeout_seconds, 0);
    httplib::Headers headers;
    if (!cfg.token.empty()) headers.emplace("Authorization", "Bearer " + cfg.token);

    std::string failure;
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        auto res = client.Post("/v1/chat/completions", headers, payload, "application/json");
        if (!res) {
            failure = "Timeout: no response from endpoint";
            continue;  // transport error or timeout: retry
        }
        if (res->status == 401 || res->status == 403) {
            failure = "AuthError: endpoint returned " + std::to_string(res->status);
            break;  // retrying will not fix credentials
        }
        if (res->status != 200) {
            failure = "HttpError: endpoint returned " + std::to_string(res->status);
            continue;
        }

        std::string content;
        try {
            const nlohmann::json resp = nlohmann::json::parse(res->body);
            content = resp.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const std::exception& e) {
            failure = std::string("HttpError: malformed response body (") + e.what() + ")";
            continue;
        }

        ReportDocument doc;
        doc.provenance.engine = "remote";
        doc.provenance.model = cfg.model;
        doc.provenance.timestamp = utc_timestamp();
        doc.provenance.prompt_hash = prompt_hash_hex(in.prompt);

        std::string diagnosis, quantitative, visual, risk;
        if (split_sections(content, diagnosis, quantitative, visual, risk)) {
            const ReportDocument local = generate_template(in);
            doc.diagnosis = diagnosis.empty() ? local.diagnosis : diagnosis;
            doc.quantitative = quantitative.empty() ? local.quantitative : quantitative;
            doc.visual = visual.empty() ? local.visual : visual;
            doc.risk_assessment = risk.empty() ? local.risk_assessment : risk;
            doc.quant_rows = local.quant_rows;
            doc.visual_rows = local.visual_rows;
        } else {
            // no recognizable headings: keep the full text rather than lose it
            const ReportDocument local = generate_template(in);
            doc.diagnosis = local.diagnosis;
            doc.quantitative = local.quantitative;
            doc.visual = local.visual;
            doc.risk_assessment = trim(content);
            doc.quant_rows = local.quant_rows;
            doc.visual_rows = local.visual_rows;
            doc.parse_degraded = true;
        }
        return doc;
    }
    return fall_back(failure.empty() ? "remote request failed" : failure);
}

std::string render(const ReportDocument& doc, ReportFormat format) {
    if (format == ReportFormat::Json) {
        nlohmann::ordered_json j;
        j["diagnosis"] = doc.diagnosis;
        j["quantitative_features"] = nlohmann::ordered_json::array();
        for (const QuantFeature& q : doc.quant_rows)
            j["quantitative_features"].push_back({{"name", q.name},
                                                  {"symbol", q.symbol},
                                                  {"value", q.value},
                                                  {"severity", q.severity},
                                                  {"comment", q.comment}});
        j["quantitative_text"] = doc.quantitative;
        j["visual_features"] = nlohmann::ordered_json::array();
        for (const VisualFeature& v : doc.visual_rows)
            j["visual_features"].push_back({{"phrase", v.phrase}, {"rationale", v.rationale}});
        j["visual_text"] = doc.visual;
        j["risk_assessment"] = doc.risk_assessment;
        j["parse_degraded"] = doc.parse_degraded;
        j["provenance"] = {{"engine", doc.provenance.engine},
                           {"model", doc.provenance.model},
                           {"timestamp", doc.provenance.timestamp},
                           {"prompt_hash", doc.provenance.prompt_hash},
                           {"note", doc.provenance.note}};
        return j.dump(2) + "\n";
    }

    std::ostringstream md;
    md << "## AI Diagnosis\n\n" << doc.diagnosis << "\n\n";
    md << "## Quantitative Features\n\n" << trim(doc.quantitative) << "\n\n";
    md << "## Visual Features\n\n" << trim(doc.visual) << "\n\n";
    md << "## Risk Assessment\n\n" << trim(doc.risk_assessment) << "\n";
    if (doc.parse_degraded)
        md << "\n> Degraded: the remote response had no recognizable section headings; "
              "its full text is preserved under Risk Assessment.\n";
    md << "\n---\nengine: " << doc.provenance.engine;
    if (!doc.provenance.model.empty()) md << " | model: " << doc.provenance.model;
    md << " | generated: " << doc.provenance.timestamp
       << " | prompt: " << doc.provenance.prompt_hash;
    if (!doc.provenance.note.empty()) md << " | note: " << doc.provenance.note;
    md << "\n";
    return md.str();
}

ReportDocument parse_report_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    ReportDocument doc;
    doc.diagnosis = j.at("diagnosis").get<std::string>();
    doc.quantitative = j.at("quantitative_text").get<std::string>();
    doc.visual = j.at("visual_text").get<std::string>();
    doc.risk_assessment = j.at("risk_assessment").get<std::string>();
    for (const auto& q : j.at("quantitative_features"))
        doc.quant_rows.push_back({q.at("name").get<std::string>(),
                                  q.at("symbol").get<std::string>(), q.at("value").get<double>(),
                                  q.at("severity").get<std::string>(),
                                  q.at("comment").get<std::string>()});
    for (const auto& v : j.at("visual_features"))
        doc.visual_rows.push_back(
            {v.at("phrase").get<std::string>(), v.at("rationale").get<std::string>()});
    doc.parse_degraded = j.at("parse_degraded").get<bool>();
    const auto& p = j.at("provenance");
    doc.provenance.engine = p.at("engine").get<std::string>();
    doc.provenance.model = p.at("model").get<std::string>();
    doc.provenance.timestamp = p.at("timestamp").get<std::string>();
    doc.provenance.prompt_hash = p.at("prompt_hash").get<std::string>();
    doc.provenance.note = p.at("note").get<std::string>();
    return doc;
}

}  // namespace cefm
