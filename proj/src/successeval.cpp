#include "fbeval/successeval.hpp"

#include <array>

#include "fbeval/error.hpp"
#include "fbeval/parse.hpp"
#include "fbeval/rng.hpp"

namespace fbeval {

namespace {

struct QualityField {
    const char* name;
    int QualityScores::*member;
};

constexpr QualityField kQualityFields[] = {
    {"accuracy", &QualityScores::accuracy},
    {"prioritisation", &QualityScores::prioritisation},
    {"constructive_tone", &QualityScores::constructive_tone},
    {"paper_specific_grounding", &QualityScores::paper_specific_grounding},
    {"actionability", &QualityScores::actionability},
};

std::string excerpt(const std::string& body, std::size_t chars) {
    return body.size() <= chars ? body : body.substr(0, chars);
}

}  // namespace

void to_json(json& j, const QualityScores& q) {
    j = json::object();
    for (const auto& f : kQualityFields) {
        json dim = {{"score", q.*f.member}};
        if (auto it = q.justifications.find(f.name); it != q.justifications.end()) dim["justification"] = it->second;
        j[f.name] = dim;
    }
}

void from_json(const json& j, QualityScores& q) {
    q = QualityScores{};
    for (const auto& f : kQualityFields) {
        auto it = j.find(f.name);
        if (it == j.end() || !it->is_object() || !it->contains("score") || !it->at("score").is_number_integer()) {
            throw JudgeFormatError(std::string("quality scores lack an integer '") + f.name + "' score", j.dump());
        }
        const int score = it->at("score").get<int>();
        if (score < 1 || score > 5) {
            throw JudgeFormatError(std::string("quality score for '") + f.name + "' is outside 1..5", j.dump());
        }
        q.*f.member = score;
        if (auto why = it->find("justification"); why != it->end() && why->is_string()) {
            q.justifications[f.name] = why->get<std::string>();
        }
    }
}

void QualityThresholds::validate() const {
    for (double v : {accuracy, prioritisation, constructive_tone, paper_specific_grounding}) {
        if (v < 1.0 || v > 5.0) throw ConfigError("quality thresholds must lie in [1, 5]");
    }
}

void to_json(json& j, const QualityThresholds& t) {
    j = json{{"accuracy", t.accuracy},
             {"prioritisation", t.prioritisation},
             {"constructive_tone", t.constructive_tone},
             {"paper_specific_grounding", t.paper_specific_grounding}};
}

void from_json(const json& j, QualityThresholds& t) {
    QualityThresholds d;
    t.accuracy = j.value("accuracy", d.accuracy);
    t.prioritisation = j.value("prioritisation", d.prioritisation);
    t.constructive_tone = j.value("constructive_tone", d.constructive_tone);
    t.paper_specific_grounding = j.value("paper_specific_grounding", d.paper_specific_grounding);
}

QualityScores score_quality(JudgeClient& judge, const FeedbackUnit& unit, const PaperRecord& paper,
                            const QualityPromptOptions& options) {
    const auto& tmpl = PromptRegistry::builtin().get("score_quality");
    const auto response = judge.complete(tmpl, {{"venue", options.venue},
                                                {"paper_excerpt", excerpt(paper.body_markdown, options.excerpt_chars)},
                                                {"feedback", unit.text}});
    return response.parsed.get<QualityScores>();
}

bool passes_quality(const QualityScores& s, const QualityThresholds& t) {
    return s.accuracy >= t.accuracy && s.prioritisation >= t.prioritisation &&
           s.constructive_tone >= t.constructive_tone && s.paper_specific_grounding >= t.paper_specific_grounding;
}

PredictedResponse predict_response(JudgeClient& predictor, const FeedbackUnit& unit, const PaperRecord& paper,
                                   std::size_t excerpt_chars) {
    const auto& tmpl = PromptRegistry::builtin().get("predict_response");
    const auto response =
        predictor.complete(tmpl, {{"paper", excerpt(paper.body_markdown, excerpt_chars)}, {"feedback", unit.text}});
    PredictedResponse out;
    out.unit_id = unit.id;
    try {
        out.validity = validity_from_judge(response.parsed.at("validity").get<std::string>());
        out.action = action_from_judge(response.parsed.at("author_action").get<std::string>());
    } catch (const JudgeFormatError& e) {
        throw JudgeFormatError(e.what(), response.raw_text);
    }
    if (auto it = response.parsed.find("author_response_text"); it != response.parsed.end() && it->is_string()) {
        out.response_text = it->get<std::string>();
    }
    return out;
}

std::string_view to_string(SuccessMode m) {
    switch (m) {
        case SuccessMode::combined: return "combined";
        case SuccessMode::validity_only: return "validity_only";
        case SuccessMode::action_only: return "action_only";
    }
    return "combined";
}

bool unit_success(const UnitAssessment& u, SuccessMode mode, bool quality_filter) {
    if (quality_filter && !u.passes_quality) return false;
    const bool valid = u.validity == Validity::agreed;
    const bool actionable = is_actionable(u.action);
    switch (mode) {
        case SuccessMode::combined: return valid && actionable;
        case SuccessMode::validity_only: return valid;
        case SuccessMode::action_only: return actionable;
    }
    return false;
}

double success_rate(const std::vector<UnitAssessment>& units, SuccessMode mode, bool quality_filter) {
    if (units.empty()) throw InvalidArgument("success rate of an empty unit set");
    std::size_t hits = 0;
    for (const auto& u : units) hits += unit_success(u, mode, quality_filter) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(units.size());
}

double expected_subsample_rate(const std::vector<std::vector<UnitAssessment>>& per_paper, std::size_t k,
                               SuccessMode mode, bool quality_filter) {
    double expected_hits = 0.0;
    std::size_t drawn = 0;
    for (const auto& paper : per_paper) {
        if (paper.empty()) continue;
        std::size_t hits = 0;
        for (const auto& u : paper) hits += unit_success(u, mode, quality_filter) ? 1 : 0;
        const std::size_t m = std::min(k, paper.size());
        // Each unit is in a uniform size-m subset with probability m / n.
        expected_hits += static_cast<double>(hits) * static_cast<double>(m) / static_cast<double>(paper.size());
        drawn += m;
    }
    if (drawn == 0) throw InvalidArgument("success evaluation needs at least one unit");
    return expected_hits / static_cast<double>(drawn);
}

SuccessEvalResult bootstrap_eval(const std::vector<std::vector<UnitAssessment>>& per_paper, std::size_t k,
                                 std::size_t iterations, std::uint64_t seed, bool quality_filter) {
    if (iterations < 2) throw InvalidArgument("bootstrap needs at least 2 iterations");
    if (k == 0) throw InvalidArgument("subsample size k must be positive");
    SuccessEvalResult result;
    std::vector<const std::vector<UnitAssessment>*> papers;
    for (const auto& p : per_paper) {
        if (p.empty()) continue;
        papers.push_back(&p);
        result.units += p.size();
    }
    result.papers = papers.size();
    if (papers.empty()) throw InvalidArgument("success evaluation needs at least one unit");

    // Per-unit success bits for every mode, so one subsample serves all three.
    std::vector<std::vector<std::array<bool, 3>>> bits;
    bits.reserve(papers.size());
    for (const auto* p : papers) {
        auto& row = bits.emplace_back();
        for (const auto& u : *p) {
            row.push_back({unit_success(u, SuccessMode::combined, quality_filter),
                           unit_success(u, SuccessMode::validity_only, quality_filter),
                           unit_success(u, SuccessMode::action_only, quality_filter)});
        }
    }

    std::array<std::vector<double>, 3> draws;
    for (auto& d : draws) d.reserve(iterations);
    for (std::size_t b = 0; b < iterations; ++b) {
        Rng rng(derive_seed(seed, b));
        std::array<std::size_t, 3> hits{};
        std::size_t drawn = 0;
        for (const auto& row : bits) {
            for (auto i : rng.sample_indices(row.size(), k)) {
                for (std::size_t m = 0; m < 3; ++m) hits[m] += row[i][m] ? 1 : 0;
                ++drawn;
            }
        }
        for (std::size_t m = 0; m < 3; ++m) draws[m].push_back(static_cast<double>(hits[m]) / static_cast<double>(drawn));
    }
    for (std::size_t m = 0; m < 3; ++m) {
        const SuccessMode mode = kAllModes[m];
        ModeSummary s;
        s.mean = expected_subsample_rate(per_paper, k, mode, quality_filter);
        s.ci = stats::summarize_draws(std::move(draws[m]), seed);
        result.modes[mode] = s;
    }
    return result;
}

}  // namespace fbeval
