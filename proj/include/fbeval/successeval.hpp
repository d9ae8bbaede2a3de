#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fbeval/core.hpp"
#include "fbeval/judgeclient.hpp"
#include "fbeval/stats.hpp"

namespace fbeval {

struct QualityScores {
    int accuracy = 1;
    int prioritisation = 1;
    int constructive_tone = 1;
    int paper_specific_grounding = 1;
    int actionability = 1;
    std::map<std::string, std::string> justifications;

    bool operator==(const QualityScores&) const = default;
};

void to_json(json& j, const QualityScores& q);
// Throws JudgeFormatError for a missing dimension or a score outside 1..5.
void from_json(const json& j, QualityScores& q);

// Minimums for the four filtering dimensions. Actionability is scored but
// never filters.
struct QualityThresholds {
    double accuracy = 4.37;
    double prioritisation = 4.44;
    double constructive_tone = 4.62;
    double paper_specific_grounding = 4.36;

    void validate() const;  // each in [1, 5]
};

void to_json(json& j, const QualityThresholds& t);
void from_json(const json& j, QualityThresholds& t);

struct QualityPromptOptions {
    std::string venue = "ICLR";
    std::size_t excerpt_chars = 16000;
};

QualityScores score_quality(JudgeClient& judge, const FeedbackUnit& unit, const PaperRecord& paper,
                            const QualityPromptOptions& options = {});

bool passes_quality(const QualityScores& scores, const QualityThresholds& thresholds);

struct PredictedResponse {
    std::string unit_id;
    Validity validity = Validity::unclear;
    AuthorAction action = AuthorAction::unclear_or_no_response;
    std::optional<std::string> response_text;
};

PredictedResponse predict_response(JudgeClient& predictor, const FeedbackUnit& unit, const PaperRecord& paper,
                                   std::size_t excerpt_chars = 16000);

enum class SuccessMode { combined, validity_only, action_only };
inline constexpr SuccessMode kAllModes[] = {SuccessMode::combined, SuccessMode::validity_only,
                                            SuccessMode::action_only};
std::string_view to_string(SuccessMode m);

struct UnitAssessment {
    std::string unit_id;
    bool passes_quality = false;
    Validity validity = Validity::unclear;
    AuthorAction action = AuthorAction::unclear_or_no_response;
};

// Units failing the quality filter count as failures in every mode unless
// the filter is switched off.
bool unit_success(const UnitAssessment& unit, SuccessMode mode, bool quality_filter = true);
double success_rate(const std::vector<UnitAssessment>& units, SuccessMode mode, bool quality_filter = true);

struct ModeSummary {
    double mean = 0.0;  // exact expectation of the subsampled rate
    stats::CIReport ci;  // percentile interval over the bootstrap draws
};

struct SuccessEvalResult {
    std::map<SuccessMode, ModeSummary> modes;
    std::size_t papers = 0;
    std::size_t units = 0;
};

// Expected pooled rate when each paper contributes a uniform size-min(k, n)
// subset without replacement.
double expected_subsample_rate(const std::vector<std::vector<UnitAssessment>>& per_paper, std::size_t k,
                               SuccessMode mode, bool quality_filter = true);

SuccessEvalResult bootstrap_eval(const std::vector<std::vector<UnitAssessment>>& per_paper, std::size_t k,
                                 std::size_t iterations, std::uint64_t seed, bool quality_filter = true);

}  // namespace fbeval
