#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace fbeval {

using json = nlohmann::json;

enum class Validity { agreed, rebutted, unclear };

enum class AuthorAction {
    will_revise,
    defer_future_work,
    point_to_existing_content,
    no_revision_accept,
    no_revision_contest,
    no_action_other,
    unclear_or_no_response,
};

enum class Source { human, model };

enum class FeedbackDimension { feed_up, feed_back, feed_forward };

enum class AspectTag {
    add_experiments_more_datasets,
    add_ablations,
    algorithm_efficiency,
    theoretical_soundness,
    implications,
    ethical_aspects,
    missing_citations,
    novelty,
    clarity_presentation,
    comparison_previous_studies,
    reproducibility,
};

enum class Decision { accepted, rejected, unknown };

enum class Speaker { reviewer, author };

inline constexpr Validity kAllValidity[] = {Validity::agreed, Validity::rebutted, Validity::unclear};

inline constexpr AuthorAction kAllActions[] = {
    AuthorAction::will_revise,         AuthorAction::defer_future_work,
    AuthorAction::point_to_existing_content, AuthorAction::no_revision_accept,
    AuthorAction::no_revision_contest, AuthorAction::no_action_other,
    AuthorAction::unclear_or_no_response,
};

inline constexpr AspectTag kAllAspects[] = {
    AspectTag::add_experiments_more_datasets, AspectTag::add_ablations,
    AspectTag::algorithm_efficiency,          AspectTag::theoretical_soundness,
    AspectTag::implications,                  AspectTag::ethical_aspects,
    AspectTag::missing_citations,             AspectTag::novelty,
    AspectTag::clarity_presentation,          AspectTag::comparison_previous_studies,
    AspectTag::reproducibility,
};

// Lowercase snake_case names; these are the wire format.
std::string_view to_string(Validity v);
std::string_view to_string(AuthorAction a);
std::string_view to_string(Source s);
std::string_view to_string(FeedbackDimension d);
std::string_view to_string(AspectTag a);
std::string_view to_string(Decision d);
std::string_view to_string(Speaker s);

// Human-readable aspect label, as used in report tables.
std::string_view display_name(AspectTag a);

// Strict parsers: unknown names throw InvalidArgument.
Validity parse_validity(std::string_view s);
AuthorAction parse_action(std::string_view s);
Source parse_source(std::string_view s);
FeedbackDimension parse_dimension(std::string_view s);
AspectTag parse_aspect(std::string_view s);
Decision parse_decision(std::string_view s);
Speaker parse_speaker(std::string_view s);

// Accepts the snake_case name or the display name in any case/punctuation,
// e.g. "Clarity and Presentation". Unknown labels throw InvalidArgument.
AspectTag aspect_from_label(std::string_view label);

bool is_actionable(AuthorAction action);

// 1 iff the author agreed with the feedback and committed to act on it.
bool success_indicator(Validity validity, AuthorAction action);

struct Turn {
    Speaker speaker = Speaker::reviewer;
    std::string text;
    std::optional<std::string> timestamp;

    bool operator==(const Turn&) const = default;
};

struct ReviewThread {
    std::string reviewer_id;
    std::vector<Turn> turns;

    bool operator==(const ReviewThread&) const = default;
};

struct FeedbackUnit {
    std::string id;
    std::string paper_id;
    std::string reviewer_id;
    Source source = Source::human;
    std::string text;
    std::optional<std::string> author_response_text;
    std::optional<Validity> validity;
    std::optional<AuthorAction> action;
    std::set<AspectTag> aspects;
    std::set<FeedbackDimension> dimensions;

    bool labeled() const { return validity.has_value() && action.has_value(); }
    // False for unlabeled units.
    bool successful() const { return labeled() && success_indicator(*validity, *action); }

    bool operator==(const FeedbackUnit&) const = default;
};

struct PaperRecord {
    std::string paper_id;
    std::string title;
    std::string abstract;
    std::string body_markdown;
    int venue_year = 0;
    Decision decision = Decision::unknown;
    std::vector<ReviewThread> threads;
    std::vector<FeedbackUnit> units;

    bool operator==(const PaperRecord&) const = default;
};

// Lowercased, whitespace-collapsed, trimmed text used for identity.
std::string normalize_text(std::string_view text);

// Content-derived id: stable across runs for the same (paper, reviewer, text).
std::string make_unit_id(std::string_view paper_id, std::string_view reviewer_id,
                         std::string_view text);

// Checks the FeedbackUnit invariants; throws InvalidArgument.
void validate(const FeedbackUnit& unit);
// Checks PaperRecord invariants (units only reference known reviewers).
void validate(const PaperRecord& record);

void to_json(json& j, const Turn& t);
void from_json(const json& j, Turn& t);
void to_json(json& j, const ReviewThread& t);
void from_json(const json& j, ReviewThread& t);
void to_json(json& j, const FeedbackUnit& u);
void from_json(const json& j, FeedbackUnit& u);
void to_json(json& j, const PaperRecord& p);
void from_json(const json& j, PaperRecord& p);

}  // namespace fbeval
