#include "fbeval/core.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <utility>

#include "fbeval/error.hpp"
#include "fbeval/hash.hpp"

namespace fbeval {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_argument: return "invalid_argument";
        case ErrorKind::config: return "config";
        case ErrorKind::ingest: return "ingest";
        case ErrorKind::pipeline: return "pipeline";
        case ErrorKind::judge_transport: return "judge_transport";
        case ErrorKind::judge_format: return "judge_format";
    }
    return "unknown";
}

void rethrow_with_context(const std::string& context) {
    try {
        throw;
    } catch (const JudgeFormatError& e) {
        throw JudgeFormatError(context + ": " + e.what(), e.raw_text());
    } catch (const Error& e) {
        const std::string what = context + ": " + e.what();
        switch (e.kind()) {
            case ErrorKind::invalid_argument: throw InvalidArgument(what);
            case ErrorKind::config: throw ConfigError(what);
            case ErrorKind::ingest: throw IngestError(what);
            case ErrorKind::judge_transport: throw JudgeTransportError(what);
            default: throw PipelineError(what);
        }
    } catch (const std::exception& e) {
        throw PipelineError(context + ": " + e.what());
    }
}

namespace {

template <typename E, std::size_t N>
using NameTable = std::array<std::pair<E, std::string_view>, N>;

constexpr NameTable<Validity, 3> kValidityNames{{
    {Validity::agreed, "agreed"},
    {Validity::rebutted, "rebutted"},
    {Validity::unclear, "unclear"},
}};

constexpr NameTable<AuthorAction, 7> kActionNames{{
    {AuthorAction::will_revise, "will_revise"},
    {AuthorAction::defer_future_work, "defer_future_work"},
    {AuthorAction::point_to_existing_content, "point_to_existing_content"},
    {AuthorAction::no_revision_accept, "no_revision_accept"},
    {AuthorAction::no_revision_contest, "no_revision_contest"},
    {AuthorAction::no_action_other, "no_action_other"},
    {AuthorAction::unclear_or_no_response, "unclear_or_no_response"},
}};

constexpr NameTable<Source, 2> kSourceNames{{
    {Source::human, "human"},
    {Source::model, "model"},
}};

constexpr NameTable<FeedbackDimension, 3> kDimensionNames{{
    {FeedbackDimension::feed_up, "feed_up"},
    {FeedbackDimension::feed_back, "feed_back"},
    {FeedbackDimension::feed_forward, "feed_forward"},
}};

constexpr NameTable<AspectTag, 11> kAspectNames{{
    {AspectTag::add_experiments_more_datasets, "add_experiments_more_datasets"},
    {AspectTag::add_ablations, "add_ablations"},
    {AspectTag::algorithm_efficiency, "algorithm_efficiency"},
    {AspectTag::theoretical_soundness, "theoretical_soundness"},
    {AspectTag::implications, "implications"},
    {AspectTag::ethical_aspects, "ethical_aspects"},
    {AspectTag::missing_citations, "missing_citations"},
    {AspectTag::novelty, "novelty"},
    {AspectTag::clarity_presentation, "clarity_presentation"},
    {AspectTag::comparison_previous_studies, "comparison_previous_studies"},
    {AspectTag::reproducibility, "reproducibility"},
}};

constexpr NameTable<AspectTag, 11> kAspectDisplay{{
    {AspectTag::add_experiments_more_datasets, "Add Experiments on More Datasets"},
    {AspectTag::add_ablations, "Add Ablations Experiments"},
    {AspectTag::algorithm_efficiency, "Algorithm Efficiency"},
    {AspectTag::theoretical_soundness, "Theoretical Soundness"},
    {AspectTag::implications, "Implications of the Research"},
    {AspectTag::ethical_aspects, "Ethical Aspects"},
    {AspectTag::missing_citations, "Missing Citations"},
    {AspectTag::novelty, "Novelty"},
    {AspectTag::clarity_presentation, "Clarity and Presentation"},
    {AspectTag::comparison_previous_studies, "Comparison to Previous Studies"},
    {AspectTag::reproducibility, "Reproducibility"},
}};

constexpr NameTable<Decision, 3> kDecisionNames{{
    {Decision::accepted, "accepted"},
    {Decision::rejected, "rejected"},
    {Decision::unknown, "unknown"},
}};

constexpr NameTable<Speaker, 2> kSpeakerNames{{
    {Speaker::reviewer, "reviewer"},
    {Speaker::author, "author"},
}};

template <typename E, std::size_t N>
std::string_view name_of(const NameTable<E, N>& table, E value) {
    for (const auto& [v, name] : table) {
        if (v == value) return name;
    }
    return "invalid";
}

template <typename E, std::size_t N>
E parse_name(const NameTable<E, N>& table, std::string_view s, const char* type) {
    for (const auto& [v, name] : table) {
        if (name == s) return v;
    }
    throw InvalidArgument(std::string("unknown ") + type + " value '" + std::string(s) + "'");
}

// "Clarity and Presentation" -> "clarity_and_presentation"
std::string slug(std::string_view s) {
    std::string out;
    bool pending_sep = false;
    for (char c : s) {
        auto uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc)) {
            if (pending_sep && !out.empty()) out.push_back('_');
            pending_sep = false;
            out.push_back(static_cast<char>(std::tolower(uc)));
        } else {
            pending_sep = true;
        }
    }
    return out;
}

}  // namespace

std::string_view to_string(Validity v) { return name_of(kValidityNames, v); }
std::string_view to_string(AuthorAction a) { return name_of(kActionNames, a); }
std::string_view to_string(Source s) { return name_of(kSourceNames, s); }
std::string_view to_string(FeedbackDimension d) { return name_of(kDimensionNames, d); }
std::string_view to_string(AspectTag a) { return name_of(kAspectNames, a); }
std::string_view to_string(Decision d) { return name_of(kDecisionNames, d); }
std::string_view to_string(Speaker s) { return name_of(kSpeakerNames, s); }
std::string_view display_name(AspectTag a) { return name_of(kAspectDisplay, a); }

Validity parse_validity(std::string_view s) { return parse_name(kValidityNames, s, "validity"); }
AuthorAction parse_action(std::string_view s) { return parse_name(kActionNames, s, "author action"); }
Source parse_source(std::string_view s) { return parse_name(kSourceNames, s, "source"); }
FeedbackDimension parse_dimension(std::string_view s) {
    return parse_name(kDimensionNames, s, "feedback dimension");
}
AspectTag parse_aspect(std::string_view s) { return parse_name(kAspectNames, s, "aspect"); }
Decision parse_decision(std::string_view s) { return parse_name(kDecisionNames, s, "decision"); }
Speaker parse_speaker(std::string_view s) { return parse_name(kSpeakerNames, s, "speaker"); }

AspectTag aspect_from_label(std::string_view label) {
    const std::string key = slug(label);
    for (std::size_t i = 0; i < kAspectNames.size(); ++i) {
        if (key == kAspectNames[i].second || key == slug(kAspectDisplay[i].second)) {
            return kAspectNames[i].first;
        }
    }
    throw InvalidArgument("unknown aspect label '" + std::string(label) + "'");
}

bool is_actionable(AuthorAction action) {
    return action == AuthorAction::will_revise || action == AuthorAction::defer_future_work;
}

bool success_indicator(Validity validity, AuthorAction action) {
    return validity == Validity::agreed && is_actionable(action);
}

std::string normalize_text(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool in_space = false;
    for (char c : text) {
        auto uc = static_cast<unsigned char>(c);
        if (std::isspace(uc)) {
            in_space = !out.empty();
            continue;
        }
        if (in_space) out.push_back(' ');
        in_space = false;
        out.push_back(static_cast<char>(std::tolower(uc)));
    }
    return out;
}

std::string make_unit_id(std::string_view paper_id, std::string_view reviewer_id,
                         std::string_view text) {
    std::string material;
    material.append(paper_id).push_back('\x1f');
    material.append(reviewer_id).push_back('\x1f');
    material.append(normalize_text(text));
    return "fu_" + sha256_hex(material).substr(0, 20);
}

void validate(const FeedbackUnit& unit) {
    if (unit.id.empty()) throw InvalidArgument("feedback unit has empty id");
    if (normalize_text(unit.text).empty()) {
        throw InvalidArgument("feedback unit " + unit.id + " has empty text");
    }
    if (unit.source == Source::human && unit.reviewer_id.empty()) {
        throw InvalidArgument("human feedback unit " + unit.id + " has no reviewer_id");
    }
    if (unit.validity.has_value() != unit.action.has_value()) {
        throw InvalidArgument("feedback unit " + unit.id + " is partially labeled");
    }
}

void validate(const PaperRecord& record) {
    if (record.paper_id.empty()) throw InvalidArgument("paper record has empty paper_id");
    std::set<std::string> reviewers;
    for (const auto& thread : record.threads) {
        if (thread.turns.empty()) {
            throw InvalidArgument("paper " + record.paper_id + ": thread of reviewer " +
                                  thread.reviewer_id + " has no turns");
        }
        reviewers.insert(thread.reviewer_id);
    }
    for (const auto& unit : record.units) {
        validate(unit);
        if (unit.paper_id != record.paper_id) {
            throw InvalidArgument("unit " + unit.id + " belongs to paper " + unit.paper_id +
                                  ", found in " + record.paper_id);
        }
        if (unit.source == Source::human && !reviewers.contains(unit.reviewer_id)) {
            throw InvalidArgument("paper " + record.paper_id + ": unit " + unit.id +
                                  " references unknown reviewer " + unit.reviewer_id);
        }
    }
}

namespace {

template <typename E>
json enum_set_to_json(const std::set<E>& values) {
    std::vector<std::string> names;
    for (E v : values) names.emplace_back(to_string(v));
    std::sort(names.begin(), names.end());
    return names;
}

}  // namespace

void to_json(json& j, const Turn& t) {
    j = json{{"speaker", to_string(t.speaker)}, {"text", t.text}};
    if (t.timestamp) j["timestamp"] = *t.timestamp;
}

void from_json(const json& j, Turn& t) {
    t.speaker = parse_speaker(j.at("speaker").get<std::string>());
    t.text = j.at("text").get<std::string>();
    t.timestamp.reset();
    if (auto it = j.find("timestamp"); it != j.end() && !it->is_null()) t.timestamp = it->get<std::string>();
}

void to_json(json& j, const ReviewThread& t) {
    j = json{{"reviewer_id", t.reviewer_id}, {"turns", t.turns}};
}

void from_json(const json& j, ReviewThread& t) {
    t.reviewer_id = j.at("reviewer_id").get<std::string>();
    t.turns = j.at("turns").get<std::vector<Turn>>();
}

void to_json(json& j, const FeedbackUnit& u) {
    j = json{{"id", u.id},
             {"paper_id", u.paper_id},
             {"reviewer_id", u.reviewer_id},
             {"source", to_string(u.source)},
             {"text", u.text},
             {"aspects", enum_set_to_json(u.aspects)},
             {"dimensions", enum_set_to_json(u.dimensions)}};
    if (u.author_response_text) j["author_response_text"] = *u.author_response_text;
    if (u.validity) j["validity"] = to_string(*u.validity);
    if (u.action) j["action"] = to_string(*u.action);
}

void from_json(const json& j, FeedbackUnit& u) {
    u = FeedbackUnit{};
    u.id = j.at("id").get<std::string>();
    u.paper_id = j.at("paper_id").get<std::string>();
    u.reviewer_id = j.value("reviewer_id", std::string{});
    u.source = parse_source(j.at("source").get<std::string>());
    u.text = j.at("text").get<std::string>();
    if (auto it = j.find("author_response_text"); it != j.end() && !it->is_null()) {
        u.author_response_text = it->get<std::string>();
    }
    if (auto it = j.find("validity"); it != j.end() && !it->is_null()) {
        u.validity = parse_validity(it->get<std::string>());
    }
    if (auto it = j.find("action"); it != j.end() && !it->is_null()) {
        u.action = parse_action(it->get<std::string>());
    }
    if (auto it = j.find("aspects"); it != j.end()) {
        for (const auto& a : *it) u.aspects.insert(parse_aspect(a.get<std::string>()));
    }
    if (auto it = j.find("dimensions"); it != j.end()) {
        for (const auto& d : *it) u.dimensions.insert(parse_dimension(d.get<std::string>()));
    }
}

void to_json(json& j, const PaperRecord& p) {
    j = json{{"paper_id", p.paper_id},         {"title", p.title},
             {"abstract", p.abstract},         {"body_markdown", p.body_markdown},
             {"venue_year", p.venue_year},     {"decision", to_string(p.decision)},
             {"threads", p.threads},           {"units", p.units}};
}

void from_json(const json& j, PaperRecord& p) {
    p = PaperRecord{};
    p.paper_id = j.at("paper_id").get<std::string>();
    p.title = j.value("title", std::string{});
    p.abstract = j.value("abstract", std::string{});
    p.body_markdown = j.value("body_markdown", std::string{});
    p.venue_year = j.value("venue_year", 0);
    p.decision = parse_decision(j.value("decision", std::string{"unknown"}));
    if (auto it = j.find("threads"); it != j.end()) p.threads = it->get<std::vector<ReviewThread>>();
    if (auto it = j.find("units"); it != j.end()) p.units = it->get<std::vector<FeedbackUnit>>();
}

}  // namespace fbeval
