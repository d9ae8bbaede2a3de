#include "fbeval/parse.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "fbeval/error.hpp"
#include "fbeval/parallel.hpp"
#include "fbeval/stats.hpp"

namespace fbeval {

std::string format_conversation(const ReviewThread& thread) {
    std::string out;
    for (const auto& turn : thread.turns) {
        if (!out.empty()) out += "\n\n";
        out += turn.speaker == Speaker::reviewer ? "Reviewer: " : "Author: ";
        out += turn.text;
    }
    return out;
}

namespace {

template <typename Fn>
auto map_label(const std::string& label, const char* what, Fn&& parse) {
    try {
        return parse(label);
    } catch (const InvalidArgument&) {
        throw JudgeFormatError(std::string("unknown ") + what + " label '" + label + "'", label);
    }
}

}  // namespace

Validity validity_from_judge(const std::string& label) {
    if (label == "agreed_by_authors") return Validity::agreed;
    if (label == "rebutted_by_authors") return Validity::rebutted;
    return map_label(label, "validity", [](const std::string& s) { return parse_validity(s); });
}

AuthorAction action_from_judge(const std::string& label) {
    return map_label(label, "author action", [](const std::string& s) { return parse_action(s); });
}

std::vector<FeedbackUnit> units_from_parse_output(const json& parsed, const std::string& paper_id,
                                                  const std::string& reviewer_id) {
    std::vector<FeedbackUnit> out;
    std::set<std::string> ids;
    for (const auto& item : parsed.at("feedback_units")) {
        FeedbackUnit u;
        u.paper_id = paper_id;
        u.reviewer_id = reviewer_id;
        u.source = Source::human;
        u.text = item.at("feedback_text").get<std::string>();
        if (normalize_text(u.text).empty()) throw JudgeFormatError("parse output has an empty feedback_text", parsed.dump());
        if (auto it = item.find("author_response_text"); it != item.end() && it->is_string()) {
            u.author_response_text = it->get<std::string>();
        }
        u.validity = validity_from_judge(item.at("validity").get<std::string>());
        u.action = action_from_judge(item.at("author_action").get<std::string>());
        for (const auto& a : item.value("aspects", json::array())) {
            u.aspects.insert(map_label(a.get<std::string>(), "aspect",
                                       [](const std::string& s) { return aspect_from_label(s); }));
        }
        const json dims = item.value("dimensions", json::object());
        for (FeedbackDimension d : {FeedbackDimension::feed_up, FeedbackDimension::feed_back,
                                    FeedbackDimension::feed_forward}) {
            auto it = dims.find(std::string(to_string(d)));
            if (it != dims.end() && it->is_string() && !normalize_text(it->get<std::string>()).empty()) {
                u.dimensions.insert(d);
            }
        }
        u.id = make_unit_id(paper_id, reviewer_id, u.text);
        if (!ids.insert(u.id).second) continue;  // verbatim repeat within a thread
        out.push_back(std::move(u));
    }
    return out;
}

ParseResult parse_thread(JudgeClient& judge, const PaperRecord& record, const ReviewThread& thread) {
    if (thread.turns.empty()) throw InvalidArgument("thread of reviewer " + thread.reviewer_id + " has no turns");
    const auto& tmpl = PromptRegistry::builtin().get("parse_thread");
    const JudgeResponse response = judge.complete(tmpl, {{"conversation_text", format_conversation(thread)}});
    ParseResult result;
    result.paper_id = record.paper_id;
    result.reviewer_id = thread.reviewer_id;
    result.cache_hit = response.cache_hit;
    result.prompt_version = response.prompt_version;
    result.skipped_positive = response.parsed.value("skipped_positive_count", std::size_t{0});
    try {
        result.units = units_from_parse_output(response.parsed, record.paper_id, thread.reviewer_id);
    } catch (const JudgeFormatError& e) {
        throw JudgeFormatError(e.what(), response.raw_text);
    }
    return result;
}

ParseSummary parse_papers(JudgeClient& judge, std::vector<PaperRecord*> papers, std::size_t workers,
                          std::ostream* audit) {
    std::sort(papers.begin(), papers.end(),
              [](const PaperRecord* a, const PaperRecord* b) { return a->paper_id < b->paper_id; });
    std::vector<std::vector<ParseResult>> results(papers.size());
    parallel_for(papers.size(), workers, [&](std::size_t i) {
        const PaperRecord& paper = *papers[i];
        try {
            for (const auto& thread : paper.threads) results[i].push_back(parse_thread(judge, paper, thread));
        } catch (...) {
            rethrow_with_context("parse: paper " + paper.paper_id);
        }
    });

    ParseSummary summary;
    for (std::size_t i = 0; i < papers.size(); ++i) {
        PaperRecord& paper = *papers[i];
        std::vector<FeedbackUnit> units;
        for (const auto& u : paper.units) {
            if (u.source != Source::human) units.push_back(u);
        }
        std::set<std::string> ids;
        for (const auto& r : results[i]) {
            ++summary.threads;
            summary.skipped_positive += r.skipped_positive;
            summary.cache_hits += r.cache_hit ? 1 : 0;
            for (const auto& u : r.units) {
                if (ids.insert(u.id).second) units.push_back(u);
            }
            if (audit) {
                *audit << json{{"module", "parse"},
                               {"paper_id", r.paper_id},
                               {"reviewer_id", r.reviewer_id},
                               {"prompt_version", r.prompt_version},
                               {"cache_hit", r.cache_hit},
                               {"units", r.units.size()},
                               {"skipped_positive", r.skipped_positive}}
                                  .dump()
                       << '\n';
            }
        }
        summary.units += ids.size();
        paper.units = std::move(units);
        ++summary.papers;
    }
    return summary;
}

namespace {

template <typename T>
std::optional<AgreementRow> row_from_pairs(const std::string& label, const std::string& comparison,
                                           const std::vector<std::pair<T, T>>& pairs, std::size_t k) {
    if (pairs.empty()) return std::nullopt;
    std::vector<int> a, b;
    for (const auto& [x, y] : pairs) {
        a.push_back(static_cast<int>(x));
        b.push_back(static_cast<int>(y));
    }
    const auto kappa = stats::cohen_kappa(stats::agreement_table(a, b, k));
    AgreementRow row;
    row.label = label;
    row.comparison = comparison;
    row.observed = kappa.observed;
    row.pabak = stats::pabak(kappa.observed);
    row.cohen_kappa = kappa.kappa;
    row.kappa_degenerate = kappa.degenerate;
    row.n = pairs.size();
    return row;
}

}  // namespace

std::vector<AgreementRow> agreement_report(const std::vector<AnnotationRecord>& annotations,
                                           const std::vector<FeedbackUnit>& reference) {
    std::map<std::string, std::vector<const AnnotationRecord*>> by_unit;
    for (const auto& a : annotations) by_unit[a.unit_id].push_back(&a);
    std::map<std::string, const FeedbackUnit*> ref;
    for (const auto& u : reference) ref[u.id] = &u;

    std::vector<std::pair<Validity, Validity>> v_inter, v_judge;
    std::vector<std::pair<AuthorAction, AuthorAction>> a_inter, a_judge;
    for (auto& [unit_id, list] : by_unit) {
        std::sort(list.begin(), list.end(),
                  [](const AnnotationRecord* x, const AnnotationRecord* y) { return x->annotator_id < y->annotator_id; });
        for (std::size_t i = 0; i < list.size(); ++i) {
            for (std::size_t j = i + 1; j < list.size(); ++j) {
                if (list[i]->validity && list[j]->validity) v_inter.emplace_back(*list[i]->validity, *list[j]->validity);
                if (list[i]->action && list[j]->action) a_inter.emplace_back(*list[i]->action, *list[j]->action);
            }
        }
        auto r = ref.find(unit_id);
        if (r == ref.end()) continue;
        for (const auto* a : list) {
            if (a->validity && r->second->validity) v_judge.emplace_back(*r->second->validity, *a->validity);
            if (a->action && r->second->action) a_judge.emplace_back(*r->second->action, *a->action);
        }
    }

    constexpr std::size_t kValidity = std::size(kAllValidity);
    constexpr std::size_t kActions = std::size(kAllActions);
    std::vector<AgreementRow> rows;
    for (auto row : {row_from_pairs("validity", "inter_annotator", v_inter, kValidity),
                     row_from_pairs("validity", "judge_vs_human", v_judge, kValidity),
                     row_from_pairs("action", "inter_annotator", a_inter, kActions),
                     row_from_pairs("action", "judge_vs_human", a_judge, kActions)}) {
        if (row) rows.push_back(*row);
    }
    if (rows.empty()) throw InvalidArgument("agreement report has no comparable labels (n = 0)");
    return rows;
}

}  // namespace fbeval
