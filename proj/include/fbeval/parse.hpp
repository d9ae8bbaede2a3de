#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "fbeval/core.hpp"
#include "fbeval/ingest.hpp"
#include "fbeval/judgeclient.hpp"

namespace fbeval {

struct ParseResult {
    std::string paper_id;
    std::string reviewer_id;
    std::vector<FeedbackUnit> units;
    std::size_t skipped_positive = 0;
    bool cache_hit = false;
    std::string prompt_version;
};

// "Reviewer:" / "Author:" prefixed turns separated by blank lines.
std::string format_conversation(const ReviewThread& thread);

// Judge vocabulary ("agreed_by_authors", ...) or the core names. Anything
// else raises JudgeFormatError.
Validity validity_from_judge(const std::string& label);
AuthorAction action_from_judge(const std::string& label);

// Maps the judge's parse output onto labeled units. Any label outside the
// closed enumerations raises JudgeFormatError.
std::vector<FeedbackUnit> units_from_parse_output(const json& parsed, const std::string& paper_id,
                                                  const std::string& reviewer_id);

// One judge call for the whole thread.
ParseResult parse_thread(JudgeClient& judge, const PaperRecord& record, const ReviewThread& thread);

struct ParseSummary {
    std::size_t papers = 0;
    std::size_t threads = 0;
    std::size_t units = 0;
    std::size_t skipped_positive = 0;
    std::size_t cache_hits = 0;
};

// Parses every thread of every paper, replacing each paper's human units.
// Writes one audit line per judge call, in paper then thread order.
ParseSummary parse_papers(JudgeClient& judge, std::vector<PaperRecord*> papers, std::size_t workers,
                          std::ostream* audit = nullptr);

struct AgreementRow {
    std::string label;       // "validity" or "action"
    std::string comparison;  // "inter_annotator" or "judge_vs_human"
    double observed = 0.0;
    double pabak = 0.0;
    double cohen_kappa = 0.0;
    bool kappa_degenerate = false;
    std::size_t n = 0;
};

// Inter-annotator rows pool every unordered annotator pair on each unit;
// judge rows compare each human annotation with the reference unit's label.
// Rows with no data are omitted; no rows at all is an error.
std::vector<AgreementRow> agreement_report(const std::vector<AnnotationRecord>& annotations,
                                           const std::vector<FeedbackUnit>& reference);

}  // namespace fbeval
