#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fbeval/core.hpp"
#include "fbeval/judgeclient.hpp"
#include "fbeval/stats.hpp"

namespace fbeval {

enum class PairType { human_human, human_model };
std::string_view to_string(PairType t);
PairType parse_pair_type(std::string_view s);

struct MatchEdge {
    std::string left_unit_id;   // always a human unit
    std::string right_unit_id;  // human (different reviewer) or model unit
    PairType pair_type = PairType::human_human;
    double cosine = 0.0;
    std::optional<bool> judged;
    std::optional<std::string> explanation;

    bool operator==(const MatchEdge&) const = default;
};

void to_json(json& j, const MatchEdge& e);
void from_json(const json& j, MatchEdge& e);

// Cosine cut points splitting [-1, 1] into boundaries.size() + 1 strata;
// stratum i covers [boundaries[i-1], boundaries[i]).
struct StratumTable {
    std::vector<double> boundaries = {0.15, 0.25, 0.35, 0.45, 0.55, 0.65};

    std::size_t size() const { return boundaries.size() + 1; }
    std::size_t stratum_of(double cosine) const;
    double lower_bound(std::size_t stratum) const;  // -1 for the first stratum
    std::string label(std::size_t stratum) const;   // "<0.15", "0.15-0.25", ">=0.65"
    void validate() const;                          // strictly increasing, inside (-1, 1]
};

struct AnnotatedPair {
    double cosine = 0.0;
    bool match = false;
};

struct StratumRate {
    std::size_t annotated = 0;
    std::size_t matches = 0;
    std::optional<double> rate() const {
        if (annotated == 0) return std::nullopt;
        return static_cast<double>(matches) / static_cast<double>(annotated);
    }
};

std::vector<StratumRate> stratum_rates(const std::vector<AnnotatedPair>& pairs, const StratumTable& strata);

// Lower bound of the lowest stratum whose match rate reaches `cutoff`.
// Strata without annotations are skipped; every stratum above the chosen one
// must be annotated. Throws InvalidArgument("no usable threshold") otherwise.
double calibrate_from_rates(const std::vector<std::optional<double>>& rates, const StratumTable& strata,
                            double cutoff = 0.1);
double calibrate_threshold(const std::vector<AnnotatedPair>& pairs, const StratumTable& strata, double cutoff = 0.1);

// Unjudged candidate edges with cosine >= threshold. Human pairs are only
// formed across distinct reviewers, with left id < right id.
std::vector<MatchEdge> prefilter_human_pairs(const std::vector<FeedbackUnit>& units, const std::vector<Vector>& vectors,
                                             double threshold);
std::vector<MatchEdge> prefilter_model_pairs(const std::vector<FeedbackUnit>& human,
                                             const std::vector<Vector>& human_vectors,
                                             const std::vector<FeedbackUnit>& model,
                                             const std::vector<Vector>& model_vectors, double threshold);

// Reads a match verdict object, or an array of them (any "1" is a match).
bool parse_match_verdict(const json& parsed, std::string* explanation = nullptr);

MatchEdge judge_match(JudgeClient& judge, MatchEdge edge, const std::string& abstract, const std::string& left_text,
                      const std::string& right_text);

struct ConsensusOptions {
    // Also require the matched partner to be successful.
    bool require_partner_success = false;
};

struct ConsensusSet {
    std::string paper_id;
    std::set<std::string> members;
    // Members grouped by true edges among themselves, for cluster-level counts.
    std::vector<std::set<std::string>> clusters;
};

// Members: successful human units with at least one judged-true edge to a
// unit of a different reviewer.
ConsensusSet build_consensus(const PaperRecord& paper, const std::vector<MatchEdge>& human_edges,
                             const ConsensusOptions& options = {});

struct MatchCounts {
    std::size_t matched_model = 0;
    std::size_t model_total = 0;
    std::size_t matched_consensus = 0;
    std::size_t consensus_total = 0;

    MatchCounts& operator+=(const MatchCounts& o);
};

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

Prf prf_from_counts(const MatchCounts& c);

struct MatchScore {
    std::set<std::string> matched_model_units;
    std::set<std::string> matched_consensus_units;
    MatchCounts counts;
    Prf metrics;
};

// Edges to model units outside `model_unit_ids` are ignored, so the same edge
// list serves every subsample. With cluster_level, recall counts clusters.
MatchScore score_model(const ConsensusSet& consensus, const std::vector<std::string>& model_unit_ids,
                       const std::vector<MatchEdge>& model_edges, bool cluster_level = false);

struct StratumMetrics {
    std::string label;
    double weight = 0.0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Weighted average of every metric column. Weights must sum to 1 within
// `weight_tolerance`.
StratumMetrics distribution_weighted(const std::vector<StratumMetrics>& strata, double weight_tolerance = 1e-9);

struct JudgedPair {
    double cosine = 0.0;
    bool judged = false;
    bool human = false;
};

// Judge-vs-human metrics per retained stratum (lower bound >= threshold),
// weighted by each stratum's share of `population` cosines at or above the
// threshold.
std::vector<StratumMetrics> judge_validation(const std::vector<JudgedPair>& sample,
                                             const std::vector<double>& population, const StratumTable& strata,
                                             double threshold);

struct ModelUnitOutcome {
    std::string unit_id;
    bool matched = false;
    bool successful = false;
    std::set<AspectTag> aspects;
};

struct AspectCounts {
    std::size_t novel = 0;
    std::size_t aligned = 0;
};

struct Decomposition {
    std::size_t total = 0;
    std::size_t aligned = 0;
    std::size_t novel = 0;
    // Keyed by aspect slug, plus "no_aspect" for units without a tag.
    std::map<std::string, AspectCounts> per_aspect;

    double aligned_rate() const;
    double novel_rate() const;
    double rate(const std::string& aspect, bool aligned) const;
};

inline constexpr const char* kNoAspect = "no_aspect";

// aligned = matched and successful; novel = unmatched and successful. Rates
// are over all generated units.
Decomposition decompose_novel_aligned(const std::vector<ModelUnitOutcome>& units);

// (candidate - baseline) / baseline; nullopt when the baseline rate is 0.
std::optional<double> relative_improvement(double candidate, double baseline);

enum class Averaging { micro, macro };

struct PaperEval {
    std::string paper_id;
    ConsensusSet consensus;
    std::vector<std::string> model_unit_ids;
    std::vector<MatchEdge> model_edges;
};

struct ConsensusEvalResult {
    stats::CIReport precision;
    stats::CIReport recall;
    stats::CIReport f1;
    std::size_t papers_used = 0;
    std::size_t papers_excluded = 0;  // empty consensus
};

// Each iteration draws up to k model units per paper without replacement and
// aggregates per-paper counts (micro) or per-paper metrics (macro).
ConsensusEvalResult bootstrap_consensus(const std::vector<PaperEval>& papers, std::size_t k, std::size_t iterations,
                                        std::uint64_t seed, Averaging averaging = Averaging::micro,
                                        bool cluster_level = false);

}  // namespace fbeval
