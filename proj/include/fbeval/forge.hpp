#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fbeval/core.hpp"
#include "fbeval/judgeclient.hpp"

namespace fbeval {

enum class CorruptionDimension { generic, vague, inaccurate, nonessential, unsupportive };

inline constexpr CorruptionDimension kAllCorruptions[] = {
    CorruptionDimension::generic, CorruptionDimension::vague, CorruptionDimension::inaccurate,
    CorruptionDimension::nonessential, CorruptionDimension::unsupportive};

std::string_view to_string(CorruptionDimension d);
CorruptionDimension parse_corruption(std::string_view s);

struct Verification {
    CorruptionDimension predicted = CorruptionDimension::generic;
    int target_degradation = 1;       // 1..3
    int collateral_preservation = 1;  // 1..3
    std::string reasoning;

    bool operator==(const Verification&) const = default;
};

struct CorruptionVariant {
    std::string source_unit_id;
    std::string paper_id;
    CorruptionDimension dimension = CorruptionDimension::generic;
    std::string text;
    std::optional<Verification> verification;

    bool operator==(const CorruptionVariant&) const = default;
};

void to_json(json& j, const CorruptionVariant& v);
void from_json(const json& j, CorruptionVariant& v);

// One rewrite per dimension. The unit must be successful.
std::vector<CorruptionVariant> corrupt(JudgeClient& judge, const FeedbackUnit& unit, const PaperRecord& paper);

// Keep rule: predicted dimension is the target and both scores are >= 2.
bool keep_variant(const CorruptionVariant& variant);
std::vector<CorruptionVariant> filter_variants(const std::vector<CorruptionVariant>& variants);

struct DimensionStats {
    std::size_t judged = 0;
    std::size_t correct = 0;
    std::size_t kept = 0;
    double degradation_sum = 0.0;
    double preservation_sum = 0.0;

    double accuracy() const { return judged ? static_cast<double>(correct) / judged : 0.0; }
    double mean_degradation() const { return judged ? degradation_sum / judged : 0.0; }
    double mean_preservation() const { return judged ? preservation_sum / judged : 0.0; }
};

struct VerifyResult {
    std::vector<CorruptionVariant> judged;  // input order, verification filled
    std::vector<CorruptionVariant> kept;
    std::vector<std::size_t> presentation_order;  // judged[i] was shown at position order[i]
    std::map<CorruptionDimension, DimensionStats> stats;
};

void accumulate(std::map<CorruptionDimension, DimensionStats>& into, const std::vector<CorruptionVariant>& judged);

// Shows the variants in a seeded random order so the judge cannot infer the
// dimension from position, then applies the keep rule.
VerifyResult verify_and_filter(JudgeClient& judge, const FeedbackUnit& source, const PaperRecord& paper,
                               std::vector<CorruptionVariant> variants, std::uint64_t seed);

// Connected components of the graph with an edge wherever cosine > threshold.
// Components are listed by smallest member; members ascending.
std::vector<std::vector<std::size_t>> similarity_clusters(const std::vector<Vector>& vectors, double threshold);

// One seeded-random representative per cluster, in input order.
std::vector<FeedbackUnit> dedup_units(const std::vector<FeedbackUnit>& units, const std::vector<Vector>& vectors,
                                      double threshold, std::uint64_t seed);
std::vector<FeedbackUnit> dedup_units(const std::vector<FeedbackUnit>& units, Embedder& embedder,
                                      double threshold, std::uint64_t seed);

// Numbered list, one unit per item.
std::string format_feedback_list(const std::vector<std::string>& texts);

struct SftExample {
    std::string paper_id;
    std::string reviewer_id;
    std::vector<std::string> unit_ids;
    json messages;  // [{"role": "user", ...}, {"role": "assistant", ...}]
};

// One example per (paper, reviewer) with at least one successful unit; the
// target lists only that reviewer's successful units.
std::vector<SftExample> build_sft_examples(const std::vector<const PaperRecord*>& papers);

enum class PairKind { real_label, corruption };
std::string_view to_string(PairKind k);

enum class ChosenMode {
    literal,         // chosen set has at least `min_delta` more successes
    all_successful,  // chosen set additionally contains successful units only
};

struct PreferencePair {
    std::string paper_id;
    PairKind kind = PairKind::real_label;
    std::vector<std::string> chosen;
    std::vector<std::string> rejected;
    std::vector<std::string> chosen_ids;
    std::vector<std::string> rejected_ids;
    int chosen_success_count = 0;
    int rejected_success_count = 0;
    std::optional<CorruptionDimension> corruption;

    bool operator==(const PreferencePair&) const = default;
};

json to_json_line(const PreferencePair& pair, const std::string& prompt);

struct DpoOptions {
    std::size_t set_size = 5;
    int min_delta = 2;
    std::size_t pairs_per_paper = 1;
    ChosenMode mode = ChosenMode::literal;
    // 0 means one corruption pair per kept variant.
    std::size_t corruption_pairs_per_paper = 0;
};

bool satisfies_delta(int chosen_successes, int rejected_successes, int min_delta);

// Real-label pairs from one paper's deduplicated units. Each pair draws a
// qualifying (chosen, rejected) success-count combination uniformly, then the
// units themselves. Returns an empty list when no combination qualifies.
std::vector<PreferencePair> real_label_pairs(const std::string& paper_id, const std::vector<FeedbackUnit>& units,
                                             const DpoOptions& options, std::uint64_t seed);

// For each kept variant whose source is among `units`: chosen = source plus
// other successful units; rejected = the same set with the source swapped
// for the variant.
std::vector<PreferencePair> corruption_pairs(const std::string& paper_id, const std::vector<FeedbackUnit>& units,
                                             const std::vector<CorruptionVariant>& kept, const DpoOptions& options,
                                             std::uint64_t seed);

struct TrainingManifest {
    std::string kind;  // "sft" or "dpo"
    std::string dataset_path;
    std::size_t record_count = 0;
    json hyperparameters;
    std::string prompt_version;
    std::string config_hash;
};

void to_json(json& j, const TrainingManifest& m);

json default_hyperparameters(const std::string& kind);

}  // namespace fbeval
