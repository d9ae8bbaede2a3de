#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fbeval/core.hpp"

namespace fbeval {

// On-disk layout:
//   <root>/manifest.json   {"format_version": 1, "splits": {"<split>": ["<paper_id>", ...]}}
//   <root>/<split>.jsonl   one PaperRecord per line, in manifest order
struct DatasetStore {
    static constexpr int kFormatVersion = 1;

    std::filesystem::path root;
    int format_version = kFormatVersion;
    std::map<std::string, std::vector<std::string>> manifest;
    std::map<std::string, PaperRecord> records;

    const PaperRecord& get(const std::string& paper_id) const;  // throws IngestError
    std::vector<const PaperRecord*> split(const std::string& name) const;
    std::vector<const PaperRecord*> all() const;  // sorted by paper_id

    struct Counts {
        std::size_t papers = 0;
        std::size_t accepted = 0;
        std::size_t rejected = 0;
        std::size_t unknown = 0;
    };
    // Per split, plus an "all" row.
    std::map<std::string, Counts> counts() const;
};

DatasetStore load_corpus(const std::filesystem::path& root);

// Writes manifest and split files in canonical form (sorted keys, one record
// per line, manifest order). Loading and saving again is byte-identical.
void save_corpus(const DatasetStore& store, const std::filesystem::path& root);

std::string canonical_record_line(const PaperRecord& record);

struct TestSplitPool {
    int first_year = 0;
    int last_year = 0;
    std::size_t size = 0;
};

struct TestSplitConfig {
    std::vector<TestSplitPool> pools = {{2020, 2025, 600}, {2026, 2026, 598}};
};

// Decision-balanced sample per pool: floor(size/2) accepted, the rest
// rejected, each drawn by seeded shuffle of the sorted candidate ids.
std::vector<std::string> build_test_split(const DatasetStore& store, const TestSplitConfig& config,
                                          std::uint64_t seed);

struct AnnotationRecord {
    std::string unit_id;  // unit id, or "<left>|<right>" for pair annotations
    std::string annotator_id;
    std::optional<Validity> validity;
    std::optional<AuthorAction> action;
    std::optional<bool> match_label;
    std::map<std::string, int> likert;

    bool operator==(const AnnotationRecord&) const = default;
};

void to_json(json& j, const AnnotationRecord& a);
void from_json(const json& j, AnnotationRecord& a);

// JSONL, one AnnotationRecord per line. When `roster` is given, records from
// annotators outside it are rejected.
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path,
                                               const std::set<std::string>* roster = nullptr);

// Majority match label per pair id. Ties resolve to false.
std::map<std::string, bool> majority_match(const std::vector<AnnotationRecord>& records);

// Imports a pre-exported subset of the OpenReview note schema:
//   {"papers": [{"forum", "title", "abstract", "body_markdown", "venue_year",
//                "decision", "notes": [{"id", "replyto", "signatures",
//                "content", "cdate"}]}]}
// Each official review (signature ".../Reviewer_xxx" replying to the forum)
// starts a thread; replies beneath it by that reviewer or the authors are
// appended in cdate order. Other participants are dropped.
std::vector<PaperRecord> import_openreview(const std::filesystem::path& path);

}  // namespace fbeval
