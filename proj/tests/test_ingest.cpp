#include <doctest.h>

#include <algorithm>
#include <set>

#include "fbeval/error.hpp"
#include "fbeval/ingest.hpp"
#include "synth.hpp"

using namespace fbeval;
namespace fs = std::filesystem;

namespace {

DatasetStore three_paper_store(const fs::path& root) {
    DatasetStore s;
    s.root = root;
    for (const auto& [id, split] : std::vector<std::pair<std::string, std::string>>{
             {"p1", "train"}, {"p2", "train"}, {"p3", "test"}}) {
        auto p = synth::paper(id);
        p.units.push_back(synth::unit(id, "R1", "The notation in section 2 is undefined."));
        s.records[id] = p;
        s.manifest[split].push_back(id);
    }
    return s;
}

}  // namespace

TEST_CASE("well-formed corpus loads with split counts") {
    const auto root = synth::temp_dir("ingest_ok");
    save_corpus(three_paper_store(root), root);
    const auto store = load_corpus(root);
    CHECK(store.records.size() == 3);
    CHECK(store.split("train").size() == 2);
    CHECK(store.split("test").size() == 1);
    const auto counts = store.counts();
    CHECK(counts.at("all").papers == 3);
    CHECK(counts.at("all").accepted == 3);
    CHECK(store.get("p2").units.size() == 1);
    CHECK_THROWS_AS(store.get("nope"), IngestError);
}

TEST_CASE("re-serializing a loaded store is byte-identical") {
    const auto a = synth::temp_dir("ingest_rt_a");
    const auto b = synth::temp_dir("ingest_rt_b");
    save_corpus(three_paper_store(a), a);
    save_corpus(load_corpus(a), b);
    for (const char* f : {"manifest.json", "train.jsonl", "test.jsonl"}) {
        CHECK(synth::read_file(a / f) == synth::read_file(b / f));
    }
}

TEST_CASE("duplicate paper_id is reported with the file") {
    const auto root = synth::temp_dir("ingest_dup");
    auto s = three_paper_store(root);
    save_corpus(s, root);
    const std::string line = canonical_record_line(s.get("p1"));
    synth::write_file(root / "train.jsonl", line + "\n" + line + "\n");
    try {
        load_corpus(root);
        FAIL("expected an error");
    } catch (const IngestError& e) {
        const std::string what = e.what();
        CHECK(what.find("duplicate paper_id") != std::string::npos);
        CHECK(what.find("train.jsonl") != std::string::npos);
    }
}

TEST_CASE("duplicate id across manifest splits and missing records are errors") {
    const auto root = synth::temp_dir("ingest_manifest");
    auto s = three_paper_store(root);
    save_corpus(s, root);
    synth::write_file(root / "manifest.json",
                      R"({"format_version": 1, "splits": {"train": ["p1", "p2"], "test": ["p1"]}})");
    CHECK_THROWS_WITH_AS(load_corpus(root), doctest::Contains("duplicate paper_id"), IngestError);

    synth::write_file(root / "manifest.json",
                      R"({"format_version": 1, "splits": {"train": ["p1", "p2", "p9"], "test": ["p3"]}})");
    CHECK_THROWS_WITH_AS(load_corpus(root), doctest::Contains("missing record"), IngestError);
}

TEST_CASE("malformed record reports its line number") {
    const auto root = synth::temp_dir("ingest_bad");
    auto s = three_paper_store(root);
    save_corpus(s, root);
    synth::write_file(root / "train.jsonl", canonical_record_line(s.get("p1")) + "\n{not json\n");
    CHECK_THROWS_WITH_AS(load_corpus(root), doctest::Contains("train.jsonl:2"), IngestError);
}

TEST_CASE("test split is decision-balanced, deterministic and disjoint across pools") {
    DatasetStore s;
    for (int i = 0; i < 4; ++i) {
        s.records["a" + std::to_string(i)] = synth::paper("a" + std::to_string(i), 2024, Decision::accepted);
        s.records["r" + std::to_string(i)] = synth::paper("r" + std::to_string(i), 2024, Decision::rejected);
        s.records["n" + std::to_string(i)] = synth::paper("n" + std::to_string(i), 2026, Decision::accepted);
        s.records["m" + std::to_string(i)] = synth::paper("m" + std::to_string(i), 2026, Decision::rejected);
    }
    TestSplitConfig cfg;
    cfg.pools = {{2020, 2025, 4}, {2026, 2026, 3}};
    const auto ids = build_test_split(s, cfg, 7);
    REQUIRE(ids.size() == 7);
    CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == 7);
    int accepted_old = 0, rejected_old = 0, accepted_new = 0, rejected_new = 0;
    for (const auto& id : ids) {
        const auto& r = s.records.at(id);
        const bool acc = r.decision == Decision::accepted;
        if (r.venue_year < 2026) (acc ? accepted_old : rejected_old)++;
        else (acc ? accepted_new : rejected_new)++;
    }
    CHECK(accepted_old == 2);
    CHECK(rejected_old == 2);
    CHECK(accepted_new == 1);
    CHECK(rejected_new == 2);
    CHECK(build_test_split(s, cfg, 7) == ids);

    cfg.pools = {{2020, 2025, 10}};
    CHECK_THROWS_WITH_AS(build_test_split(s, cfg, 7), doctest::Contains("needs 5 accepted"), IngestError);
    cfg.pools = {{2020, 2025, 2}, {2024, 2026, 2}};
    CHECK_THROWS_AS(build_test_split(s, cfg, 7), ConfigError);
}

TEST_CASE("default test split sizes") {
    const TestSplitConfig cfg;
    REQUIRE(cfg.pools.size() == 2);
    CHECK(cfg.pools[0].size == 600);
    CHECK(cfg.pools[1].size == 598);
    CHECK(cfg.pools[0].size + cfg.pools[1].size == 1198);
}

TEST_CASE("annotations: majority vote, empty file, range and roster errors") {
    const auto dir = synth::temp_dir("ingest_ann");
    synth::write_file(dir / "votes.jsonl",
                      R"({"unit_id": "a|b", "annotator_id": "x", "match_label": true})"
                      "\n"
                      R"({"unit_id": "a|b", "annotator_id": "y", "match_label": true})"
                      "\n"
                      R"({"unit_id": "a|b", "annotator_id": "z", "match_label": false})"
                      "\n"
                      R"({"unit_id": "c|d", "annotator_id": "x", "match_label": true})"
                      "\n"
                      R"({"unit_id": "c|d", "annotator_id": "y", "match_label": false})"
                      "\n");
    const auto records = load_annotations(dir / "votes.jsonl");
    CHECK(records.size() == 5);
    const auto votes = majority_match(records);
    CHECK(votes.at("a|b"));
    CHECK_FALSE(votes.at("c|d"));

    synth::write_file(dir / "empty.jsonl", "");
    CHECK(load_annotations(dir / "empty.jsonl").empty());

    synth::write_file(dir / "likert.jsonl", R"({"unit_id": "u", "annotator_id": "x", "likert": {"accuracy": 6}})");
    CHECK_THROWS_WITH_AS(load_annotations(dir / "likert.jsonl"), doctest::Contains("outside 1..5"), IngestError);

    synth::write_file(dir / "nolabel.jsonl", R"({"unit_id": "u", "annotator_id": "x"})");
    CHECK_THROWS_AS(load_annotations(dir / "nolabel.jsonl"), IngestError);

    const std::set<std::string> roster = {"x", "y"};
    CHECK_THROWS_WITH_AS(load_annotations(dir / "votes.jsonl", &roster), doctest::Contains("unknown annotator 'z'"),
                         IngestError);
}

TEST_CASE("openreview export becomes reviewer threads") {
    const auto dir = synth::temp_dir("ingest_or");
    synth::write_file(dir / "export.json", R"J({"papers": [{
        "forum": "F1", "title": "T", "abstract": "A", "body_markdown": "B", "venue_year": 2024,
        "decision": "Accept (poster)",
        "notes": [
          {"id": "r1", "replyto": "F1", "signatures": ["ICLR.cc/2024/Conference/Submission1/Reviewer_ab12"],
           "content": {"summary": {"value": "Sum"}, "weaknesses": {"value": "Weak"}, "rating": {"value": "6"}}, "cdate": 10},
          {"id": "c2", "replyto": "r1", "signatures": ["ICLR.cc/2024/Conference/Submission1/Reviewer_ab12"],
           "content": {"comment": {"value": "Follow-up"}}, "cdate": 30},
          {"id": "c1", "replyto": "r1", "signatures": ["ICLR.cc/2024/Conference/Submission1/Authors"],
           "content": {"comment": {"value": "We will fix it."}}, "cdate": 20},
          {"id": "c3", "replyto": "r1", "signatures": ["~Someone_Else1"],
           "content": {"comment": {"value": "Public comment"}}, "cdate": 25}
        ]}]})J");
    const auto papers = import_openreview(dir / "export.json");
    REQUIRE(papers.size() == 1);
    const auto& p = papers[0];
    CHECK(p.decision == Decision::accepted);
    REQUIRE(p.threads.size() == 1);
    CHECK(p.threads[0].reviewer_id == "Reviewer_ab12");
    REQUIRE(p.threads[0].turns.size() == 3);
    CHECK(p.threads[0].turns[0].text == "Sum\n\nWeak");
    CHECK(p.threads[0].turns[1].speaker == Speaker::author);
    CHECK(p.threads[0].turns[2].text == "Follow-up");
}
