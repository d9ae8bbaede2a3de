#include <doctest.h>
#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <functional>
#include <sstream>

#include "fbeval/error.hpp"
#include "fbeval/hash.hpp"
#include "fbeval/pipeline.hpp"
#include "synth.hpp"

using namespace fbeval;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = FBEVAL_FIXTURE_DIR;

// Copies a fixture directory so runs never write into the source tree.
fs::path staged(const std::string& fixture, const std::string& name) {
    const auto dir = synth::temp_dir(name);
    fs::copy(kFixtures / fixture, dir, fs::copy_options::recursive);
    return dir;
}

EvalReport sample_report() {
    EvalReport r;
    r.metadata = {{"config_hash", "abc"}, {"seed", 2026}};
    ReportTable t{"consensus_eval", "Consensus matching", {"Model", "P", "R", "F1"}, {}};
    t.add_row({"sft", metric_cell(0.138), metric_cell(0.112), metric_cell(0.108)});
    r.tables.push_back(t);
    r.tables.push_back(ReportTable{"consensus_detail", "Per paper", {"Paper", "Members"}, {}});
    return r;
}

std::string message_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("markdown row layout for three metrics") {
    const auto md = render_report(sample_report(), ReportFormat::markdown);
    CHECK(md.find("0.138 | 0.112 | 0.108") != std::string::npos);
    CHECK(md.find("### Consensus matching") != std::string::npos);
}

TEST_CASE("empty tables render header only") {
    const auto md = render_report(sample_report(), ReportFormat::markdown);
    const auto at = md.find("### Per paper");
    REQUIRE(at != std::string::npos);
    const std::string section = md.substr(at);
    CHECK(section == "### Per paper\n\n| Paper | Members |\n| ----- | ------: |\n");
    const auto csv = render_report(sample_report(), ReportFormat::csv);
    CHECK(csv.find("consensus_detail") == std::string::npos);
}

TEST_CASE("rendering is byte-stable and survives a JSON round trip") {
    const auto report = sample_report();
    for (auto f : {ReportFormat::json, ReportFormat::csv, ReportFormat::markdown}) {
        CHECK(render_report(report, f) == render_report(report, f));
        const auto back = json::parse(render_report(report, ReportFormat::json)).get<EvalReport>();
        CHECK(render_report(back, f) == render_report(report, f));
    }
    CHECK(metric_cell(-0.0001) == "0.000");
    CHECK(percent_cell(12.345) == "12.3");
    CHECK(optional_metric_cell(std::nullopt) == "N/A");
}

TEST_CASE("csv quoting and multi-column row keys") {
    EvalReport r;
    ReportTable t{"t", "T", {"Aspect", "Model", "Note"}, {}, 2};
    t.add_row({"a,b", "m", "say \"hi\"\nbye"});
    r.tables.push_back(t);
    const auto csv = render_report(r, ReportFormat::csv);
    CHECK(csv == "table,row,column,value\r\nt,\"a,b / m\",Note,\"say \"\"hi\"\"\nbye\"\r\n");
    CHECK_THROWS(t.add_row({"only one"}));
}

TEST_CASE("config errors are listed all at once") {
    const json doc = {{"mode", "stub"},
                      {"bogus", 1},
                      {"thresholds", {{"dedup", "high"}, {"human_human", 1.5}}},
                      {"sampling", {{"k", -3}}},
                      {"options", {{"averaging", "median"}}}};
    std::string msg = message_of([&] { PipelineConfig::from_json(doc, "."); });
    CHECK(msg.find("bogus: unknown key") != std::string::npos);
    CHECK(msg.find("thresholds.dedup: expected a number") != std::string::npos);
    CHECK(msg.find("sampling.k: expected a non-negative integer") != std::string::npos);
    CHECK(msg.find("options.averaging: 'median'") != std::string::npos);

    auto cfg = PipelineConfig::from_json({{"thresholds", {{"human_human", 1.5}}}}, ".");
    const auto problems = cfg.problems("consensus-eval");
    const auto has = [&](const std::string& s) {
        return std::ranges::any_of(problems, [&](const std::string& p) { return p.find(s) != std::string::npos; });
    };
    CHECK(has("thresholds.human_human"));
    CHECK(has("paths.model_outputs: required"));
    CHECK(has("paths.stub_fixture: required"));
    CHECK_THROWS_AS(cfg.validate("consensus-eval"), ConfigError);
    CHECK(cfg.problems("frobnicate").front().find("unknown command") != std::string::npos);
}

TEST_CASE("live mode without an endpoint names the task") {
    const auto dir = staged("consensus", "live_mode");
    auto doc = json::parse(synth::read_file(dir / "config.json"));
    doc["mode"] = "live";
    doc["endpoints"] = {{"embed", "text-embedding-3-small"}};
    const auto cfg = PipelineConfig::from_json(doc, dir);
    const auto msg = message_of([&] { cfg.validate("consensus-eval"); });
    CHECK(msg.find("endpoints.match: no endpoint bound for task 'match'") != std::string::npos);
    CHECK_THROWS_AS(cfg.endpoint_for("match"), ConfigError);
    try {
        Pipeline(cfg).run("consensus-eval");
        FAIL("expected ConfigError");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
    }
    CHECK_THROWS_AS(PipelineConfig::from_json({{"endpoints", {{"telepathy", "x"}}}}, "."), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_json({{"endpoints", {{"match", "no-such-preset"}}}}, "."), ConfigError);
}

TEST_CASE("config hash ignores presentation and tracks meaning") {
    const auto dir = staged("consensus", "hash");
    const auto base = json::parse(synth::read_file(dir / "config.json"));
    const auto hash_of = [&](const json& doc) { return PipelineConfig::from_json(doc, dir).hash(); };
    const auto h = hash_of(base);
    CHECK(h == hash_of(base));
    CHECK(h.size() == 64);

    auto same = base;
    same["workers"] = 16;
    same["paths"]["runs"] = "elsewhere";
    same["paths"]["corpus"] = "./sub/../corpus";
    CHECK(hash_of(same) == h);
    same["paths"]["corpus"] = (dir / "corpus").string();
    CHECK(hash_of(same) == h);

    for (const char* override : {"thresholds.human_model=0.5", "sampling.seed=7", "sampling.k=3",
                                 "options.averaging=macro", "paths.corpus=other", "strata=[0.2,0.4]"}) {
        auto changed = base;
        apply_override(changed, override);
        CHECK_MESSAGE(hash_of(changed) != h, override);
    }

    // The stub fixture's content is part of the identity.
    auto fixture = json::parse(synth::read_file(dir / "stub.json"));
    fixture["embedding_dimension"] = 32;
    synth::write_file(dir / "stub.json", fixture.dump());
    CHECK(hash_of(base) != h);
}

TEST_CASE("dotted overrides") {
    json doc = {{"thresholds", {{"dedup", 0.5}}}};
    apply_override(doc, "thresholds.dedup=0.7");
    apply_override(doc, "options.venue=NeurIPS");
    apply_override(doc, "options.cluster_level=true");
    CHECK(doc["thresholds"]["dedup"] == 0.7);
    CHECK(doc["options"]["venue"] == "NeurIPS");
    CHECK(doc["options"]["cluster_level"] == true);
    CHECK_THROWS_AS(apply_override(doc, "novalue"), ConfigError);
    CHECK_THROWS_AS(apply_override(doc, "thresholds.dedup.x=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(doc, "a..b=1"), ConfigError);
}

TEST_CASE("consensus fixture end to end with stable reports") {
    const auto dir = staged("consensus", "consensus_e2e");
    Pipeline p(load_config(dir / "config.json"));
    const auto report = p.run("consensus-eval");

    const auto* sets = report.find("consensus_sets");
    REQUIRE(sets != nullptr);
    REQUIRE(sets->rows.size() == 1);
    CHECK(sets->rows[0][1] == "h1 h3 h5");
    const auto* summary = report.find("consensus_eval");
    REQUIRE(summary != nullptr);
    CHECK(summary->rows[0] == std::vector<std::string>{"model-a", "0.250", "0.667", "0.364", "0.000", "0.000",
                                                       "0.000", "1"});
    CHECK(report.metadata.at("config_hash") == p.config_hash());

    const auto md = synth::read_file(p.run_dir() / "report.md");
    const auto csv = synth::read_file(p.run_dir() / "report.csv");
    const auto js = synth::read_file(p.run_dir() / "report.json");
    CHECK(render_run_dir(p.run_dir()) == report);
    CHECK(synth::read_file(p.run_dir() / "report.md") == md);
    p.run("report");
    CHECK(synth::read_file(p.run_dir() / "report.csv") == csv);

    // A fresh process-equivalent rerun is a no-op diff.
    Pipeline again(load_config(dir / "config.json"));
    CHECK(again.run_dir() == p.run_dir());
    again.run("consensus-eval");
    CHECK(synth::read_file(p.run_dir() / "report.md") == md);
    CHECK(synth::read_file(p.run_dir() / "report.json") == js);

    for (const char* artifact : {"match_edges.jsonl", "consensus.jsonl", "consensus_matches.json"}) {
        const auto meta = json::parse(synth::read_file(p.run_dir() / "artifacts" / (std::string(artifact) + ".meta.json")));
        CHECK(meta.at("config_hash") == p.config_hash());
        CHECK(meta.at("prompt_versions").at("match_feedback") == "match_feedback@v1");
    }
    CHECK(fs::exists(p.run_dir() / "log.jsonl"));
    CHECK(fs::is_directory(p.run_dir() / "cache"));

    const auto full = p.run("success-eval");
    const auto* success = full.find("success_eval");
    REQUIRE(success != nullptr);
    CHECK(success->rows[0][1] == "25.0");
    CHECK(success->rows[0][3] == "50.0");
    CHECK(full.find("novel_aligned") != nullptr);
    CHECK(full.find("consensus_eval") != nullptr);  // earlier fragment kept
}

TEST_CASE("a locked run directory is refused") {
    const auto dir = staged("consensus", "locked");
    Pipeline p(load_config(dir / "config.json"));
    fs::create_directories(p.run_dir());
    const int fd = ::open((p.run_dir() / "lock").c_str(), O_CREAT | O_RDWR, 0644);
    REQUIRE(fd >= 0);
    REQUIRE(::flock(fd, LOCK_EX | LOCK_NB) == 0);
    const auto msg = message_of([&] { p.run("consensus-eval"); });
    CHECK(msg.find("locked") != std::string::npos);
    ::close(fd);
    CHECK_NOTHROW(p.run("consensus-eval"));
}

TEST_CASE("pipeline errors carry module and paper context") {
    const auto dir = staged("consensus", "errors");
    auto fixture = json::parse(synth::read_file(dir / "stub.json"));
    fixture["templates"]["match_feedback"]["default"] = "I am not sure.";
    synth::write_file(dir / "stub.json", fixture.dump());
    try {
        Pipeline(load_config(dir / "config.json")).run("consensus-eval");
        FAIL("expected JudgeFormatError");
    } catch (const JudgeFormatError& e) {
        CHECK(std::string(e.what()).find("consensus-eval: paper worked") != std::string::npos);
        CHECK(e.raw_text().find("not sure") != std::string::npos);
    }

    synth::write_file(dir / "outputs.jsonl", R"({"paper_id": "nope", "generator": "g", "text": "x"})" "\n");
    try {
        Pipeline(load_config(dir / "config.json", {"paths.model_outputs=outputs.jsonl"})).run("success-eval");
        FAIL("expected PipelineError");
    } catch (const PipelineError& e) {
        CHECK(std::string(e.what()).find("outputs.jsonl:1") != std::string::npos);
        CHECK(std::string(e.what()).find("unknown paper 'nope'") != std::string::npos);
    }
    CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
    CHECK_THROWS_AS(Pipeline(load_config(dir / "config.json", {"splits.eval=dev"})).run("consensus-eval"),
                    PipelineError);
}

TEST_CASE("parse and forge commands on the small corpus") {
    const auto dir = staged("forge", "forge_e2e");
    Pipeline p(load_config(dir / "config.json"));
    p.run("ingest");
    const auto parsed = p.run("parse");
    const auto* summary = parsed.find("parse_summary");
    REQUIRE(summary != nullptr);
    CHECK(summary->rows[2] == std::vector<std::string>{"Feedback units", "36"});
    p.run("forge-sft");
    const auto report = p.run("forge-dpo");

    std::size_t lines = 0;
    std::istringstream in(synth::read_file(p.run_dir() / "artifacts" / "dpo.jsonl"));
    for (std::string line; std::getline(in, line); ++lines) {
        const auto j = json::parse(line);
        const auto& m = j.at("metadata");
        if (m.at("pair_kind") == "real_label") {
            CHECK(m.at("chosen_success_count").get<int>() - m.at("rejected_success_count").get<int>() >= 2);
        }
        CHECK(j.at("prompt").get<std::string>().find("Paper content:") != std::string::npos);
    }
    CHECK(lines > 0);
    const auto manifest = json::parse(synth::read_file(p.run_dir() / "artifacts" / "dpo_manifest.json"));
    CHECK(manifest.at("record_count") == lines);
    CHECK(manifest.at("config_hash") == p.config_hash());
    CHECK(fs::exists(p.run_dir() / "artifacts" / "parse_audit.jsonl.meta.json"));
    CHECK(report.find("sft_summary") != nullptr);
    CHECK(report.find("corruption_verification") != nullptr);
}

TEST_CASE("calibration sample reproduces the configured thresholds") {
    const auto dir = staged("calibration", "calibrate");
    const auto report = Pipeline(load_config(dir / "config.json")).run("calibrate");
    const auto* t = report.find("calibrated_thresholds");
    REQUIRE(t != nullptr);
    CHECK(t->rows[0][0] == "human_human");
    CHECK(t->rows[0][1] == "0.550");
    CHECK(t->rows[1][1] == "0.450");
    const auto* v = report.find("judge_validation_human_human");
    REQUIRE(v != nullptr);
    CHECK(v->rows.back()[0] == "Distribution-weighted");
    CHECK(v->rows.back()[1] == "1.000");
}
