#include "fbeval/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include "fbeval/error.hpp"
#include "fbeval/parallel.hpp"
#include "fbeval/parse.hpp"
#include "fbeval/rng.hpp"

namespace fbeval {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PipelineError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Write to a sibling temp file, then rename, so readers never see a partial file.
void write_text(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << content;
        if (!out) throw PipelineError("cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string jsonl(const std::vector<json>& lines) {
    std::string out;
    for (const auto& l : lines) out += l.dump() + "\n";
    return out;
}

class RunLock {
public:
    explicit RunLock(const fs::path& dir) {
        const auto path = dir / "lock";
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
        if (fd_ < 0) throw PipelineError("cannot open " + path.string() + ": " + std::strerror(errno));
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            throw PipelineError("run directory " + dir.string() + " is locked by another process");
        }
    }
    ~RunLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    int fd_ = -1;
};

std::string signed_percent_cell(std::optional<double> fraction) {
    if (!fraction || !std::isfinite(*fraction)) return "N/A";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.1f%%", *fraction * 100.0);
    return std::string(buf) == "-0.0%" ? "+0.0%" : buf;
}

std::uint64_t paper_seed(std::uint64_t seed, const std::string& paper_id) {
    return derive_seed(seed, fnv1a64(paper_id));
}

struct Context {
    const PipelineConfig& cfg;
    std::string hash;
    fs::path run_dir;
    std::string command;
    std::shared_ptr<ResponseCache> cache;
    std::shared_ptr<StubBackend> stub;
    std::shared_ptr<StubEmbedder> stub_embedder;

    fs::path artifacts() const { return run_dir / "artifacts"; }

    void load_stub() {
        if (stub || cfg.mode != RunMode::stub) return;
        stub = StubBackend::from_file(cfg.resolve(cfg.paths.stub_fixture));
        stub_embedder = StubEmbedder::from_fixture(stub->fixture());
    }

    JudgeClient judge(const std::string& task) {
        const auto endpoint = cfg.endpoint_for(task);
        if (cfg.mode == RunMode::stub) {
            load_stub();
            return JudgeClient(endpoint, stub, cache);
        }
        return JudgeClient(endpoint, std::make_shared<HttpBackend>(endpoint), cache);
    }

    Embedder embedder() {
        const auto endpoint = cfg.endpoint_for("embed");
        if (cfg.mode == RunMode::stub) {
            load_stub();
            return Embedder(endpoint, stub_embedder, cache);
        }
        return Embedder(endpoint, std::make_shared<HttpBackend>(endpoint), cache);
    }

    json metadata() const {
        return json{{"config_hash", hash},
                    {"mode", cfg.mode == RunMode::stub ? "stub" : "live"},
                    {"seed", cfg.sampling.seed},
                    {"k", cfg.sampling.k},
                    {"bootstrap_iterations", cfg.sampling.bootstrap_iterations},
                    {"prompt_versions", PromptRegistry::builtin().versions()}};
    }

    // Every artifact gets a sidecar naming the config and prompts behind it.
    void write_meta(const std::string& rel) {
        json meta = {{"artifact", rel},
                     {"command", command},
                     {"config_hash", hash},
                     {"prompt_versions", PromptRegistry::builtin().versions()}};
        write_text(artifacts() / (rel + ".meta.json"), meta.dump(2) + "\n");
    }

    void write_artifact(const std::string& rel, const std::string& content) {
        write_text(artifacts() / rel, content);
        write_meta(rel);
    }

    DatasetStore load_store(bool prefer_parsed = true) const {
        if (prefer_parsed && fs::exists(artifacts() / "parsed" / "manifest.json")) {
            return load_corpus(artifacts() / "parsed");
        }
        if (fs::exists(artifacts() / "corpus" / "manifest.json")) return load_corpus(artifacts() / "corpus");
        if (!cfg.paths.corpus.empty()) return load_corpus(cfg.resolve(cfg.paths.corpus));
        throw PipelineError("no corpus available: set paths.corpus or run `ingest` first");
    }
};

std::vector<const PaperRecord*> select(const DatasetStore& store, const std::string& split) {
    if (split == "all") return store.all();
    if (!store.manifest.contains(split)) {
        std::string have;
        for (const auto& [name, _] : store.manifest) have += (have.empty() ? "" : ", ") + name;
        throw PipelineError("split '" + split + "' is not in the corpus (splits: " + have + ")");
    }
    auto papers = store.split(split);
    std::ranges::sort(papers, {}, &PaperRecord::paper_id);
    return papers;
}

std::vector<FeedbackUnit> human_units(const PaperRecord& paper) {
    std::vector<FeedbackUnit> out;
    for (const auto& u : paper.units) {
        if (u.source == Source::human) out.push_back(u);
    }
    return out;
}

std::vector<std::string> texts_of(const std::vector<FeedbackUnit>& units) {
    std::vector<std::string> out;
    for (const auto& u : units) out.push_back(u.text);
    return out;
}

// ---------------------------------------------------------------------------
// Model outputs: JSONL {"paper_id", "generator", "text", "aspects"?}.

using ModelOutputs = std::map<std::string, std::map<std::string, std::vector<FeedbackUnit>>>;

ModelOutputs load_model_outputs(const fs::path& path, const DatasetStore& store) {
    std::ifstream in(path);
    if (!in) throw PipelineError("cannot read model outputs " + path.string());
    ModelOutputs out;
    std::set<std::string> seen;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.filename().string() + ":" + std::to_string(n);
        try {
            const json j = json::parse(line);
            FeedbackUnit u;
            u.paper_id = j.at("paper_id").get<std::string>();
            u.reviewer_id = j.at("generator").get<std::string>();
            u.text = j.at("text").get<std::string>();
            u.source = Source::model;
            if (u.reviewer_id.empty()) throw PipelineError("empty generator name");
            if (!store.records.contains(u.paper_id)) throw PipelineError("unknown paper '" + u.paper_id + "'");
            for (const auto& a : j.value("aspects", json::array())) u.aspects.insert(aspect_from_label(a.get<std::string>()));
            u.id = make_unit_id(u.paper_id, u.reviewer_id, u.text);
            validate(u);
            if (!seen.insert(u.id).second) continue;
            out[u.reviewer_id][u.paper_id].push_back(std::move(u));
        } catch (const json::exception& e) {
            throw PipelineError(where + ": " + e.what());
        } catch (...) {
            rethrow_with_context(where);
        }
    }
    if (out.empty()) throw PipelineError("model outputs " + path.string() + " contain no units");
    return out;
}

// ---------------------------------------------------------------------------

EvalReport run_ingest(Context& ctx) {
    const auto& cfg = ctx.cfg;
    DatasetStore store;
    const bool from_export = !cfg.paths.openreview_export.empty();
    if (from_export) {
        for (auto& r : import_openreview(cfg.resolve(cfg.paths.openreview_export))) {
            const std::string id = r.paper_id;
            if (!store.records.emplace(id, std::move(r)).second) throw IngestError("duplicate paper id '" + id + "'");
        }
        std::vector<std::string> ids;
        for (const auto& [id, _] : store.records) ids.push_back(id);
        store.manifest["train"] = ids;
    } else {
        store = load_corpus(cfg.resolve(cfg.paths.corpus));
    }

    if (!cfg.sampling.test_pools.empty()) {
        auto test = build_test_split(store, TestSplitConfig{cfg.sampling.test_pools}, cfg.sampling.seed);
        const std::set<std::string> in_test(test.begin(), test.end());
        std::vector<std::string> rest;
        for (const auto& [id, _] : store.records) {
            if (!in_test.contains(id)) rest.push_back(id);
        }
        if (cfg.sampling.dev_size > rest.size()) {
            throw IngestError("dev split needs " + std::to_string(cfg.sampling.dev_size) + " papers, " +
                              std::to_string(rest.size()) + " remain after the test split");
        }
        Rng rng(derive_seed(cfg.sampling.seed, 1u << 20));
        rng.shuffle(rest);
        std::vector<std::string> dev(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(cfg.sampling.dev_size));
        std::vector<std::string> train(rest.begin() + static_cast<std::ptrdiff_t>(cfg.sampling.dev_size), rest.end());
        for (auto* v : {&test, &dev, &train}) std::ranges::sort(*v);
        store.manifest.clear();
        store.manifest["test"] = test;
        if (!dev.empty()) store.manifest["dev"] = dev;
        store.manifest["train"] = train;
    }

    save_corpus(store, ctx.artifacts() / "corpus");
    ctx.write_meta("corpus");

    EvalReport report;
    ReportTable t{"corpus", "Corpus splits", {"Split", "Papers", "Accepted", "Rejected", "Unknown"}, {}};
    const auto counts = store.counts();
    auto add = [&](const std::string& name, const DatasetStore::Counts& c) {
        t.add_row({name, count_cell(static_cast<long long>(c.papers)), count_cell(static_cast<long long>(c.accepted)),
                   count_cell(static_cast<long long>(c.rejected)), count_cell(static_cast<long long>(c.unknown))});
    };
    for (const auto& [name, c] : counts) {
        if (name != "all") add(name, c);
    }
    if (auto it = counts.find("all"); it != counts.end()) add("all", it->second);
    report.tables.push_back(std::move(t));
    return report;
}

EvalReport run_parse(Context& ctx) {
    const auto& cfg = ctx.cfg;
    DatasetStore store = ctx.load_store(false);
    std::vector<PaperRecord*> targets;
    for (const auto* p : select(store, cfg.splits.parse)) targets.push_back(&store.records.at(p->paper_id));

    auto judge = ctx.judge("parse");
    std::ostringstream audit;
    const auto summary = parse_papers(judge, targets, cfg.workers, &audit);
    save_corpus(store, ctx.artifacts() / "parsed");
    ctx.write_meta("parsed");
    ctx.write_artifact("parse_audit.jsonl", audit.str());

    std::vector<FeedbackUnit> reference;
    std::size_t successful = 0;
    for (const auto* p : targets) {
        for (const auto& u : p->units) {
            if (u.source != Source::human) continue;
            successful += u.successful();
            reference.push_back(u);
        }
    }

    EvalReport report;
    ReportTable t{"parse_summary", "Parsed feedback", {"Metric", "Value"}, {}};
    t.add_row({"Papers", count_cell(static_cast<long long>(summary.papers))});
    t.add_row({"Threads", count_cell(static_cast<long long>(summary.threads))});
    t.add_row({"Feedback units", count_cell(static_cast<long long>(summary.units))});
    t.add_row({"Successful units", count_cell(static_cast<long long>(successful))});
    t.add_row({"Skipped positive comments", count_cell(static_cast<long long>(summary.skipped_positive))});
    report.tables.push_back(std::move(t));

    if (!cfg.paths.annotations.empty()) {
        const auto annotations = load_annotations(cfg.resolve(cfg.paths.annotations));
        ReportTable a{"agreement",
                      "Label agreement",
                      {"Label", "Comparison", "Observed", "PABAK", "Cohen's κ", "κ degenerate", "n"},
                      {},
                      2};
        for (const auto& row : agreement_report(annotations, reference)) {
            a.add_row({row.label, row.comparison, metric_cell(row.observed), metric_cell(row.pabak),
                       metric_cell(row.cohen_kappa), row.kappa_degenerate ? "yes" : "no",
                       count_cell(static_cast<long long>(row.n))});
        }
        report.tables.push_back(std::move(a));
    }
    return report;
}

EvalReport run_forge_sft(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const DatasetStore store = ctx.load_store();
    const auto papers = select(store, cfg.splits.sft);
    const auto examples = build_sft_examples(papers);

    std::vector<json> lines;
    std::size_t targets = 0;
    for (const auto& ex : examples) {
        targets += ex.unit_ids.size();
        lines.push_back({{"messages", ex.messages},
                         {"metadata", {{"paper_id", ex.paper_id}, {"reviewer_id", ex.reviewer_id}, {"unit_ids", ex.unit_ids}}}});
    }
    ctx.write_artifact("sft.jsonl", jsonl(lines));
    const TrainingManifest manifest{"sft", "artifacts/sft.jsonl", examples.size(), default_hyperparameters("sft"),
                                    PromptRegistry::builtin().get("generate_feedback").versioned_name(), ctx.hash};
    ctx.write_artifact("sft_manifest.json", json(manifest).dump(2) + "\n");

    EvalReport report;
    ReportTable t{"sft_summary", "Supervised fine-tuning data", {"Metric", "Value"}, {}};
    t.add_row({"Papers", count_cell(static_cast<long long>(papers.size()))});
    t.add_row({"Examples", count_cell(static_cast<long long>(examples.size()))});
    t.add_row({"Target units", count_cell(static_cast<long long>(targets))});
    report.tables.push_back(std::move(t));
    return report;
}

EvalReport run_forge_dpo(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const DatasetStore store = ctx.load_store();
    const auto papers = select(store, cfg.splits.dpo);
    auto embedder = ctx.embedder();
    auto corrupt_judge = ctx.judge("corrupt");
    auto verify_judge = ctx.judge("verify");
    const DpoOptions options{cfg.options.set_size, cfg.thresholds.min_delta, cfg.options.pairs_per_paper,
                             cfg.options.chosen_mode, cfg.options.corruption_pairs_per_paper};
    const auto& tmpl = PromptRegistry::builtin().get("generate_feedback");

    struct PaperResult {
        std::size_t units = 0;
        std::size_t deduped = 0;
        std::string prompt;
        std::vector<PreferencePair> pairs;
        std::vector<CorruptionVariant> judged;
        std::size_t kept = 0;
    };
    std::vector<PaperResult> results(papers.size());
    parallel_for(papers.size(), cfg.workers, [&](std::size_t i) {
        const auto& paper = *papers[i];
        try {
            auto& r = results[i];
            const std::uint64_t seed = paper_seed(cfg.sampling.seed, paper.paper_id);
            std::vector<FeedbackUnit> labeled;
            for (const auto& u : human_units(paper)) {
                if (u.labeled()) labeled.push_back(u);
            }
            r.units = labeled.size();
            if (labeled.empty()) return;
            const auto deduped = dedup_units(labeled, embedder, cfg.thresholds.dedup, seed);
            r.deduped = deduped.size();
            r.prompt = render(tmpl, {{"paper_content", paper.body_markdown}}).user;
            r.pairs = real_label_pairs(paper.paper_id, deduped, options, seed);

            std::vector<CorruptionVariant> kept;
            std::size_t corrupted = 0;
            for (const auto& u : deduped) {
                if (!u.successful()) continue;
                if (cfg.options.corrupt_units_per_paper && corrupted == cfg.options.corrupt_units_per_paper) break;
                ++corrupted;
                auto verified = verify_and_filter(verify_judge, u, paper, corrupt(corrupt_judge, u, paper),
                                                  derive_seed(seed, fnv1a64(u.id)));
                r.judged.insert(r.judged.end(), verified.judged.begin(), verified.judged.end());
                kept.insert(kept.end(), verified.kept.begin(), verified.kept.end());
            }
            r.kept = kept.size();
            auto cp = corruption_pairs(paper.paper_id, deduped, kept, options, derive_seed(seed, 1));
            r.pairs.insert(r.pairs.end(), cp.begin(), cp.end());
        } catch (...) {
            rethrow_with_context("forge-dpo: paper " + paper.paper_id);
        }
    });

    std::vector<json> dpo_lines, corruption_lines;
    std::vector<CorruptionVariant> all_judged;
    std::size_t units = 0, deduped = 0, real = 0, corruption = 0, kept = 0;
    for (const auto& r : results) {
        units += r.units;
        deduped += r.deduped;
        kept += r.kept;
        for (const auto& p : r.pairs) {
            (p.kind == PairKind::real_label ? real : corruption) += 1;
            dpo_lines.push_back(to_json_line(p, r.prompt));
        }
        for (const auto& v : r.judged) corruption_lines.push_back(v);
        all_judged.insert(all_judged.end(), r.judged.begin(), r.judged.end());
    }
    ctx.write_artifact("corruptions.jsonl", jsonl(corruption_lines));
    ctx.write_artifact("dpo.jsonl", jsonl(dpo_lines));
    const TrainingManifest manifest{"dpo", "artifacts/dpo.jsonl", dpo_lines.size(), default_hyperparameters("dpo"),
                                    tmpl.versioned_name(), ctx.hash};
    ctx.write_artifact("dpo_manifest.json", json(manifest).dump(2) + "\n");

    EvalReport report;
    ReportTable s{"dpo_summary", "Preference data", {"Metric", "Value"}, {}};
    auto count = [](std::size_t n) { return count_cell(static_cast<long long>(n)); };
    s.add_row({"Papers", count(papers.size())});
    s.add_row({"Labeled units", count(units)});
    s.add_row({"Units after deduplication", count(deduped)});
    s.add_row({"Corruption variants judged", count(all_judged.size())});
    s.add_row({"Corruption variants kept", count(kept)});
    s.add_row({"Real-label pairs", count(real)});
    s.add_row({"Corruption pairs", count(corruption)});
    report.tables.push_back(std::move(s));

    std::map<CorruptionDimension, DimensionStats> stats;
    accumulate(stats, all_judged);
    ReportTable v{"corruption_verification",
                  "Corruption verification",
                  {"Dimension", "Judged", "Accuracy", "Target degradation", "Collateral preservation", "Kept"},
                  {}};
    for (auto d : kAllCorruptions) {
        auto it = stats.find(d);
        if (it == stats.end() || it->second.judged == 0) continue;
        const auto& st = it->second;
        v.add_row({std::string(to_string(d)), count(st.judged), metric_cell(st.accuracy()),
                   metric_cell(st.mean_degradation()), metric_cell(st.mean_preservation()), count(st.kept)});
    }
    report.tables.push_back(std::move(v));
    return report;
}

// ---------------------------------------------------------------------------
// Calibration sample: {"human_human": {"pairs": [{"cosine", "labels": [bool..]
// | "match": bool, "judged"?: bool}], "population": [cosines]}, "human_model": ...}

EvalReport run_calibrate(Context& ctx) {
    const auto& cfg = ctx.cfg;
    json doc;
    try {
        doc = json::parse(read_text(cfg.resolve(cfg.paths.calibration)));
    } catch (const json::exception& e) {
        throw PipelineError("calibration sample: " + std::string(e.what()));
    }
    const StratumTable strata{cfg.strata};
    const PairType types[] = {PairType::human_human, PairType::human_model};
    std::map<PairType, std::vector<StratumRate>> rates;
    EvalReport report;
    ReportTable thresholds{"calibrated_thresholds",
                           "Calibrated similarity thresholds",
                           {"Pair type", "Calibrated threshold", "Configured threshold", "Krippendorff α",
                            "Annotated pairs"},
                           {}};
    std::vector<ReportTable> validations;
    json artifact = json::object();

    for (auto type : types) {
        const std::string name(to_string(type));
        if (!doc.contains(name)) continue;
        try {
            const json& section = doc.at(name);
            std::vector<AnnotatedPair> annotated;
            std::vector<JudgedPair> judged;
            std::vector<std::vector<std::optional<int>>> labels;
            bool have_judged = true;
            for (const auto& p : section.at("pairs")) {
                AnnotatedPair a{p.at("cosine").get<double>(), false};
                if (p.contains("labels")) {
                    std::size_t yes = 0, no = 0;
                    auto& row = labels.emplace_back();
                    for (const auto& l : p.at("labels")) {
                        const bool b = l.get<bool>();
                        (b ? yes : no) += 1;
                        row.emplace_back(b ? 1 : 0);
                    }
                    a.match = yes > no;
                } else {
                    a.match = p.at("match").get<bool>();
                }
                annotated.push_back(a);
                if (p.contains("judged")) {
                    judged.push_back({a.cosine, p.at("judged").get<bool>(), a.match});
                } else {
                    have_judged = false;
                }
            }
            rates[type] = stratum_rates(annotated, strata);
            const double threshold = calibrate_threshold(annotated, strata, cfg.thresholds.calibration_cutoff);
            std::optional<double> alpha;
            std::size_t width = 0;
            for (const auto& row : labels) width = std::max(width, row.size());
            if (width >= 2) {
                for (auto& row : labels) row.resize(width);
                try {
                    alpha = stats::krippendorff_alpha_nominal(labels);
                } catch (const InvalidArgument&) {
                }
            }
            const double configured =
                type == PairType::human_human ? cfg.thresholds.human_human : cfg.thresholds.human_model;
            thresholds.add_row({name, metric_cell(threshold), metric_cell(configured), optional_metric_cell(alpha),
                                count_cell(static_cast<long long>(annotated.size()))});
            json rate_list = json::array();
            for (const auto& r : rates[type]) rate_list.push_back(r.rate() ? json(*r.rate()) : json());
            artifact[name] = {{"threshold", threshold}, {"rates", rate_list}, {"alpha", alpha ? json(*alpha) : json()}};

            if (have_judged && !judged.empty() && section.contains("population")) {
                const auto population = section.at("population").get<std::vector<double>>();
                const auto rows = judge_validation(judged, population, strata, threshold);
                ReportTable v{"judge_validation_" + name,
                              "Match judge validation (" + name + ")",
                              {"Stratum", "Weight", "Accuracy", "Precision", "Recall", "F1"},
                              {}};
                for (const auto& r : rows) {
                    v.add_row({r.label, metric_cell(r.weight), metric_cell(r.accuracy), metric_cell(r.precision),
                               metric_cell(r.recall), metric_cell(r.f1)});
                }
                const auto w = distribution_weighted(rows, cfg.thresholds.weight_tolerance);
                v.add_row({"Distribution-weighted", metric_cell(w.weight), metric_cell(w.accuracy),
                           metric_cell(w.precision), metric_cell(w.recall), metric_cell(w.f1)});
                validations.push_back(std::move(v));
            }
        } catch (const json::exception& e) {
            throw PipelineError("calibrate: " + name + ": " + e.what());
        } catch (...) {
            rethrow_with_context("calibrate: " + name);
        }
    }
    if (rates.empty()) throw PipelineError("calibrate: the sample has neither human_human nor human_model pairs");

    ReportTable table{"match_rates", "Match rate by similarity stratum", {"Stratum", "Human-human", "Human-model"}, {}};
    for (std::size_t s = 0; s < strata.size(); ++s) {
        auto cell = [&](PairType type) {
            auto it = rates.find(type);
            return it == rates.end() ? std::string("N/A") : optional_metric_cell(it->second[s].rate());
        };
        table.add_row({strata.label(s), cell(PairType::human_human), cell(PairType::human_model)});
    }
    report.tables.push_back(std::move(table));
    report.tables.push_back(std::move(thresholds));
    for (auto& v : validations) report.tables.push_back(std::move(v));
    ctx.write_artifact("calibration.json", artifact.dump(2) + "\n");
    return report;
}

// ---------------------------------------------------------------------------

EvalReport run_consensus_eval(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const DatasetStore store = ctx.load_store();
    const auto papers = select(store, cfg.splits.eval);
    const auto outputs = load_model_outputs(cfg.resolve(cfg.paths.model_outputs), store);
    std::vector<std::string> generators;
    for (const auto& [g, _] : outputs) generators.push_back(g);

    auto judge = ctx.judge("match");
    auto embedder = ctx.embedder();
    const ConsensusOptions consensus_options{cfg.options.require_partner_success};

    struct PaperResult {
        std::vector<MatchEdge> human_edges;
        ConsensusSet consensus;
        std::vector<PaperEval> evals;  // generator order
    };
    std::vector<PaperResult> results(papers.size());
    parallel_for(papers.size(), cfg.workers, [&](std::size_t i) {
        const auto& paper = *papers[i];
        try {
            auto& r = results[i];
            const auto human = human_units(paper);
            std::map<std::string, const FeedbackUnit*> by_id;
            for (const auto& u : human) by_id[u.id] = &u;
            std::vector<Vector> vectors;
            if (!human.empty()) vectors = embedder.embed(texts_of(human));
            // Edges between two unsuccessful units cannot create a member.
            for (auto& e : prefilter_human_pairs(human, vectors, cfg.thresholds.human_human)) {
                const auto* left = by_id.at(e.left_unit_id);
                const auto* right = by_id.at(e.right_unit_id);
                if (!left->successful() && !right->successful()) continue;
                r.human_edges.push_back(judge_match(judge, e, paper.abstract, left->text, right->text));
            }
            r.consensus = build_consensus(paper, r.human_edges, consensus_options);

            std::vector<FeedbackUnit> members;
            std::vector<Vector> member_vectors;
            for (std::size_t u = 0; u < human.size(); ++u) {
                if (r.consensus.members.contains(human[u].id)) {
                    members.push_back(human[u]);
                    member_vectors.push_back(vectors[u]);
                }
            }
            for (const auto& g : generators) {
                PaperEval ev{paper.paper_id, r.consensus, {}, {}};
                const auto& per_paper = outputs.at(g);
                auto it = per_paper.find(paper.paper_id);
                if (it != per_paper.end()) {
                    const auto& model = it->second;
                    for (const auto& u : model) ev.model_unit_ids.push_back(u.id);
                    if (!members.empty()) {
                        std::map<std::string, const FeedbackUnit*> model_by_id;
                        for (const auto& u : model) model_by_id[u.id] = &u;
                        const auto model_vectors = embedder.embed(texts_of(model));
                        for (auto& e : prefilter_model_pairs(members, member_vectors, model, model_vectors,
                                                             cfg.thresholds.human_model)) {
                            ev.model_edges.push_back(judge_match(judge, e, paper.abstract,
                                                                 by_id.at(e.left_unit_id)->text,
                                                                 model_by_id.at(e.right_unit_id)->text));
                        }
                    }
                }
                r.evals.push_back(std::move(ev));
            }
        } catch (...) {
            rethrow_with_context("consensus-eval: paper " + paper.paper_id);
        }
    });

    std::vector<json> edge_lines, consensus_lines;
    json matches = json::object();
    EvalReport report;
    ReportTable sets{"consensus_sets", "Consensus feedback per paper", {"Paper", "Members", "Clusters"}, {}};
    ReportTable detail{"consensus_detail",
                       "Consensus matching per paper",
                       {"Paper", "Model", "Consensus units", "Model units", "Matched model", "Matched consensus",
                        "Precision", "Recall", "F1"},
                       {},
                       2};
    for (std::size_t i = 0; i < papers.size(); ++i) {
        const auto& r = results[i];
        const auto& pid = papers[i]->paper_id;
        for (const auto& e : r.human_edges) {
            json j = e;
            j["paper_id"] = pid;
            edge_lines.push_back(j);
        }
        std::string members;
        for (const auto& m : r.consensus.members) members += (members.empty() ? "" : " ") + m;
        json clusters = json::array();
        for (const auto& c : r.consensus.clusters) clusters.push_back(c);
        consensus_lines.push_back({{"paper_id", pid}, {"members", r.consensus.members}, {"clusters", clusters}});
        sets.add_row({pid, members.empty() ? "-" : members,
                      count_cell(static_cast<long long>(r.consensus.clusters.size()))});

        for (std::size_t g = 0; g < generators.size(); ++g) {
            const auto& ev = r.evals[g];
            for (const auto& e : ev.model_edges) {
                json j = e;
                j["paper_id"] = pid;
                j["generator"] = generators[g];
                edge_lines.push_back(j);
            }
            const auto score = score_model(ev.consensus, ev.model_unit_ids, ev.model_edges, cfg.options.cluster_level);
            matches[generators[g]][pid] = score.matched_model_units;
            const bool usable = !ev.consensus.members.empty();
            auto metric = [&](double v) { return usable ? metric_cell(v) : std::string("N/A"); };
            detail.add_row({pid, generators[g], count_cell(static_cast<long long>(ev.consensus.members.size())),
                            count_cell(static_cast<long long>(ev.model_unit_ids.size())),
                            count_cell(static_cast<long long>(score.counts.matched_model)),
                            count_cell(static_cast<long long>(score.counts.matched_consensus)),
                            metric(score.metrics.precision), metric(score.metrics.recall), metric(score.metrics.f1)});
        }
    }

    ReportTable summary{"consensus_eval",
                        "Consensus matching",
                        {"Model", "Precision", "Recall", "F1", "Precision ±", "Recall ±", "F1 ±", "Papers"},
                        {}};
    for (std::size_t g = 0; g < generators.size(); ++g) {
        std::vector<PaperEval> evals;
        for (const auto& r : results) evals.push_back(r.evals[g]);
        ConsensusEvalResult res;
        try {
            res = bootstrap_consensus(evals, cfg.sampling.k, cfg.sampling.bootstrap_iterations, cfg.sampling.seed,
                                      cfg.options.averaging, cfg.options.cluster_level);
        } catch (const InvalidArgument& e) {
            throw PipelineError("consensus-eval: " + generators[g] + " on split '" + cfg.splits.eval + "': " + e.what());
        }
        summary.add_row({generators[g], metric_cell(res.precision.point_estimate), metric_cell(res.recall.point_estimate),
                         metric_cell(res.f1.point_estimate), metric_cell(res.precision.half_width()),
                         metric_cell(res.recall.half_width()), metric_cell(res.f1.half_width()),
                         count_cell(static_cast<long long>(res.papers_used))});
    }

    std::ranges::sort(edge_lines, [](const json& a, const json& b) {
        auto key = [](const json& j) {
            return std::tuple(j.at("paper_id").get<std::string>(), j.value("generator", std::string()),
                              j.at("left_unit_id").get<std::string>(), j.at("right_unit_id").get<std::string>());
        };
        return key(a) < key(b);
    });
    ctx.write_artifact("match_edges.jsonl", jsonl(edge_lines));
    ctx.write_artifact("consensus.jsonl", jsonl(consensus_lines));
    ctx.write_artifact("consensus_matches.json", matches.dump(2) + "\n");

    report.tables.push_back(std::move(summary));
    report.tables.push_back(std::move(sets));
    report.tables.push_back(std::move(detail));
    return report;
}

EvalReport run_success_eval(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const DatasetStore store = ctx.load_store();
    const auto papers = select(store, cfg.splits.eval);
    const auto outputs = load_model_outputs(cfg.resolve(cfg.paths.model_outputs), store);
    auto quality = ctx.judge("quality");
    auto predictor = ctx.judge("predict");
    const QualityPromptOptions prompt_options{cfg.options.venue, cfg.options.excerpt_chars};

    struct Job {
        std::string generator;
        const PaperRecord* paper;
        const std::vector<FeedbackUnit>* units;
        std::vector<UnitAssessment> assessed;
        std::vector<json> records;
    };
    std::vector<Job> jobs;
    for (const auto& [g, per_paper] : outputs) {
        for (const auto* p : papers) {
            auto it = per_paper.find(p->paper_id);
            if (it != per_paper.end() && !it->second.empty()) jobs.push_back({g, p, &it->second, {}, {}});
        }
    }
    parallel_for(jobs.size(), cfg.workers, [&](std::size_t i) {
        auto& job = jobs[i];
        try {
            for (const auto& u : *job.units) {
                const auto scores = score_quality(quality, u, *job.paper, prompt_options);
                const auto predicted = predict_response(predictor, u, *job.paper, cfg.options.excerpt_chars);
                UnitAssessment a{u.id, passes_quality(scores, cfg.thresholds.quality), predicted.validity,
                                 predicted.action};
                job.assessed.push_back(a);
                job.records.push_back({{"unit_id", u.id},
                                       {"paper_id", u.paper_id},
                                       {"generator", job.generator},
                                       {"scores", scores},
                                       {"passes_quality", a.passes_quality},
                                       {"validity", to_string(a.validity)},
                                       {"author_action", to_string(a.action)},
                                       {"combined_success", unit_success(a, SuccessMode::combined, cfg.options.quality_filter)}});
            }
        } catch (...) {
            rethrow_with_context("success-eval: " + job.generator + " on paper " + job.paper->paper_id);
        }
    });

    std::map<std::string, std::vector<std::vector<UnitAssessment>>> per_generator;
    std::map<std::string, std::map<std::string, const UnitAssessment*>> by_unit;
    std::vector<json> records;
    for (const auto& job : jobs) {
        per_generator[job.generator].push_back(job.assessed);
        records.insert(records.end(), job.records.begin(), job.records.end());
    }
    for (const auto& [g, _] : outputs) {
        if (!per_generator.contains(g)) {
            throw PipelineError("success-eval: generator " + g + " has no units on split '" + cfg.splits.eval + "'");
        }
    }
    for (const auto& [g, per_paper] : per_generator) {
        for (const auto& paper : per_paper) {
            for (const auto& a : paper) by_unit[g][a.unit_id] = &a;
        }
    }
    ctx.write_artifact("unit_assessments.jsonl", jsonl(records));

    EvalReport report;
    ReportTable table{"success_eval",
                      "Predicted author-response success",
                      {"Model", "Success (%)", "Success ±", "Validity only (%)", "Validity ±", "Action only (%)",
                       "Action ±", "Units"},
                      {}};
    std::vector<std::uint64_t> successes, totals;
    std::vector<std::string> names;
    for (const auto& [g, per_paper] : per_generator) {
        const auto res = bootstrap_eval(per_paper, cfg.sampling.k, cfg.sampling.bootstrap_iterations,
                                        cfg.sampling.seed, cfg.options.quality_filter);
        std::vector<std::string> row{g};
        for (auto mode : kAllModes) {
            const auto& m = res.modes.at(mode);
            row.push_back(percent_cell(m.mean * 100.0));
            row.push_back(percent_cell(m.ci.half_width() * 100.0));
        }
        row.push_back(count_cell(static_cast<long long>(res.units)));
        table.add_row(row);
        std::uint64_t s = 0;
        for (const auto& paper : per_paper) {
            for (const auto& a : paper) s += unit_success(a, SuccessMode::combined, cfg.options.quality_filter);
        }
        successes.push_back(s);
        totals.push_back(res.units);
        names.push_back(g);
    }
    report.tables.push_back(std::move(table));

    if (names.size() >= 2) {
        const auto tests = stats::binary_group_tests(successes, totals, cfg.options.correction);
        ReportTable t{"success_tests", "Success-rate comparisons", {"Comparison", "Test", "Statistic", "p-value"}, {}};
        t.add_row({"all models", "chi-square", optional_metric_cell(tests.chi_square),
                   optional_metric_cell(tests.chi_square_p)});
        for (const auto& p : tests.pairwise) {
            t.add_row({names[p.first] + " vs " + names[p.second], "Fisher exact", "N/A", metric_cell(p.p)});
        }
        report.tables.push_back(std::move(t));
    }

    const auto matches_path = ctx.artifacts() / "consensus_matches.json";
    if (fs::exists(matches_path)) {
        const json matches = json::parse(read_text(matches_path));
        std::map<std::string, Decomposition> decompositions;
        for (const auto& [g, per_paper] : outputs) {
            if (!matches.contains(g)) continue;
            std::vector<ModelUnitOutcome> outcomes;
            for (const auto* p : papers) {
                auto it = per_paper.find(p->paper_id);
                if (it == per_paper.end()) continue;
                std::set<std::string> matched;
                if (matches[g].contains(p->paper_id)) matched = matches[g][p->paper_id].get<std::set<std::string>>();
                for (const auto& u : it->second) {
                    const auto* a = by_unit.at(g).at(u.id);
                    outcomes.push_back({u.id, matched.contains(u.id),
                                        unit_success(*a, SuccessMode::combined, cfg.options.quality_filter), u.aspects});
                }
            }
            decompositions[g] = decompose_novel_aligned(outcomes);
        }
        const auto baseline = decompositions.find(cfg.options.baseline_generator);
        auto relative = [&](const std::string& g, double value, auto rate_of) -> std::string {
            if (baseline == decompositions.end() || g == baseline->first) return "N/A";
            return signed_percent_cell(relative_improvement(value, rate_of(baseline->second)));
        };
        ReportTable na{"novel_aligned",
                       "Aligned and novel successful feedback",
                       {"Model", "Aligned (%)", "Novel (%)", "Aligned rel. Δ", "Novel rel. Δ", "Units"},
                       {}};
        ReportTable aspects{"aspect_decomposition",
                            "Aligned and novel successful feedback by aspect",
                            {"Aspect", "Model", "Aligned (%)", "Novel (%)", "Aligned rel. Δ", "Novel rel. Δ"},
                            {},
                            2};
        for (const auto& [g, d] : decompositions) {
            na.add_row({g, percent_cell(d.aligned_rate() * 100.0), percent_cell(d.novel_rate() * 100.0),
                        relative(g, d.aligned_rate(), [](const Decomposition& b) { return b.aligned_rate(); }),
                        relative(g, d.novel_rate(), [](const Decomposition& b) { return b.novel_rate(); }),
                        count_cell(static_cast<long long>(d.total))});
        }
        std::vector<std::pair<std::string, std::string>> aspect_rows;
        for (auto a : kAllAspects) aspect_rows.emplace_back(std::string(to_string(a)), std::string(display_name(a)));
        aspect_rows.emplace_back(kNoAspect, "No aspect");
        for (const auto& [slug, label] : aspect_rows) {
            for (const auto& [g, d] : decompositions) {
                const double aligned = d.rate(slug, true), novel = d.rate(slug, false);
                aspects.add_row({label, g, percent_cell(aligned * 100.0), percent_cell(novel * 100.0),
                                 relative(g, aligned, [&](const Decomposition& b) { return b.rate(slug, true); }),
                                 relative(g, novel, [&](const Decomposition& b) { return b.rate(slug, false); })});
            }
        }
        report.tables.push_back(std::move(na));
        report.tables.push_back(std::move(aspects));
    }
    return report;
}

EvalReport dispatch(Context& ctx) {
    const auto& c = ctx.command;
    if (c == "ingest") return run_ingest(ctx);
    if (c == "parse") return run_parse(ctx);
    if (c == "forge-sft") return run_forge_sft(ctx);
    if (c == "forge-dpo") return run_forge_dpo(ctx);
    if (c == "calibrate") return run_calibrate(ctx);
    if (c == "consensus-eval") return run_consensus_eval(ctx);
    if (c == "success-eval") return run_success_eval(ctx);
    throw ConfigError("unknown command '" + c + "'");
}

void append_log(const fs::path& run_dir, const json& entry) {
    std::ofstream out(run_dir / "log.jsonl", std::ios::app);
    out << entry.dump() << "\n";
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

EvalReport render_unlocked(const fs::path& run_dir) {
    const auto dir = run_dir / "artifacts" / "fragments";
    std::vector<EvalReport> fragments;
    for (const char* command : kCommands) {
        const auto path = dir / (std::string(command) + ".json");
        if (!fs::exists(path)) continue;
        try {
            fragments.push_back(json::parse(read_text(path)).get<EvalReport>());
        } catch (const json::exception& e) {
            throw PipelineError("report fragment " + path.string() + ": " + e.what());
        }
    }
    if (fragments.empty()) throw PipelineError("run directory " + run_dir.string() + " has no command results yet");
    auto merged = merge_reports(fragments);
    write_text(run_dir / "report.json", render_report(merged, ReportFormat::json));
    write_text(run_dir / "report.csv", render_report(merged, ReportFormat::csv));
    write_text(run_dir / "report.md", render_report(merged, ReportFormat::markdown));
    return merged;
}

}  // namespace

EvalReport render_run_dir(const fs::path& run_dir) {
    if (!fs::is_directory(run_dir)) throw PipelineError("run directory " + run_dir.string() + " does not exist");
    RunLock lock(run_dir);
    return render_unlocked(run_dir);
}

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) {
    hash_ = config_.hash();
    run_dir_ = config_.resolve(config_.paths.runs) / hash_.substr(0, 12);
}

EvalReport Pipeline::run(const std::string& command) {
    config_.validate(command);
    if (command == "report") return render_run_dir(run_dir_);

    fs::create_directories(run_dir_ / "artifacts" / "fragments");
    RunLock lock(run_dir_);
    json effective = config_.to_json();
    effective["config_hash"] = hash_;
    write_text(run_dir_ / "config.json", effective.dump(2) + "\n");

    Context ctx{config_, hash_, run_dir_, command, std::make_shared<ResponseCache>(run_dir_ / "cache"), {}, {}};
    const auto started = std::chrono::steady_clock::now();
    EvalReport fragment;
    try {
        fragment = dispatch(ctx);
    } catch (const std::exception& e) {
        append_log(run_dir_, {{"command", command}, {"status", "error"}, {"error", e.what()}, {"at", utc_now()}});
        throw;
    }
    fragment.metadata = ctx.metadata();
    write_text(run_dir_ / "artifacts" / "fragments" / (command + ".json"), json(fragment).dump(2) + "\n");
    auto merged = render_unlocked(run_dir_);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    append_log(run_dir_, {{"command", command}, {"status", "ok"}, {"seconds", seconds}, {"at", utc_now()}});
    return merged;
}

}  // namespace fbeval
