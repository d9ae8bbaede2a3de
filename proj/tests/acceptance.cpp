// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Tolerances are fixed here and never loosened to make a run pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fbeval/consensus.hpp"
#include "fbeval/error.hpp"
#include "fbeval/forge.hpp"
#include "fbeval/pipeline.hpp"
#include "fbeval/rng.hpp"
#include "fbeval/stats.hpp"
#include "fbeval/successeval.hpp"
#include "oracles.hpp"
#include "scripted_judge.hpp"

using namespace fbeval;
namespace fs = std::filesystem;

namespace {

constexpr double kExact = 1e-12;
constexpr double kOracle = 1e-9;
constexpr double kTableTolerance = 0.001;
// The three-stratum human-model weights add up to 1.001.
constexpr double kTableWeightTolerance = 0.0015;
constexpr double kAgreementSeconds = 1.0;
constexpr double kBootstrapSeconds = 60.0;

const fs::path kFixtures = FBEVAL_FIXTURE_DIR;

// Collects the first few failures of one criterion.
class Check {
public:
    void expect(bool ok, const std::string& what) {
        ++checks_;
        if (ok) return;
        if (failures_.size() < 5) failures_.push_back(what);
        ++failed_;
    }
    void near(double got, double want, double tol, const std::string& what) {
        std::ostringstream s;
        s.precision(17);
        s << what << ": got " << got << ", want " << want << " +- " << tol;
        expect(std::abs(got - want) <= tol, s.str());
    }
    bool ok() const { return failed_ == 0; }
    std::size_t checks() const { return checks_; }
    const std::vector<std::string>& failures() const { return failures_; }
    std::size_t failed() const { return failed_; }

private:
    std::size_t checks_ = 0;
    std::size_t failed_ = 0;
    std::vector<std::string> failures_;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Copies a fixture so runs never write into the source tree.
fs::path staged(const std::string& fixture) {
    const auto dir = fs::temp_directory_path() / ("fbeval_acceptance_" + fixture);
    fs::remove_all(dir);
    fs::copy(kFixtures / fixture, dir, fs::copy_options::recursive);
    return dir;
}

FeedbackUnit make_unit(const std::string& paper, const std::string& reviewer, const std::string& text,
                       bool successful) {
    FeedbackUnit u;
    u.paper_id = paper;
    u.reviewer_id = reviewer;
    u.text = text;
    u.validity = successful ? Validity::agreed : Validity::rebutted;
    u.action = AuthorAction::will_revise;
    u.id = make_unit_id(paper, reviewer, text);
    return u;
}

PaperRecord make_paper(const std::string& id) {
    PaperRecord p;
    p.paper_id = id;
    p.title = "Title of " + id;
    p.abstract = "Abstract of " + id;
    p.body_markdown = "# " + id + "\n\nBody text.";
    p.venue_year = 2024;
    p.decision = Decision::accepted;
    return p;
}

void agreement(Check& c) {
    const auto start = std::chrono::steady_clock::now();
    c.near(stats::pabak(0.874), 0.748, kExact, "pabak(0.874)");
    c.near(stats::pabak(0.919), 0.838, kExact, "pabak(0.919)");

    Rng rng(101);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t n = 2 + rng.below(9);
        const std::size_t k = 2 + rng.below(3);
        std::vector<int> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = static_cast<int>(rng.below(k));
            b[i] = static_cast<int>(rng.below(k));
        }
        const auto r = stats::cohen_kappa(stats::agreement_table(a, b, k));
        if (r.degenerate) continue;
        c.near(r.kappa, oracle::cohen_kappa_pairs(a, b), kOracle, "kappa trial " + std::to_string(trial));
    }
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t units = 2 + rng.below(9);
        const std::size_t coders = 2 + rng.below(3);
        std::vector<std::vector<std::optional<int>>> labels(units, std::vector<std::optional<int>>(coders));
        for (auto& u : labels)
            for (auto& v : u)
                if (rng.below(5) != 0) v = static_cast<int>(rng.below(3));
        std::set<int> seen;
        for (const auto& u : labels) {
            int present = 0;
            for (const auto& v : u) present += v.has_value();
            if (present < 2) continue;
            for (const auto& v : u)
                if (v) seen.insert(*v);
        }
        if (seen.size() < 2) continue;
        c.near(stats::krippendorff_alpha_nominal(labels), oracle::krippendorff_pairs(labels), kOracle,
               "alpha trial " + std::to_string(trial));
    }
    const double elapsed = seconds_since(start);
    c.expect(elapsed < kAgreementSeconds, "runtime " + std::to_string(elapsed) + " s");
}

void weighted_validation(Check& c) {
    const auto hh = distribution_weighted(
        {{"0.55-0.65", 0.757, 0.85, 1.00, 0.77, 0.87}, {">=0.65", 0.243, 0.80, 0.92, 0.80, 0.86}});
    c.near(hh.accuracy, 0.838, kTableTolerance, "human-human accuracy");
    c.near(hh.precision, 0.981, kTableTolerance, "human-human precision");
    c.near(hh.recall, 0.777, kTableTolerance, "human-human recall");
    c.near(hh.f1, 0.868, kTableTolerance, "human-human f1");

    const auto hl = distribution_weighted({{"0.45-0.55", 0.753, 1.00, 1.00, 1.00, 1.00},
                                           {"0.55-0.65", 0.210, 0.70, 0.67, 0.50, 0.57},
                                           {">=0.65", 0.038, 0.85, 0.92, 0.85, 0.88}},
                                          kTableWeightTolerance);
    c.near(hl.accuracy, 0.932, kTableTolerance, "human-model accuracy");
    c.near(hl.precision, 0.929, kTableTolerance, "human-model precision");
    c.near(hl.recall, 0.890, kTableTolerance, "human-model recall");
    c.near(hl.f1, 0.906, kTableTolerance, "human-model f1");
}

void calibration(Check& c) {
    const StratumTable strata;
    const std::vector<std::optional<double>> hh = {0.00, 0.00, 0.00, 0.00, 0.05, 0.65, 0.75};
    const std::vector<std::optional<double>> hl = {0.00, 0.00, 0.00, 0.05, 0.10, 0.40, 0.65};
    c.expect(calibrate_from_rates(hh, strata) == 0.55, "human-human threshold is not exactly 0.55");
    c.expect(calibrate_from_rates(hl, strata) == 0.45, "human-model threshold is not exactly 0.45");
}

void worked_example(Check& c) {
    const auto dir = staged("consensus");
    Pipeline p(load_config(dir / "config.json"));
    const auto report = p.run("consensus-eval");
    const auto* sets = report.find("consensus_sets");
    c.expect(sets && sets->rows.size() == 1 && sets->rows[0][1] == "h1 h3 h5", "consensus set is not {h1, h3, h5}");

    const auto* summary = report.find("consensus_eval");
    c.expect(summary && !summary->rows.empty(), "consensus_eval table missing");
    if (summary && !summary->rows.empty()) {
        const auto& row = summary->rows[0];
        c.near(std::stod(row[1]), 0.250, kTableTolerance, "precision");
        c.near(std::stod(row[2]), 2.0 / 3.0, kTableTolerance, "recall");
        c.near(std::stod(row[3]), 0.364, kTableTolerance, "f1");
    }

    const std::string names[] = {"report.json", "report.csv", "report.md"};
    std::vector<std::string> first;
    for (const auto& n : names) first.push_back(read_file(p.run_dir() / n));
    auto same = [&](const std::string& when) {
        for (std::size_t i = 0; i < 3; ++i) {
            c.expect(read_file(p.run_dir() / names[i]) == first[i], names[i] + " changed after " + when);
        }
    };
    p.run("report");
    same("report");
    Pipeline again(load_config(dir / "config.json"));
    c.expect(again.run_dir() == p.run_dir(), "rerun resolved a different run directory");
    again.run("consensus-eval");
    same("a rerun");
}

void metric_oracle(Check& c) {
    Rng rng(31337);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t members = 1 + rng.below(8);
        const std::size_t model = 1 + rng.below(8);
        ConsensusSet consensus;
        consensus.paper_id = "p";
        for (std::size_t i = 0; i < members; ++i) consensus.members.insert("h" + std::to_string(i));
        std::vector<std::string> ids;
        for (std::size_t j = 0; j < model; ++j) ids.push_back("m" + std::to_string(j));
        std::vector<std::vector<bool>> adj(members, std::vector<bool>(model, false));
        std::vector<MatchEdge> edges;
        for (std::size_t i = 0; i < members; ++i) {
            for (std::size_t j = 0; j < model; ++j) {
                if (rng.below(3)) continue;
                const bool judged = rng.below(2) == 0;
                adj[i][j] = adj[i][j] || judged;
                edges.push_back(MatchEdge{"h" + std::to_string(i), "m" + std::to_string(j), PairType::human_model,
                                          0.9, judged, std::nullopt});
            }
        }
        const auto want = oracle::score_by_enumeration(members, model, adj);
        const auto got = score_model(consensus, ids, edges);
        const auto t = "trial " + std::to_string(trial);
        c.expect(got.counts.matched_model == want.matched_model, t + ": matched model units");
        c.expect(got.counts.matched_consensus == want.matched_consensus, t + ": matched consensus units");
        c.expect(got.counts.model_total == model && got.counts.consensus_total == members, t + ": totals");
        const double precision = static_cast<double>(want.matched_model) / static_cast<double>(model);
        const double recall = static_cast<double>(want.matched_consensus) / static_cast<double>(members);
        const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
        c.expect(got.metrics.precision == precision && got.metrics.recall == recall, t + ": precision/recall");
        c.near(got.metrics.f1, f1, kExact, t + ": f1");
    }
}

std::vector<std::vector<UnitAssessment>> random_assessments(Rng& rng, std::size_t papers, std::size_t max_units) {
    std::vector<std::vector<UnitAssessment>> out(papers);
    std::size_t id = 0;
    for (auto& p : out) {
        const auto n = 1 + rng.below(max_units);
        for (std::uint64_t i = 0; i < n; ++i) {
            UnitAssessment u;
            u.unit_id = "u" + std::to_string(id++);
            u.passes_quality = rng.below(4) != 0;
            u.validity = kAllValidity[rng.below(std::size(kAllValidity))];
            u.action = kAllActions[rng.below(std::size(kAllActions))];
            p.push_back(u);
        }
    }
    return out;
}

void bootstrap(Check& c) {
    Rng rng(6);
    const auto small = random_assessments(rng, 40, 5);
    std::vector<UnitAssessment> flat;
    for (const auto& p : small) flat.insert(flat.end(), p.begin(), p.end());
    const auto identity = bootstrap_eval(small, 5, 200, 1);
    for (auto mode : kAllModes) {
        const auto& s = identity.modes.at(mode);
        const auto m = std::string(to_string(mode));
        c.expect(s.ci.half_width() == 0.0, m + ": half-width is not 0 with at most k units per paper");
        c.near(s.mean, success_rate(flat, mode), kExact, m + ": identity mean");
    }

    const auto seeded = random_assessments(rng, 60, 12);
    const auto a = bootstrap_eval(seeded, 3, 300, 42);
    const auto b = bootstrap_eval(seeded, 3, 300, 42);
    for (auto mode : kAllModes) {
        c.expect(a.modes.at(mode).ci == b.modes.at(mode).ci, "same seed gave different intervals");
    }

    for (int trial = 0; trial < 100; ++trial) {
        const auto corpus = random_assessments(rng, 1 + rng.below(8), 6);
        const std::size_t k = 1 + rng.below(5);
        const auto result = bootstrap_eval(corpus, k, 50, trial);
        for (auto mode : kAllModes) {
            std::vector<std::vector<bool>> bits;
            for (const auto& p : corpus) {
                auto& row = bits.emplace_back();
                for (const auto& u : p) row.push_back(unit_success(u, mode));
            }
            c.near(result.modes.at(mode).mean, oracle::subset_expectation(bits, k), kExact,
                   "subset expectation trial " + std::to_string(trial));
        }
    }

    const auto large = random_assessments(rng, 1000, 20);
    const auto start = std::chrono::steady_clock::now();
    const auto r = bootstrap_eval(large, 5, 1000, 2026);
    const double elapsed = seconds_since(start);
    c.expect(r.papers == 1000, "large corpus paper count");
    c.expect(elapsed < kBootstrapSeconds, "B = 1000 over 1000 papers took " + std::to_string(elapsed) + " s");
}

// Keep rule restated from its definition, independent of keep_variant.
bool keep_rule(const CorruptionVariant& v) {
    if (!v.verification) return false;
    const auto& x = *v.verification;
    return to_string(x.predicted) == to_string(v.dimension) && x.target_degradation >= 2 &&
           x.collateral_preservation >= 2;
}

void forge_rules(Check& c) {
    Rng rng(77);
    std::size_t real_pairs = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const auto paper = "P" + std::to_string(trial);
        const std::size_t n = 1 + rng.below(16);
        const std::size_t dim = 2 + rng.below(6);
        std::vector<FeedbackUnit> units;
        std::vector<Vector> vectors;
        for (std::size_t i = 0; i < n; ++i) {
            units.push_back(make_unit(paper, "R" + std::to_string(i % 4), paper + " point " + std::to_string(i),
                                      rng.below(2) == 0));
            Vector v(dim);
            for (auto& x : v) x = rng.unit() * 2.0 - 1.0;
            normalize_l2(v);
            vectors.push_back(v);
        }
        const auto kept = dedup_units(units, vectors, 0.5, trial);
        std::vector<std::size_t> idx;
        for (const auto& k : kept)
            for (std::size_t i = 0; i < n; ++i)
                if (units[i].id == k.id) idx.push_back(i);
        for (std::size_t x = 0; x < idx.size(); ++x)
            for (std::size_t y = x + 1; y < idx.size(); ++y)
                c.expect(cosine(vectors[idx[x]], vectors[idx[y]]) <= 0.5,
                         "trial " + std::to_string(trial) + ": survivors above cosine 0.5");

        DpoOptions options;
        options.set_size = 1 + rng.below(6);
        options.pairs_per_paper = 1 + rng.below(3);
        options.mode = rng.below(2) ? ChosenMode::literal : ChosenMode::all_successful;
        for (const auto& pair : real_label_pairs(paper, kept, options, trial)) {
            ++real_pairs;
            int chosen = 0, rejected = 0;
            for (const auto& u : kept) {
                for (const auto& id : pair.chosen_ids) chosen += u.id == id && u.successful();
                for (const auto& id : pair.rejected_ids) rejected += u.id == id && u.successful();
            }
            c.expect(chosen - rejected >= 2, "trial " + std::to_string(trial) + ": success delta below 2");
        }
    }
    c.expect(real_pairs > 50, "too few real-label pairs emitted to exercise the delta rule");

    auto backend = std::make_shared<scripted::CorruptionJudge>(5);
    JudgeClient judge(EndpointConfig{}, backend, std::make_shared<ResponseCache>());
    std::size_t judged = 0, kept_total = 0;
    for (int p = 0; p < 60; ++p) {
        const auto paper = make_paper("C" + std::to_string(p));
        const auto unit = make_unit(paper.paper_id, "R1", "claim " + std::to_string(p), true);
        const auto result = verify_and_filter(judge, unit, paper, corrupt(judge, unit, paper), 17 + p);
        std::vector<CorruptionVariant> expected;
        for (const auto& v : result.judged)
            if (keep_rule(v)) expected.push_back(v);
        c.expect(result.kept == expected, "verify_and_filter keep-set differs from the rule");
        c.expect(filter_variants(result.judged) == expected, "filter_variants differs from the rule");
        judged += result.judged.size();
        kept_total += result.kept.size();
    }
    c.expect(kept_total > 0 && kept_total < judged, "scripted verdicts did not exercise both outcomes");
}

void significance(Check& c) {
    for (std::uint64_t a = 0; a <= 12; ++a)
        for (std::uint64_t b = 0; a + b <= 12; ++b)
            for (std::uint64_t cc = 0; a + b + cc <= 12; ++cc)
                for (std::uint64_t d = 0; a + b + cc + d <= 12; ++d) {
                    if (a + b + cc + d == 0) continue;
                    c.near(stats::fisher_exact_two_sided({{a, b}, {cc, d}}), oracle::fisher_enumeration(a, b, cc, d),
                           kOracle, "fisher table");
                }

    Rng rng(400);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<double> x(1 + rng.below(7)), y(1 + rng.below(7));
        for (auto& v : x) v = double(1 + rng.below(5));
        for (auto& v : y) v = double(1 + rng.below(5));
        const auto r = stats::mann_whitney_u(x, y);
        const auto o = oracle::mann_whitney_enumeration(x, y);
        c.expect(r.exact, "small sample did not use the exact distribution");
        c.near(r.u, o.u, kExact, "U by enumeration");
        c.near(r.p, o.p, kOracle, "p by enumeration");
    }
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n1 = 1 + rng.below(20);
        const std::size_t n2 = 1 + rng.below(std::min<std::size_t>(20, 400 / n1));
        std::vector<double> x(n1), y(n2);
        const std::uint64_t levels = 2 + rng.below(30);
        for (auto& v : x) v = double(rng.below(levels));
        for (auto& v : y) v = double(rng.below(levels));
        const auto r = stats::mann_whitney_u(x, y);
        const auto o = oracle::mann_whitney_split_count(x, y);
        c.expect(r.exact, "n1*n2 <= 400 did not use the exact distribution");
        c.near(r.u, o.u, kExact, "U by split counting");
        c.near(r.p, o.p, kOracle, "p by split counting");
    }
    for (std::size_t n : {1, 3, 10, 20, 50}) {
        std::vector<double> same(n);
        for (std::size_t i = 0; i < n; ++i) same[i] = double(i % 5);
        const auto r = stats::mann_whitney_u(same, same);
        c.near(r.u, double(n * n) / 2.0, kExact, "U of identical samples");
        c.near(r.p, 1.0, kOracle, "p of identical samples");
    }
}

void success_algebra(Check& c) {
    int cases = 0, successes = 0;
    for (auto v : kAllValidity) {
        for (auto a : kAllActions) {
            const bool want = v == Validity::agreed &&
                              (a == AuthorAction::will_revise || a == AuthorAction::defer_future_work);
            const bool got = success_indicator(v, a);
            c.expect(got == want, "indicator " + std::string(to_string(v)) + "/" + std::string(to_string(a)));
            ++cases;
            successes += got;
        }
    }
    c.expect(cases == 21, "grid has " + std::to_string(cases) + " cases");
    c.expect(successes == 2, "grid has " + std::to_string(successes) + " successes");

    Rng rng(404);
    for (int trial = 0; trial < 2000; ++trial) {
        auto corpus = random_assessments(rng, 1, 30);
        const auto& units = corpus.front();
        for (bool filter : {true, false}) {
            const double combined = success_rate(units, SuccessMode::combined, filter);
            const double validity = success_rate(units, SuccessMode::validity_only, filter);
            const double action = success_rate(units, SuccessMode::action_only, filter);
            c.expect(combined <= std::min(validity, action), "combined rate exceeds a single condition");
        }
    }
}

void hermeticity(Check& c) {
    const char* keys[] = {"OPENAI_API_KEY", "ANTHROPIC_API_KEY", "AZURE_OPENAI_API_KEY"};
    for (const char* k : keys) unsetenv(k);

    const std::vector<std::pair<std::string, std::vector<std::string>>> runs = {
        {"forge", {"ingest", "parse", "forge-sft", "forge-dpo", "report"}},
        {"consensus", {"ingest", "consensus-eval", "success-eval", "report"}},
        {"calibration", {"calibrate", "report"}},
    };
    for (const auto& [fixture, commands] : runs) {
        const auto dir = staged(fixture);
        for (const auto& command : commands) {
            try {
                Pipeline(load_config(dir / "config.json")).run(command);
            } catch (const std::exception& e) {
                c.expect(false, fixture + " " + command + ": " + e.what());
            }
        }
    }

    // Live mode refuses to start without keys or endpoints.
    const auto dir = staged("consensus");
    auto doc = json::parse(read_file(dir / "config.json"));
    doc["mode"] = "live";
    auto bare = PipelineConfig::from_json(doc, dir);
    bool missing_endpoint = false;
    for (const auto& p : bare.problems("consensus-eval"))
        missing_endpoint = missing_endpoint || p.find("no endpoint bound") != std::string::npos;
    c.expect(missing_endpoint, "live mode without endpoints was accepted");

    doc["endpoints"] = {{"match", "gpt-5.2-match"}, {"embed", "text-embedding-3-small"}};
    auto keyed = PipelineConfig::from_json(doc, dir);
    bool missing_key = false;
    for (const auto& p : keyed.problems("consensus-eval"))
        missing_key = missing_key || p.find("OPENAI_API_KEY is not set") != std::string::npos;
    c.expect(missing_key, "live mode without an API key was accepted");
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria = {
        {"Agreement math: PABAK rows exact, kappa and alpha match oracles, under 1 s", agreement},
        {"Distribution-weighted validation reproduces both weighted rows within 0.001", weighted_validation},
        {"Threshold calibration yields 0.55 and 0.45 exactly", calibration},
        {"Worked example end to end in stub mode with stable report bytes", worked_example},
        {"score_model equals exhaustive enumeration on 1000 random instances", metric_oracle},
        {"Bootstrap identity, determinism, subset expectation and scale", bootstrap},
        {"Forge rules: success delta, dedup cosine bound, corruption keep-set", forge_rules},
        {"Significance tests match enumeration oracles", significance},
        {"Success-rate algebra and the 21-case indicator grid", success_algebra},
        {"Hermeticity: stub runs need no network or API keys", hermeticity},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Check c;
        const auto start = std::chrono::steady_clock::now();
        try {
            criteria[i].second(c);
        } catch (const std::exception& e) {
            c.expect(false, std::string("exception: ") + e.what());
        }
        std::printf("[%s] %zu. %s (%zu checks, %.2f s)\n", c.ok() ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                    c.checks(), seconds_since(start));
        for (const auto& f : c.failures()) std::printf("       %s\n", f.c_str());
        if (c.failed() > c.failures().size()) std::printf("       ... %zu more\n", c.failed() - c.failures().size());
        failed += !c.ok();
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
    return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
