#include <doctest.h>

#include <algorithm>

#include "fbeval/consensus.hpp"
#include "fbeval/error.hpp"
#include "fbeval/rng.hpp"
#include "oracles.hpp"
#include "synth.hpp"

using namespace fbeval;

namespace {

MatchEdge edge(const std::string& a, const std::string& b, PairType t, bool judged) {
    return MatchEdge{a, b, t, 0.9, judged, std::nullopt};
}

// Three reviewers, five human units, four model units; true human edges
// h1-h3 and h3-h5, true model edges h1-l3 and h5-l3.
struct WorkedExample {
    PaperRecord paper = synth::paper("worked", 2024, Decision::accepted, {"R1", "R2", "R3"});
    std::vector<MatchEdge> human_edges;
    std::vector<MatchEdge> model_edges;
    std::vector<std::string> model_ids = {"l1", "l2", "l3", "l4"};

    WorkedExample() {
        const std::vector<std::pair<std::string, std::string>> units = {
            {"h1", "R1"}, {"h2", "R1"}, {"h3", "R2"}, {"h4", "R2"}, {"h5", "R3"}};
        for (const auto& [id, reviewer] : units) {
            auto u = synth::unit("worked", reviewer, "text of " + id);
            u.id = id;
            paper.units.push_back(u);
        }
        human_edges = {edge("h1", "h3", PairType::human_human, true), edge("h3", "h5", PairType::human_human, true),
                       edge("h2", "h4", PairType::human_human, false)};
        for (const auto& h : {"h1", "h3", "h5"}) {
            for (const auto& l : model_ids) {
                const bool hit = l == std::string("l3") && h != std::string("h3");
                model_edges.push_back(edge(h, l, PairType::human_model, hit));
            }
        }
    }
};

}  // namespace

TEST_CASE("worked example: consensus and metrics") {
    WorkedExample f;
    const auto consensus = build_consensus(f.paper, f.human_edges);
    CHECK(consensus.members == std::set<std::string>{"h1", "h3", "h5"});
    CHECK(consensus.clusters.size() == 1);
    const auto s = score_model(consensus, f.model_ids, f.model_edges);
    CHECK(s.metrics.precision == doctest::Approx(0.25));
    CHECK(s.metrics.recall == doctest::Approx(2.0 / 3.0));
    CHECK(s.metrics.f1 == doctest::Approx(0.364).epsilon(0.001));
    CHECK(s.matched_model_units == std::set<std::string>{"l3"});

    // k exceeds every paper's unit count, so every draw is the full set.
    const auto r = bootstrap_consensus({PaperEval{"worked", consensus, f.model_ids, f.model_edges}}, 5, 100, 1);
    CHECK(r.precision.point_estimate == doctest::Approx(0.25));
    CHECK(r.recall.half_width() == 0.0);
    CHECK(r.f1.lower == r.f1.upper);
}

TEST_CASE("consensus edge cases") {
    SUBCASE("single reviewer paper has an empty set") {
        auto p = synth::paper("p", 2024, Decision::accepted, {"R1"});
        p.units = {synth::unit("p", "R1", "a"), synth::unit("p", "R1", "b")};
        const auto c = build_consensus(p, {edge(p.units[0].id, p.units[1].id, PairType::human_human, true)});
        CHECK(c.members.empty());
        CHECK_THROWS_AS(score_model(c, {}, {}), InvalidArgument);
    }
    SUBCASE("only the successful endpoint of a true edge qualifies") {
        auto p = synth::paper("p");
        p.units = {synth::unit("p", "R1", "a", true), synth::unit("p", "R2", "b", false)};
        const std::vector<MatchEdge> e = {edge(p.units[0].id, p.units[1].id, PairType::human_human, true)};
        CHECK(build_consensus(p, e).members == std::set<std::string>{p.units[0].id});
        ConsensusOptions strict;
        strict.require_partner_success = true;
        CHECK(build_consensus(p, e, strict).members.empty());
    }
    SUBCASE("no true model edges gives zero metrics") {
        WorkedExample f;
        const auto c = build_consensus(f.paper, f.human_edges);
        for (auto& e : f.model_edges) e.judged = false;
        const auto s = score_model(c, f.model_ids, f.model_edges);
        CHECK(s.metrics.precision == 0.0);
        CHECK(s.metrics.recall == 0.0);
        CHECK(s.metrics.f1 == 0.0);
    }
    SUBCASE("perfect one-to-one matching gives ones") {
        WorkedExample f;
        const auto c = build_consensus(f.paper, f.human_edges);
        const std::vector<MatchEdge> e = {edge("h1", "l1", PairType::human_model, true),
                                          edge("h3", "l2", PairType::human_model, true),
                                          edge("h5", "l3", PairType::human_model, true)};
        const auto s = score_model(c, {"l1", "l2", "l3"}, e);
        CHECK(s.metrics.precision == 1.0);
        CHECK(s.metrics.recall == 1.0);
        CHECK(s.metrics.f1 == 1.0);
    }
}

TEST_CASE("score_model equals dense enumeration on random instances") {
    Rng rng(31337);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t members = 1 + rng.below(8);
        const std::size_t model = 1 + rng.below(8);
        ConsensusSet c;
        c.paper_id = "p";
        for (std::size_t i = 0; i < members; ++i) c.members.insert("h" + std::to_string(i));
        std::vector<std::string> model_ids;
        for (std::size_t j = 0; j < model; ++j) model_ids.push_back("m" + std::to_string(j));
        std::vector<std::vector<bool>> adj(members, std::vector<bool>(model, false));
        std::vector<MatchEdge> edges;
        for (std::size_t i = 0; i < members; ++i) {
            for (std::size_t j = 0; j < model; ++j) {
                if (rng.below(3)) continue;
                const bool judged = rng.below(2) == 0;
                adj[i][j] = adj[i][j] || judged;
                edges.push_back(edge("h" + std::to_string(i), "m" + std::to_string(j), PairType::human_model, judged));
            }
        }
        // Noise the scorer must ignore: edges to units outside the set.
        edges.push_back(edge("h0", "outside", PairType::human_model, true));
        edges.push_back(edge("stranger", "m0", PairType::human_model, true));
        const auto expect = oracle::score_by_enumeration(members, model, adj);
        const auto s = score_model(c, model_ids, edges);
        CHECK(s.counts.matched_model == expect.matched_model);
        CHECK(s.counts.matched_consensus == expect.matched_consensus);
        CHECK(s.counts.model_total == model);
        CHECK(s.counts.consensus_total == members);

        // Monotonicity: one more true edge never lowers recall, one more
        // unmatched model unit never raises precision.
        auto more = edges;
        more.push_back(edge("h" + std::to_string(rng.below(members)), "m" + std::to_string(rng.below(model)),
                            PairType::human_model, true));
        CHECK(score_model(c, model_ids, more).metrics.recall >= s.metrics.recall);
        auto ids = model_ids;
        ids.push_back("idle");
        CHECK(score_model(c, ids, edges).metrics.precision <= s.metrics.precision);
    }
}

TEST_CASE("consensus is invariant under reviewer relabeling and unit reordering") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t reviewers = 1 + rng.below(4);
        std::vector<std::string> names;
        for (std::size_t r = 0; r < reviewers; ++r) names.push_back("R" + std::to_string(r));
        auto p = synth::paper("p", 2024, Decision::accepted, names);
        const std::size_t n = 1 + rng.below(8);
        for (std::size_t i = 0; i < n; ++i) {
            auto u = synth::unit("p", names[rng.below(reviewers)], "u" + std::to_string(i), rng.below(3) != 0);
            u.id = "u" + std::to_string(i);
            p.units.push_back(u);
        }
        std::vector<MatchEdge> edges;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (rng.below(3) == 0) edges.push_back(edge(p.units[i].id, p.units[j].id, PairType::human_human, rng.below(2)));
        const auto base = build_consensus(p, edges);

        auto q = p;
        std::map<std::string, std::string> rename;
        auto shuffled = names;
        rng.shuffle(shuffled);
        for (std::size_t r = 0; r < reviewers; ++r) rename[names[r]] = "X" + shuffled[r];
        for (auto& t : q.threads) t.reviewer_id = rename[t.reviewer_id];
        for (auto& u : q.units) u.reviewer_id = rename[u.reviewer_id];
        rng.shuffle(q.units);
        auto e2 = edges;
        rng.shuffle(e2);
        const auto other = build_consensus(q, e2);
        CHECK(other.members == base.members);
        CHECK(other.clusters == base.clusters);
    }
}

TEST_CASE("prefilter keeps pairs at or above the threshold across reviewers") {
    std::vector<FeedbackUnit> units = {synth::unit("p", "R1", "a"), synth::unit("p", "R2", "b"),
                                       synth::unit("p", "R1", "c")};
    const Vector x = {1, 0};
    const Vector y = {0.6, 0.8};
    const Vector z = {0.54, std::sqrt(1 - 0.54 * 0.54)};
    auto e = prefilter_human_pairs(units, {x, y, x}, 0.55);
    REQUIRE(e.size() == 2);  // (a,b) and (b,c); the same-reviewer pair (a,c) never forms
    for (const auto& m : e) CHECK(m.cosine == doctest::Approx(0.6));
    CHECK(prefilter_human_pairs(units, {x, z, x}, 0.55).empty());

    // Order independence.
    auto rev = units;
    std::reverse(rev.begin(), rev.end());
    CHECK(prefilter_human_pairs(rev, {x, y, x}, 0.55) == e);

    const auto m = prefilter_model_pairs({units[0]}, {x}, {units[1], units[2]}, {y, z}, 0.55);
    REQUIRE(m.size() == 1);
    CHECK(m[0].right_unit_id == units[1].id);
}

TEST_CASE("match verdicts from objects and arrays") {
    std::string why;
    CHECK(parse_match_verdict(json{{"match", "1"}, {"explanation", "same notation issue"}}, &why));
    CHECK(why == "same notation issue");
    CHECK_FALSE(parse_match_verdict(json::array({{{"match", "0"}}, {{"match", "0"}}})));
    CHECK(parse_match_verdict(json::array({{{"match", "0"}}, {{"match", "1"}}})));

    json fixture = {{"templates",
                     {{"match_feedback",
                       {{"cases", {{{"when", {{"feedback1", "Notation in section 2 is undefined."},
                                             {"feedback2", "Section 2 never defines its symbols."}}},
                                    {"unordered", {"feedback1", "feedback2"}},
                                    {"response", {{{"match", "1"}, {"explanation", "same gap"}}}}}}},
                        {"default", {{{"match", "0"}, {"explanation", "praise versus criticism"}}}}}}}}};
    JudgeClient judge(EndpointConfig{}, std::make_shared<StubBackend>(fixture), std::make_shared<ResponseCache>());
    MatchEdge e{"a", "b", PairType::human_human, 0.7, std::nullopt, std::nullopt};
    CHECK(judge_match(judge, e, "abs", "Section 2 never defines its symbols.", "Notation in section 2 is undefined.")
              .judged == true);
    CHECK(judge_match(judge, e, "abs", "Section 2 is clearly written.", "Notation in section 2 is undefined.")
              .judged == false);
}

TEST_CASE("calibration from annotated match rates") {
    const StratumTable strata;
    const std::vector<std::optional<double>> hh = {0.00, 0.00, 0.00, 0.00, 0.05, 0.65, 0.75};
    const std::vector<std::optional<double>> hl = {0.00, 0.00, 0.00, 0.05, 0.10, 0.40, 0.65};
    CHECK(calibrate_from_rates(hh, strata) == 0.55);
    CHECK(calibrate_from_rates(hl, strata) == 0.45);
    CHECK(calibrate_from_rates(std::vector<std::optional<double>>(7, 0.5), strata) == -1.0);
    CHECK_THROWS_WITH_AS(calibrate_from_rates(std::vector<std::optional<double>>(7, 0.0), strata),
                         doctest::Contains("no usable threshold"), InvalidArgument);
    auto gap = hh;
    gap[6].reset();
    CHECK_THROWS_WITH_AS(calibrate_from_rates(gap, strata), doctest::Contains("no usable threshold"), InvalidArgument);

    // Same result from 20 annotated pairs per stratum.
    std::vector<AnnotatedPair> pairs;
    const double mid[] = {0.0, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8};
    for (std::size_t s = 0; s < 7; ++s) {
        const int matches = static_cast<int>(*hl[s] * 20 + 0.5);
        for (int i = 0; i < 20; ++i) pairs.push_back({mid[s], i < matches});
    }
    CHECK(calibrate_threshold(pairs, strata) == 0.45);
    const auto rates = stratum_rates(pairs, strata);
    CHECK(rates[4].rate() == 0.1);

    CHECK(strata.stratum_of(0.55) == 5);
    CHECK(strata.stratum_of(0.5499) == 4);
    CHECK(strata.label(0) == "<0.15");
    CHECK(strata.label(6) == ">=0.65");
    StratumTable bad;
    bad.boundaries = {0.3, 0.2};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("distribution-weighted validation rows") {
    const auto a = distribution_weighted(
        {{"0.55-0.65", 0.757, 0.85, 1.00, 0.77, 0.87}, {">=0.65", 0.243, 0.80, 0.92, 0.80, 0.86}});
    CHECK(a.accuracy == doctest::Approx(0.838).epsilon(0.001));
    CHECK(a.precision == doctest::Approx(0.981).epsilon(0.001));
    CHECK(a.f1 == doctest::Approx(0.868).epsilon(0.001));
    const auto one = distribution_weighted({{"only", 1.0, 0.5, 0.6, 0.7, 0.8}});
    CHECK(one.recall == 0.7);
    CHECK_THROWS_AS(distribution_weighted({{"x", 0.9, 1, 1, 1, 1}}), InvalidArgument);

    // Weights from a population histogram, metrics from the judged sample.
    const StratumTable strata;
    std::vector<JudgedPair> sample = {{0.6, true, true}, {0.6, false, true}, {0.6, false, false}, {0.6, true, false},
                                      {0.7, true, true}, {0.7, true, true},  {0.3, true, true}};
    const std::vector<double> population = {0.56, 0.58, 0.6, 0.9, 0.2, 0.1};
    const auto rows = judge_validation(sample, population, strata, 0.55);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].weight == doctest::Approx(0.75));
    CHECK(rows[0].accuracy == doctest::Approx(0.5));
    CHECK(rows[0].precision == doctest::Approx(0.5));
    CHECK(rows[1].f1 == doctest::Approx(1.0));
    const auto w = distribution_weighted(rows);
    CHECK(w.accuracy == doctest::Approx(0.75 * 0.5 + 0.25 * 1.0));
}

TEST_CASE("novel and aligned decomposition") {
    std::vector<ModelUnitOutcome> units = {
        {"a", true, true, {AspectTag::novelty}},
        {"b", false, true, {AspectTag::novelty, AspectTag::add_ablations}},
        {"c", false, true, {}},
        {"d", true, false, {AspectTag::novelty}},
    };
    const auto d = decompose_novel_aligned(units);
    CHECK(d.total == 4);
    CHECK(d.aligned == 1);
    CHECK(d.novel == 2);
    CHECK(d.aligned_rate() == 0.25);
    CHECK(d.novel_rate() == 0.5);
    CHECK(d.rate("novelty", true) == 0.25);
    CHECK(d.rate("novelty", false) == 0.25);
    CHECK(d.per_aspect.at(kNoAspect).novel == 1);
    CHECK(d.per_aspect.size() == 12);
    CHECK_FALSE(relative_improvement(0.1, 0.0).has_value());
    CHECK(*relative_improvement(0.3, 0.2) == doctest::Approx(0.5));
}

TEST_CASE("bootstrap consensus: determinism, exclusion and macro averaging") {
    WorkedExample f;
    const auto c = build_consensus(f.paper, f.human_edges);
    std::vector<PaperEval> papers = {PaperEval{"worked", c, f.model_ids, f.model_edges},
                                     PaperEval{"empty", ConsensusSet{"empty", {}, {}}, {"x"}, {}}};
    const auto a = bootstrap_consensus(papers, 2, 200, 9);
    const auto b = bootstrap_consensus(papers, 2, 200, 9);
    CHECK(a.precision == b.precision);
    CHECK(a.f1 == b.f1);
    CHECK(a.papers_used == 1);
    CHECK(a.papers_excluded == 1);
    // With two of four units drawn, l3 is in the sample half the time.
    CHECK(a.precision.point_estimate == doctest::Approx(0.25).epsilon(0.1));
    CHECK(a.precision.lower == 0.0);
    CHECK(a.precision.upper == 0.5);
    const auto m = bootstrap_consensus(papers, 5, 10, 9, Averaging::macro);
    CHECK(m.recall.point_estimate == doctest::Approx(2.0 / 3.0));
    CHECK_THROWS_AS(bootstrap_consensus(papers, 5, 1, 9), InvalidArgument);
}
