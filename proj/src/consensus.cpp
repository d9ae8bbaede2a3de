#include "fbeval/consensus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <tuple>

#include "fbeval/error.hpp"
#include "fbeval/rng.hpp"

namespace fbeval {

std::string_view to_string(PairType t) { return t == PairType::human_human ? "human_human" : "human_model"; }

PairType parse_pair_type(std::string_view s) {
    if (s == "human_human") return PairType::human_human;
    if (s == "human_model") return PairType::human_model;
    throw InvalidArgument("unknown pair type '" + std::string(s) + "'");
}

void to_json(json& j, const MatchEdge& e) {
    j = json{{"left_unit_id", e.left_unit_id},
             {"right_unit_id", e.right_unit_id},
             {"pair_type", to_string(e.pair_type)},
             {"cosine", e.cosine}};
    if (e.judged) j["judged"] = *e.judged;
    if (e.explanation) j["explanation"] = *e.explanation;
}

void from_json(const json& j, MatchEdge& e) {
    e = MatchEdge{};
    e.left_unit_id = j.at("left_unit_id").get<std::string>();
    e.right_unit_id = j.at("right_unit_id").get<std::string>();
    e.pair_type = parse_pair_type(j.at("pair_type").get<std::string>());
    e.cosine = j.at("cosine").get<double>();
    if (auto it = j.find("judged"); it != j.end() && !it->is_null()) e.judged = it->get<bool>();
    if (auto it = j.find("explanation"); it != j.end() && !it->is_null()) e.explanation = it->get<std::string>();
}

// ---------------------------------------------------------------------------
// Strata and calibration

std::size_t StratumTable::stratum_of(double cosine) const {
    return static_cast<std::size_t>(std::upper_bound(boundaries.begin(), boundaries.end(), cosine) - boundaries.begin());
}

double StratumTable::lower_bound(std::size_t stratum) const {
    if (stratum >= size()) throw InvalidArgument("stratum index out of range");
    return stratum == 0 ? -1.0 : boundaries[stratum - 1];
}

namespace {

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

std::string StratumTable::label(std::size_t stratum) const {
    if (stratum >= size()) throw InvalidArgument("stratum index out of range");
    if (boundaries.empty()) return "all";
    if (stratum == 0) return "<" + fmt2(boundaries.front());
    if (stratum == size() - 1) return ">=" + fmt2(boundaries.back());
    return fmt2(boundaries[stratum - 1]) + "-" + fmt2(boundaries[stratum]);
}

void StratumTable::validate() const {
    for (std::size_t i = 0; i < boundaries.size(); ++i) {
        if (!(boundaries[i] > -1.0 && boundaries[i] <= 1.0)) throw ConfigError("stratum boundary outside (-1, 1]");
        if (i && boundaries[i] <= boundaries[i - 1]) throw ConfigError("stratum boundaries must be strictly increasing");
    }
}

std::vector<StratumRate> stratum_rates(const std::vector<AnnotatedPair>& pairs, const StratumTable& strata) {
    strata.validate();
    std::vector<StratumRate> out(strata.size());
    for (const auto& p : pairs) {
        auto& r = out[strata.stratum_of(p.cosine)];
        ++r.annotated;
        r.matches += p.match ? 1 : 0;
    }
    return out;
}

double calibrate_from_rates(const std::vector<std::optional<double>>& rates, const StratumTable& strata,
                            double cutoff) {
    strata.validate();
    if (rates.size() != strata.size()) throw InvalidArgument("one match rate per stratum is required");
    for (std::size_t s = 0; s < rates.size(); ++s) {
        if (!rates[s] || *rates[s] < cutoff) continue;
        for (std::size_t above = s + 1; above < rates.size(); ++above) {
            if (!rates[above]) throw InvalidArgument("no usable threshold: stratum " + strata.label(above) + " has no annotated pairs");
        }
        return strata.lower_bound(s);
    }
    throw InvalidArgument("no usable threshold: no stratum reaches match rate " + fmt2(cutoff));
}

double calibrate_threshold(const std::vector<AnnotatedPair>& pairs, const StratumTable& strata, double cutoff) {
    std::vector<std::optional<double>> rates;
    for (const auto& r : stratum_rates(pairs, strata)) rates.push_back(r.rate());
    return calibrate_from_rates(rates, strata, cutoff);
}

// ---------------------------------------------------------------------------
// Prefilter and judging

std::vector<MatchEdge> prefilter_human_pairs(const std::vector<FeedbackUnit>& units, const std::vector<Vector>& vectors,
                                             double threshold) {
    if (units.size() != vectors.size()) throw InvalidArgument("prefilter needs one embedding per unit");
    std::vector<std::size_t> order(units.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return units[a].id < units[b].id; });
    std::vector<MatchEdge> out;
    for (std::size_t x = 0; x < order.size(); ++x) {
        for (std::size_t y = x + 1; y < order.size(); ++y) {
            const auto& a = units[order[x]];
            const auto& b = units[order[y]];
            if (a.reviewer_id == b.reviewer_id) continue;
            const double c = cosine(vectors[order[x]], vectors[order[y]]);
            if (c >= threshold) out.push_back(MatchEdge{a.id, b.id, PairType::human_human, c, std::nullopt, std::nullopt});
        }
    }
    return out;
}

std::vector<MatchEdge> prefilter_model_pairs(const std::vector<FeedbackUnit>& human,
                                             const std::vector<Vector>& human_vectors,
                                             const std::vector<FeedbackUnit>& model,
                                             const std::vector<Vector>& model_vectors, double threshold) {
    if (human.size() != human_vectors.size() || model.size() != model_vectors.size()) {
        throw InvalidArgument("prefilter needs one embedding per unit");
    }
    std::vector<MatchEdge> out;
    for (std::size_t i = 0; i < human.size(); ++i) {
        for (std::size_t j = 0; j < model.size(); ++j) {
            const double c = cosine(human_vectors[i], model_vectors[j]);
            if (c >= threshold) {
                out.push_back(MatchEdge{human[i].id, model[j].id, PairType::human_model, c, std::nullopt, std::nullopt});
            }
        }
    }
    std::sort(out.begin(), out.end(), [](const MatchEdge& a, const MatchEdge& b) {
        return std::tie(a.left_unit_id, a.right_unit_id) < std::tie(b.left_unit_id, b.right_unit_id);
    });
    return out;
}

bool parse_match_verdict(const json& parsed, std::string* explanation) {
    auto one = [&](const json& v) {
        if (explanation && v.contains("explanation") && v.at("explanation").is_string()) {
            if (!explanation->empty()) *explanation += " ";
            *explanation += v.at("explanation").get<std::string>();
        }
        return v.at("match").get<std::string>() == "1";
    };
    if (parsed.is_array()) {
        bool any = false;
        for (const auto& v : parsed) any = one(v) || any;
        return any;
    }
    return one(parsed);
}

MatchEdge judge_match(JudgeClient& judge, MatchEdge edge, const std::string& abstract, const std::string& left_text,
                      const std::string& right_text) {
    const auto& tmpl = PromptRegistry::builtin().get("match_feedback");
    const auto response =
        judge.complete(tmpl, {{"abstract", abstract}, {"feedback1", left_text}, {"feedback2", right_text}});
    std::string explanation;
    edge.judged = parse_match_verdict(response.parsed, &explanation);
    edge.explanation = explanation;
    return edge;
}

// ---------------------------------------------------------------------------
// Consensus and scoring

ConsensusSet build_consensus(const PaperRecord& paper, const std::vector<MatchEdge>& human_edges,
                             const ConsensusOptions& options) {
    std::map<std::string, const FeedbackUnit*> human;
    for (const auto& u : paper.units) {
        if (u.source == Source::human) human[u.id] = &u;
    }
    ConsensusSet out;
    out.paper_id = paper.paper_id;
    std::vector<std::pair<std::string, std::string>> true_edges;
    for (const auto& e : human_edges) {
        if (e.pair_type != PairType::human_human || !e.judged.value_or(false)) continue;
        auto a = human.find(e.left_unit_id);
        auto b = human.find(e.right_unit_id);
        if (a == human.end() || b == human.end()) continue;
        if (a->second->reviewer_id == b->second->reviewer_id) continue;
        const bool a_ok = a->second->successful();
        const bool b_ok = b->second->successful();
        if (a_ok && (!options.require_partner_success || b_ok)) out.members.insert(a->first);
        if (b_ok && (!options.require_partner_success || a_ok)) out.members.insert(b->first);
        true_edges.emplace_back(a->first, b->first);
    }

    std::map<std::string, std::string> parent;
    for (const auto& m : out.members) parent[m] = m;
    std::function<std::string(const std::string&)> find = [&](const std::string& x) -> std::string {
        if (parent[x] == x) return x;
        return parent[x] = find(parent[x]);
    };
    for (const auto& [a, b] : true_edges) {
        if (!out.members.contains(a) || !out.members.contains(b)) continue;
        auto ra = find(a), rb = find(b);
        if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
    }
    std::map<std::string, std::set<std::string>> groups;
    for (const auto& m : out.members) groups[find(m)].insert(m);
    for (auto& [_, g] : groups) out.clusters.push_back(std::move(g));
    return out;
}

MatchCounts& MatchCounts::operator+=(const MatchCounts& o) {
    matched_model += o.matched_model;
    model_total += o.model_total;
    matched_consensus += o.matched_consensus;
    consensus_total += o.consensus_total;
    return *this;
}

Prf prf_from_counts(const MatchCounts& c) {
    Prf m;
    m.precision = c.model_total ? static_cast<double>(c.matched_model) / static_cast<double>(c.model_total) : 0.0;
    m.recall = c.consensus_total ? static_cast<double>(c.matched_consensus) / static_cast<double>(c.consensus_total) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

MatchScore score_model(const ConsensusSet& consensus, const std::vector<std::string>& model_unit_ids,
                       const std::vector<MatchEdge>& model_edges, bool cluster_level) {
    if (consensus.members.empty()) {
        throw InvalidArgument("paper " + consensus.paper_id + " has no consensus feedback to score against");
    }
    const std::set<std::string> model(model_unit_ids.begin(), model_unit_ids.end());
    MatchScore s;
    for (const auto& e : model_edges) {
        if (e.pair_type != PairType::human_model || !e.judged.value_or(false)) continue;
        if (!consensus.members.contains(e.left_unit_id) || !model.contains(e.right_unit_id)) continue;
        s.matched_model_units.insert(e.right_unit_id);
        s.matched_consensus_units.insert(e.left_unit_id);
    }
    s.counts.matched_model = s.matched_model_units.size();
    s.counts.model_total = model.size();
    if (cluster_level) {
        s.counts.consensus_total = consensus.clusters.size();
        for (const auto& c : consensus.clusters) {
            const bool hit = std::any_of(c.begin(), c.end(),
                                         [&](const std::string& id) { return s.matched_consensus_units.contains(id); });
            s.counts.matched_consensus += hit ? 1 : 0;
        }
    } else {
        s.counts.consensus_total = consensus.members.size();
        s.counts.matched_consensus = s.matched_consensus_units.size();
    }
    s.metrics = prf_from_counts(s.counts);
    return s;
}

StratumMetrics distribution_weighted(const std::vector<StratumMetrics>& strata, double weight_tolerance) {
    if (strata.empty()) throw InvalidArgument("distribution weighting needs at least one stratum");
    StratumMetrics out;
    out.label = "distribution_weighted";
    for (const auto& s : strata) {
        if (s.weight < 0) throw InvalidArgument("stratum " + s.label + " has a negative weight");
        out.weight += s.weight;
        out.accuracy += s.weight * s.accuracy;
        out.precision += s.weight * s.precision;
        out.recall += s.weight * s.recall;
        out.f1 += s.weight * s.f1;
    }
    if (std::abs(out.weight - 1.0) > weight_tolerance) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "stratum weights sum to %.6f, not 1", out.weight);
        throw InvalidArgument(buf);
    }
    return out;
}

std::vector<StratumMetrics> judge_validation(const std::vector<JudgedPair>& sample,
                                             const std::vector<double>& population, const StratumTable& strata,
                                             double threshold) {
    strata.validate();
    struct Tally {
        std::size_t tp = 0, fp = 0, fn = 0, tn = 0, population = 0;
    };
    std::vector<Tally> tally(strata.size());
    for (double c : population) {
        if (c >= threshold) ++tally[strata.stratum_of(c)].population;
    }
    for (const auto& p : sample) {
        if (p.cosine < threshold) continue;
        auto& t = tally[strata.stratum_of(p.cosine)];
        if (p.judged && p.human) ++t.tp;
        else if (p.judged) ++t.fp;
        else if (p.human) ++t.fn;
        else ++t.tn;
    }
    std::size_t total = 0;
    for (std::size_t s = 0; s < strata.size(); ++s) {
        if (strata.lower_bound(s) >= threshold) total += tally[s].population;
    }
    if (total == 0) throw InvalidArgument("no population pairs at or above the threshold");

    std::vector<StratumMetrics> out;
    for (std::size_t s = 0; s < strata.size(); ++s) {
        if (strata.lower_bound(s) < threshold) continue;
        const auto& t = tally[s];
        const std::size_t n = t.tp + t.fp + t.fn + t.tn;
        if (n == 0) throw InvalidArgument("stratum " + strata.label(s) + " has no validation pairs");
        StratumMetrics m;
        m.label = strata.label(s);
        m.weight = static_cast<double>(t.population) / static_cast<double>(total);
        m.accuracy = static_cast<double>(t.tp + t.tn) / static_cast<double>(n);
        m.precision = t.tp + t.fp ? static_cast<double>(t.tp) / static_cast<double>(t.tp + t.fp) : 0.0;
        m.recall = t.tp + t.fn ? static_cast<double>(t.tp) / static_cast<double>(t.tp + t.fn) : 0.0;
        m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
        out.push_back(m);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Novel / aligned decomposition

double Decomposition::aligned_rate() const { return total ? static_cast<double>(aligned) / total : 0.0; }
double Decomposition::novel_rate() const { return total ? static_cast<double>(novel) / total : 0.0; }

double Decomposition::rate(const std::string& aspect, bool want_aligned) const {
    auto it = per_aspect.find(aspect);
    if (it == per_aspect.end() || total == 0) return 0.0;
    return static_cast<double>(want_aligned ? it->second.aligned : it->second.novel) / total;
}

Decomposition decompose_novel_aligned(const std::vector<ModelUnitOutcome>& units) {
    Decomposition d;
    for (auto a : kAllAspects) d.per_aspect[std::string(to_string(a))];
    d.per_aspect[kNoAspect];
    for (const auto& u : units) {
        ++d.total;
        if (!u.successful) continue;
        (u.matched ? d.aligned : d.novel)++;
        auto bump = [&](const std::string& key) {
            auto& c = d.per_aspect[key];
            (u.matched ? c.aligned : c.novel)++;
        };
        if (u.aspects.empty()) bump(kNoAspect);
        for (auto a : u.aspects) bump(std::string(to_string(a)));
    }
    return d;
}

std::optional<double> relative_improvement(double candidate, double baseline) {
    if (baseline == 0.0) return std::nullopt;
    return (candidate - baseline) / baseline;
}

// ---------------------------------------------------------------------------
// Bootstrap

ConsensusEvalResult bootstrap_consensus(const std::vector<PaperEval>& papers, std::size_t k, std::size_t iterations,
                                        std::uint64_t seed, Averaging averaging, bool cluster_level) {
    if (iterations < 2) throw InvalidArgument("bootstrap needs at least 2 iterations");
    if (k == 0) throw InvalidArgument("subsample size k must be positive");
    ConsensusEvalResult result;
    std::vector<const PaperEval*> used;
    for (const auto& p : papers) {
        if (p.consensus.members.empty()) ++result.papers_excluded;
        else used.push_back(&p);
    }
    std::sort(used.begin(), used.end(), [](const PaperEval* a, const PaperEval* b) { return a->paper_id < b->paper_id; });
    result.papers_used = used.size();
    if (used.empty()) throw InvalidArgument("no paper has consensus feedback");

    std::vector<double> ps, rs, fs;
    ps.reserve(iterations);
    rs.reserve(iterations);
    fs.reserve(iterations);
    std::vector<std::string> sample;
    for (std::size_t b = 0; b < iterations; ++b) {
        Rng rng(derive_seed(seed, b));
        MatchCounts pooled;
        Prf macro;
        for (const auto* p : used) {
            sample.clear();
            for (auto i : rng.sample_indices(p->model_unit_ids.size(), k)) sample.push_back(p->model_unit_ids[i]);
            const auto score = score_model(p->consensus, sample, p->model_edges, cluster_level);
            pooled += score.counts;
            macro.precision += score.metrics.precision;
            macro.recall += score.metrics.recall;
            macro.f1 += score.metrics.f1;
        }
        if (averaging == Averaging::micro) {
            const auto m = prf_from_counts(pooled);
            ps.push_back(m.precision);
            rs.push_back(m.recall);
            fs.push_back(m.f1);
        } else {
            const double n = static_cast<double>(used.size());
            ps.push_back(macro.precision / n);
            rs.push_back(macro.recall / n);
            fs.push_back(macro.f1 / n);
        }
    }
    result.precision = stats::summarize_draws(std::move(ps), seed);
    result.recall = stats::summarize_draws(std::move(rs), seed);
    result.f1 = stats::summarize_draws(std::move(fs), seed);
    return result;
}

}  // namespace fbeval
