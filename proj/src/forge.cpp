#include "fbeval/forge.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "fbeval/error.hpp"
#include "fbeval/rng.hpp"

namespace fbeval {

std::string_view to_string(CorruptionDimension d) {
    switch (d) {
        case CorruptionDimension::generic: return "generic";
        case CorruptionDimension::vague: return "vague";
        case CorruptionDimension::inaccurate: return "inaccurate";
        case CorruptionDimension::nonessential: return "nonessential";
        case CorruptionDimension::unsupportive: return "unsupportive";
    }
    return "generic";
}

CorruptionDimension parse_corruption(std::string_view s) {
    for (auto d : kAllCorruptions) {
        if (to_string(d) == s) return d;
    }
    throw InvalidArgument("unknown corruption dimension '" + std::string(s) + "'");
}

std::string_view to_string(PairKind k) { return k == PairKind::real_label ? "real_label" : "corruption"; }

void to_json(json& j, const CorruptionVariant& v) {
    j = json{{"source_unit_id", v.source_unit_id},
             {"paper_id", v.paper_id},
             {"dimension", to_string(v.dimension)},
             {"text", v.text}};
    if (v.verification) {
        j["verification"] = {{"predicted_dimension", to_string(v.verification->predicted)},
                             {"target_degradation", v.verification->target_degradation},
                             {"collateral_preservation", v.verification->collateral_preservation},
                             {"reasoning", v.verification->reasoning}};
    }
}

void from_json(const json& j, CorruptionVariant& v) {
    v = CorruptionVariant{};
    v.source_unit_id = j.at("source_unit_id").get<std::string>();
    v.paper_id = j.value("paper_id", std::string{});
    v.dimension = parse_corruption(j.at("dimension").get<std::string>());
    v.text = j.at("text").get<std::string>();
    if (auto it = j.find("verification"); it != j.end() && !it->is_null()) {
        Verification ver;
        ver.predicted = parse_corruption(it->at("predicted_dimension").get<std::string>());
        ver.target_degradation = it->at("target_degradation").get<int>();
        ver.collateral_preservation = it->at("collateral_preservation").get<int>();
        ver.reasoning = it->value("reasoning", std::string{});
        v.verification = ver;
    }
}

std::vector<CorruptionVariant> corrupt(JudgeClient& judge, const FeedbackUnit& unit, const PaperRecord& paper) {
    if (!unit.successful()) {
        throw InvalidArgument("unit " + unit.id + " is not successful; only valid and actionable units are corrupted");
    }
    const auto& tmpl = PromptRegistry::builtin().get("corrupt_feedback");
    const auto response =
        judge.complete(tmpl, {{"title", paper.title}, {"abstract", paper.abstract}, {"feedback", unit.text}});
    std::vector<CorruptionVariant> out;
    for (auto d : kAllCorruptions) {
        auto it = response.parsed.find(std::string(to_string(d)));
        if (it == response.parsed.end() || !it->is_string() || normalize_text(it->get<std::string>()).empty()) {
            throw JudgeFormatError("corruption output lacks a '" + std::string(to_string(d)) + "' rewrite",
                                   response.raw_text);
        }
        out.push_back(CorruptionVariant{unit.id, paper.paper_id, d, it->get<std::string>(), std::nullopt});
    }
    return out;
}

bool keep_variant(const CorruptionVariant& v) {
    return v.verification && v.verification->predicted == v.dimension && v.verification->target_degradation >= 2 &&
           v.verification->collateral_preservation >= 2;
}

std::vector<CorruptionVariant> filter_variants(const std::vector<CorruptionVariant>& variants) {
    std::vector<CorruptionVariant> out;
    std::copy_if(variants.begin(), variants.end(), std::back_inserter(out), keep_variant);
    return out;
}

void accumulate(std::map<CorruptionDimension, DimensionStats>& into, const std::vector<CorruptionVariant>& judged) {
    for (const auto& v : judged) {
        if (!v.verification) continue;
        auto& s = into[v.dimension];
        ++s.judged;
        s.correct += v.verification->predicted == v.dimension ? 1 : 0;
        s.kept += keep_variant(v) ? 1 : 0;
        s.degradation_sum += v.verification->target_degradation;
        s.preservation_sum += v.verification->collateral_preservation;
    }
}

VerifyResult verify_and_filter(JudgeClient& judge, const FeedbackUnit& source, const PaperRecord& paper,
                               std::vector<CorruptionVariant> variants, std::uint64_t seed) {
    VerifyResult result;
    if (variants.empty()) return result;
    std::vector<std::size_t> shown(variants.size());  // position -> variant index
    std::iota(shown.begin(), shown.end(), 0);
    Rng rng(derive_seed(seed, fnv1a64(source.id)));
    rng.shuffle(shown);
    result.presentation_order.assign(variants.size(), 0);
    std::string rewrites;
    for (std::size_t pos = 0; pos < shown.size(); ++pos) {
        result.presentation_order[shown[pos]] = pos;
        if (!rewrites.empty()) rewrites += "\n\n";
        rewrites += "[" + std::to_string(pos) + "] " + variants[shown[pos]].text;
    }

    const auto& tmpl = PromptRegistry::builtin().get("verify_corruption");
    const auto response = judge.complete(
        tmpl, {{"title", paper.title}, {"abstract", paper.abstract}, {"feedback", source.text}, {"rewrites", rewrites}});
    for (const auto& r : response.parsed.at("results")) {
        const auto pos = r.at("rewrite_index").get<std::size_t>();
        if (pos >= shown.size()) {
            throw JudgeFormatError("verification refers to rewrite " + std::to_string(pos), response.raw_text);
        }
        Verification v;
        v.predicted = parse_corruption(r.at("predicted_dimension").get<std::string>());
        v.target_degradation = r.at("target_degradation_score").get<int>();
        v.collateral_preservation = r.at("collateral_preservation_score").get<int>();
        v.reasoning = r.value("reasoning", std::string{});
        variants[shown[pos]].verification = v;
    }
    for (const auto& v : variants) {
        if (!v.verification) {
            throw JudgeFormatError("verification misses the " + std::string(to_string(v.dimension)) + " rewrite",
                                   response.raw_text);
        }
    }
    result.judged = std::move(variants);
    result.kept = filter_variants(result.judged);
    accumulate(result.stats, result.judged);
    return result;
}

// ---------------------------------------------------------------------------
// Dedup

std::vector<std::vector<std::size_t>> similarity_clusters(const std::vector<Vector>& vectors, double threshold) {
    const std::size_t n = vectors.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (cosine(vectors[i], vectors[j]) > threshold) {
                const auto a = find(i), b = find(j);
                if (a != b) parent[std::max(a, b)] = std::min(a, b);
            }
        }
    }
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[find(i)].push_back(i);
    std::vector<std::vector<std::size_t>> out;
    for (auto& [_, members] : groups) out.push_back(std::move(members));
    return out;
}

std::vector<FeedbackUnit> dedup_units(const std::vector<FeedbackUnit>& units, const std::vector<Vector>& vectors,
                                      double threshold, std::uint64_t seed) {
    if (units.size() != vectors.size()) throw InvalidArgument("dedup needs one embedding per unit");
    std::vector<std::size_t> keep;
    for (const auto& cluster : similarity_clusters(vectors, threshold)) {
        if (cluster.size() == 1) {
            keep.push_back(cluster.front());
            continue;
        }
        Rng rng(derive_seed(seed, fnv1a64(units[cluster.front()].id)));
        keep.push_back(cluster[rng.below(cluster.size())]);
    }
    std::sort(keep.begin(), keep.end());
    std::vector<FeedbackUnit> out;
    out.reserve(keep.size());
    for (auto i : keep) out.push_back(units[i]);
    return out;
}

std::vector<FeedbackUnit> dedup_units(const std::vector<FeedbackUnit>& units, Embedder& embedder, double threshold,
                                      std::uint64_t seed) {
    if (units.empty()) return {};
    std::vector<std::string> texts;
    texts.reserve(units.size());
    for (const auto& u : units) texts.push_back(u.text);
    return dedup_units(units, embedder.embed(texts), threshold, seed);
}

// ---------------------------------------------------------------------------
// SFT

std::string format_feedback_list(const std::vector<std::string>& texts) {
    std::string out;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (i) out += "\n\n";
        out += std::to_string(i + 1) + ". " + texts[i];
    }
    return out;
}

namespace {

json prompt_messages(const PaperRecord& paper) {
    if (normalize_text(paper.body_markdown).empty()) {
        throw PipelineError("paper " + paper.paper_id + " has no body markdown to prompt with");
    }
    const auto& tmpl = PromptRegistry::builtin().get("generate_feedback");
    const auto prompt = render(tmpl, {{"paper_content", paper.body_markdown}});
    json messages = json::array();
    if (!prompt.system.empty()) messages.push_back({{"role", "system"}, {"content", prompt.system}});
    messages.push_back({{"role", "user"}, {"content", prompt.user}});
    return messages;
}

}  // namespace

std::vector<SftExample> build_sft_examples(const std::vector<const PaperRecord*>& papers) {
    std::vector<SftExample> out;
    for (const auto* paper : papers) {
        std::map<std::string, std::vector<const FeedbackUnit*>> by_reviewer;
        for (const auto& u : paper->units) {
            if (u.source == Source::human && u.successful()) by_reviewer[u.reviewer_id].push_back(&u);
        }
        if (by_reviewer.empty()) continue;
        const json prompt = prompt_messages(*paper);
        for (const auto& [reviewer, units] : by_reviewer) {
            SftExample ex;
            ex.paper_id = paper->paper_id;
            ex.reviewer_id = reviewer;
            std::vector<std::string> texts;
            for (const auto* u : units) {
                ex.unit_ids.push_back(u->id);
                texts.push_back(u->text);
            }
            ex.messages = prompt;
            ex.messages.push_back({{"role", "assistant"}, {"content", format_feedback_list(texts)}});
            out.push_back(std::move(ex));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// DPO

json to_json_line(const PreferencePair& pair, const std::string& prompt) {
    json meta = {{"paper_id", pair.paper_id},
                 {"pair_kind", to_string(pair.kind)},
                 {"chosen_success_count", pair.chosen_success_count},
                 {"rejected_success_count", pair.rejected_success_count},
                 {"chosen_ids", pair.chosen_ids},
                 {"rejected_ids", pair.rejected_ids}};
    if (pair.corruption) meta["corruption"] = to_string(*pair.corruption);
    return json{{"prompt", prompt},
                {"chosen", format_feedback_list(pair.chosen)},
                {"rejected", format_feedback_list(pair.rejected)},
                {"metadata", meta}};
}

bool satisfies_delta(int chosen_successes, int rejected_successes, int min_delta) {
    return chosen_successes - rejected_successes >= min_delta;
}

std::vector<PreferencePair> real_label_pairs(const std::string& paper_id, const std::vector<FeedbackUnit>& units,
                                             const DpoOptions& options, std::uint64_t seed) {
    if (options.set_size == 0) throw ConfigError("DPO set_size must be positive");
    std::vector<const FeedbackUnit*> good, bad;
    for (const auto& u : units) (u.successful() ? good : bad).push_back(&u);
    std::size_t m = std::min(options.set_size, units.size());
    if (options.mode == ChosenMode::all_successful) m = std::min(m, good.size());
    if (m == 0) return {};

    auto lo = [&](std::size_t size) { return size > bad.size() ? size - bad.size() : 0; };
    auto hi = [&](std::size_t size) { return std::min(size, good.size()); };
    std::vector<std::pair<std::size_t, std::size_t>> combos;  // (chosen successes, rejected successes)
    const std::size_t c_min = options.mode == ChosenMode::all_successful ? m : lo(m);
    for (std::size_t c = c_min; c <= hi(m); ++c) {
        for (std::size_t r = lo(m); r <= hi(m); ++r) {
            if (satisfies_delta(static_cast<int>(c), static_cast<int>(r), options.min_delta)) combos.emplace_back(c, r);
        }
    }
    if (combos.empty()) return {};

    auto draw = [&](Rng& rng, std::size_t successes, std::size_t size, std::vector<std::string>& texts,
                    std::vector<std::string>& ids) {
        std::vector<const FeedbackUnit*> picked;
        for (auto i : rng.sample_indices(good.size(), successes)) picked.push_back(good[i]);
        for (auto i : rng.sample_indices(bad.size(), size - successes)) picked.push_back(bad[i]);
        rng.shuffle(picked);
        for (const auto* u : picked) {
            texts.push_back(u->text);
            ids.push_back(u->id);
        }
    };

    std::vector<PreferencePair> out;
    std::set<std::pair<std::vector<std::string>, std::vector<std::string>>> seen;
    for (std::size_t p = 0; p < options.pairs_per_paper; ++p) {
        Rng rng(derive_seed(derive_seed(seed, fnv1a64(paper_id)), p));
        const auto [c, r] = combos[rng.below(combos.size())];
        PreferencePair pair;
        pair.paper_id = paper_id;
        pair.kind = PairKind::real_label;
        draw(rng, c, m, pair.chosen, pair.chosen_ids);
        draw(rng, r, m, pair.rejected, pair.rejected_ids);
        pair.chosen_success_count = static_cast<int>(c);
        pair.rejected_success_count = static_cast<int>(r);
        auto key = std::make_pair(pair.chosen_ids, pair.rejected_ids);
        std::sort(key.first.begin(), key.first.end());
        std::sort(key.second.begin(), key.second.end());
        if (seen.insert(key).second) out.push_back(std::move(pair));
    }
    return out;
}

std::vector<PreferencePair> corruption_pairs(const std::string& paper_id, const std::vector<FeedbackUnit>& units,
                                             const std::vector<CorruptionVariant>& kept, const DpoOptions& options,
                                             std::uint64_t seed) {
    std::map<std::string, std::vector<const CorruptionVariant*>> by_source;
    for (const auto& v : kept) {
        if (keep_variant(v)) by_source[v.source_unit_id].push_back(&v);
    }
    std::vector<const FeedbackUnit*> good;
    for (const auto& u : units) {
        if (u.successful()) good.push_back(&u);
    }
    std::vector<PreferencePair> out;
    for (std::size_t s = 0; s < good.size(); ++s) {
        const FeedbackUnit* source = good[s];
        auto it = by_source.find(source->id);
        if (it == by_source.end()) continue;
        auto variants = it->second;
        std::sort(variants.begin(), variants.end(),
                  [](const CorruptionVariant* a, const CorruptionVariant* b) { return a->dimension < b->dimension; });
        for (const auto* variant : variants) {
            if (options.corruption_pairs_per_paper && out.size() >= options.corruption_pairs_per_paper) return out;
            Rng rng(derive_seed(derive_seed(seed, fnv1a64(source->id)), static_cast<std::uint64_t>(variant->dimension)));
            std::vector<const FeedbackUnit*> others;
            for (const auto* u : good) {
                if (u != source) others.push_back(u);
            }
            const std::size_t extra = std::min(others.size(), options.set_size > 0 ? options.set_size - 1 : 0);
            std::vector<const FeedbackUnit*> set = {source};
            for (auto i : rng.sample_indices(others.size(), extra)) set.push_back(others[i]);
            rng.shuffle(set);

            PreferencePair pair;
            pair.paper_id = paper_id;
            pair.kind = PairKind::corruption;
            pair.corruption = variant->dimension;
            for (const auto* u : set) {
                pair.chosen.push_back(u->text);
                pair.chosen_ids.push_back(u->id);
                const bool swapped = u == source;
                pair.rejected.push_back(swapped ? variant->text : u->text);
                pair.rejected_ids.push_back(swapped ? u->id + "#" + std::string(to_string(variant->dimension)) : u->id);
            }
            pair.chosen_success_count = static_cast<int>(set.size());
            pair.rejected_success_count = static_cast<int>(set.size()) - 1;
            out.push_back(std::move(pair));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifests

void to_json(json& j, const TrainingManifest& m) {
    j = json{{"kind", m.kind},
             {"dataset_path", m.dataset_path},
             {"record_count", m.record_count},
             {"hyperparameters", m.hyperparameters},
             {"prompt_version", m.prompt_version},
             {"config_hash", m.config_hash}};
}

json default_hyperparameters(const std::string& kind) {
    json common = {{"max_sequence_length", 30000},
                   {"train_batch_size", 128},
                   {"learning_rate", 5e-6},
                   {"epochs", 1},
                   {"precision", "bf16"}};
    if (kind == "sft") {
        common["base_model"] = "Qwen3-8B";
        common["micro_batch_size"] = 8;
        return common;
    }
    if (kind == "dpo") {
        common["base_model"] = "sft_checkpoint";
        common["micro_batch_size"] = 4;
        common["beta"] = 0.1;
        common["nll_loss_coefficient"] = 0.2;
        return common;
    }
    throw InvalidArgument("unknown training manifest kind '" + kind + "'");
}

}  // namespace fbeval
