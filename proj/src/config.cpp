#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "fbeval/error.hpp"
#include "fbeval/hash.hpp"
#include "fbeval/pipeline.hpp"

namespace fbeval {

namespace fs = std::filesystem;

namespace {

using Problems = std::vector<std::string>;

const std::set<std::string> kJudgeCommands = {"parse", "forge-dpo", "consensus-eval", "success-eval"};

std::vector<std::string> tasks_for(const std::string& command) {
    if (command == "parse") return {"parse"};
    if (command == "forge-dpo") return {"corrupt", "verify", "embed"};
    if (command == "consensus-eval") return {"match", "embed"};
    if (command == "success-eval") return {"quality", "predict"};
    return {};
}

bool known_command(const std::string& command) {
    return std::ranges::find(kCommands, command) != std::end(kCommands);
}

bool known_task(const std::string& task) {
    return std::ranges::find(kEndpointTasks, task) != std::end(kEndpointTasks);
}

std::string pointer_name(const std::string& pointer) {
    std::string out = pointer.substr(1);
    std::ranges::replace(out, '/', '.');
    return out;
}

// Unknown keys anywhere below `defaults`, except inside free-form maps.
void unknown_keys(const json& user, const json& defaults, const std::string& prefix, Problems& out) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!defaults.contains(it.key())) {
            out.push_back(key + ": unknown key");
            continue;
        }
        if (key == "endpoints") continue;
        const json& d = defaults.at(it.key());
        if (d.is_object() && it->is_object()) unknown_keys(*it, d, key, out);
    }
}

class Reader {
public:
    Reader(const json& doc, Problems& problems) : doc_(doc), problems_(problems) {}

    template <typename T>
    void number(const std::string& pointer, T& out) {
        const json& v = doc_.at(json::json_pointer(pointer));
        if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) return fail(pointer, "expected a number");
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_integer() || v.get<long long>() < 0) {
                return fail(pointer, "expected a non-negative integer");
            }
        } else {
            if (!v.is_number_integer()) return fail(pointer, "expected an integer");
        }
        out = v.get<T>();
    }

    void boolean(const std::string& pointer, bool& out) {
        const json& v = doc_.at(json::json_pointer(pointer));
        if (!v.is_boolean()) return fail(pointer, "expected true or false");
        out = v.get<bool>();
    }

    void string(const std::string& pointer, std::string& out) {
        const json& v = doc_.at(json::json_pointer(pointer));
        if (!v.is_string()) return fail(pointer, "expected a string");
        out = v.get<std::string>();
    }

    template <typename E>
    void choice(const std::string& pointer, E& out, const std::vector<std::pair<std::string, E>>& options) {
        std::string s;
        const auto before = problems_.size();
        string(pointer, s);
        if (problems_.size() != before) return;
        for (const auto& [name, value] : options) {
            if (name == s) {
                out = value;
                return;
            }
        }
        std::string names;
        for (const auto& [name, value] : options) names += (names.empty() ? "" : ", ") + name;
        fail(pointer, "'" + s + "' is not one of " + names);
    }

    void fail(const std::string& pointer, const std::string& message) {
        problems_.push_back(pointer_name(pointer) + ": " + message);
    }

private:
    const json& doc_;
    Problems& problems_;
};

const std::vector<std::pair<std::string, RunMode>> kModes = {{"stub", RunMode::stub}, {"live", RunMode::live}};
const std::vector<std::pair<std::string, Averaging>> kAveraging = {{"micro", Averaging::micro},
                                                                   {"macro", Averaging::macro}};
const std::vector<std::pair<std::string, ChosenMode>> kChosen = {{"literal", ChosenMode::literal},
                                                                 {"all_successful", ChosenMode::all_successful}};
const std::vector<std::pair<std::string, stats::Correction>> kCorrections = {
    {"none", stats::Correction::none}, {"bonferroni", stats::Correction::bonferroni}, {"holm", stats::Correction::holm}};

template <typename E>
std::string name_of(E value, const std::vector<std::pair<std::string, E>>& options) {
    for (const auto& [name, v] : options) {
        if (v == value) return name;
    }
    return "";
}

std::string join_problems(const Problems& problems) {
    std::string out = "invalid configuration:";
    for (const auto& p : problems) out += "\n  - " + p;
    return out;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& doc, const fs::path& base_dir) {
    if (!doc.is_object()) throw ConfigError("invalid configuration:\n  - top level: expected an object");
    PipelineConfig c;
    c.base_dir = fs::absolute(base_dir).lexically_normal();
    const json defaults = c.to_json();
    Problems problems;
    unknown_keys(doc, defaults, "", problems);

    json merged = defaults;
    merged.merge_patch(doc);
    // merge_patch drops nulls; restore the defaults they removed.
    for (auto it = defaults.begin(); it != defaults.end(); ++it) {
        if (!merged.contains(it.key())) merged[it.key()] = *it;
    }
    for (const char* section : {"paths", "thresholds", "sampling", "splits", "options"}) {
        if (!merged.at(section).is_object()) {
            problems.push_back(std::string(section) + ": expected an object");
            merged[section] = defaults.at(section);
        }
        for (auto it = defaults.at(section).begin(); it != defaults.at(section).end(); ++it) {
            if (!merged[section].contains(it.key())) merged[section][it.key()] = *it;
        }
    }

    Reader r(merged, problems);
    r.choice("/mode", c.mode, kModes);
    r.number("/workers", c.workers);
    r.string("/paths/corpus", c.paths.corpus);
    r.string("/paths/runs", c.paths.runs);
    r.string("/paths/stub_fixture", c.paths.stub_fixture);
    r.string("/paths/annotations", c.paths.annotations);
    r.string("/paths/calibration", c.paths.calibration);
    r.string("/paths/model_outputs", c.paths.model_outputs);
    r.string("/paths/openreview_export", c.paths.openreview_export);

    const json& endpoints = merged.at("endpoints");
    if (!endpoints.is_object()) {
        problems.push_back("endpoints: expected an object keyed by task");
    } else {
        for (auto it = endpoints.begin(); it != endpoints.end(); ++it) {
            const std::string key = "endpoints." + it.key();
            if (!known_task(it.key())) {
                problems.push_back(key + ": unknown task");
                continue;
            }
            try {
                json spec = it->is_string() ? json{{"preset", *it}} : *it;
                if (!spec.is_object()) throw ConfigError("expected a preset name or an object");
                EndpointConfig e = spec.get<EndpointConfig>();
                e.validate();
                c.endpoints[it.key()] = e;
            } catch (const ConfigError& e) {
                problems.push_back(key + ": " + e.what());
            } catch (const json::exception& e) {
                problems.push_back(key + ": " + e.what());
            }
        }
    }

    r.number("/thresholds/dedup", c.thresholds.dedup);
    r.number("/thresholds/human_human", c.thresholds.human_human);
    r.number("/thresholds/human_model", c.thresholds.human_model);
    r.number("/thresholds/calibration_cutoff", c.thresholds.calibration_cutoff);
    r.number("/thresholds/min_delta", c.thresholds.min_delta);
    r.number("/thresholds/weight_tolerance", c.thresholds.weight_tolerance);
    const json& quality = merged.at("/thresholds/quality"_json_pointer);
    if (quality.is_object()) {
        for (const char* dim : {"accuracy", "prioritisation", "constructive_tone", "paper_specific_grounding"}) {
            if (!quality.contains(dim)) merged["thresholds"]["quality"][dim] = defaults["thresholds"]["quality"][dim];
        }
    } else {
        problems.push_back("thresholds.quality: expected an object");
        merged["thresholds"]["quality"] = defaults["thresholds"]["quality"];
    }
    r.number("/thresholds/quality/accuracy", c.thresholds.quality.accuracy);
    r.number("/thresholds/quality/prioritisation", c.thresholds.quality.prioritisation);
    r.number("/thresholds/quality/constructive_tone", c.thresholds.quality.constructive_tone);
    r.number("/thresholds/quality/paper_specific_grounding", c.thresholds.quality.paper_specific_grounding);

    r.number("/sampling/k", c.sampling.k);
    r.number("/sampling/bootstrap_iterations", c.sampling.bootstrap_iterations);
    r.number("/sampling/seed", c.sampling.seed);
    r.number("/sampling/dev_size", c.sampling.dev_size);
    const json& pools = merged.at("/sampling/test_pools"_json_pointer);
    if (!pools.is_array()) {
        problems.push_back("sampling.test_pools: expected an array");
    } else {
        for (std::size_t i = 0; i < pools.size(); ++i) {
            const std::string key = "sampling.test_pools[" + std::to_string(i) + "]";
            const json& p = pools[i];
            if (!p.is_object() || !p.value("first_year", json()).is_number_integer() ||
                !p.value("last_year", json()).is_number_integer() || !p.value("size", json()).is_number_integer() ||
                p["size"].get<long long>() < 0) {
                problems.push_back(key + ": expected {first_year, last_year, size} integers");
                continue;
            }
            TestSplitPool pool{p["first_year"].get<int>(), p["last_year"].get<int>(), p["size"].get<std::size_t>()};
            if (pool.first_year > pool.last_year) problems.push_back(key + ": first_year is after last_year");
            c.sampling.test_pools.push_back(pool);
        }
    }

    r.string("/splits/parse", c.splits.parse);
    r.string("/splits/sft", c.splits.sft);
    r.string("/splits/dpo", c.splits.dpo);
    r.string("/splits/eval", c.splits.eval);

    const json& strata = merged.at("strata");
    if (!strata.is_array() || !std::ranges::all_of(strata, [](const json& v) { return v.is_number(); })) {
        problems.push_back("strata: expected an array of numbers");
    } else {
        c.strata = strata.get<std::vector<double>>();
    }

    r.choice("/options/averaging", c.options.averaging, kAveraging);
    r.boolean("/options/cluster_level", c.options.cluster_level);
    r.boolean("/options/require_partner_success", c.options.require_partner_success);
    r.boolean("/options/quality_filter", c.options.quality_filter);
    r.choice("/options/chosen_mode", c.options.chosen_mode, kChosen);
    r.number("/options/set_size", c.options.set_size);
    r.number("/options/pairs_per_paper", c.options.pairs_per_paper);
    r.number("/options/corruption_pairs_per_paper", c.options.corruption_pairs_per_paper);
    r.number("/options/corrupt_units_per_paper", c.options.corrupt_units_per_paper);
    r.choice("/options/correction", c.options.correction, kCorrections);
    r.string("/options/venue", c.options.venue);
    r.number("/options/excerpt_chars", c.options.excerpt_chars);
    r.string("/options/baseline_generator", c.options.baseline_generator);

    if (!problems.empty()) throw ConfigError(join_problems(problems));
    return c;
}

json PipelineConfig::to_json() const {
    json endpoints = json::object();
    for (const auto& [task, e] : this->endpoints) endpoints[task] = e;
    json pools = json::array();
    for (const auto& p : sampling.test_pools) {
        pools.push_back({{"first_year", p.first_year}, {"last_year", p.last_year}, {"size", p.size}});
    }
    return json{
        {"mode", name_of(mode, kModes)},
        {"workers", workers},
        {"paths",
         {{"corpus", paths.corpus},
          {"runs", paths.runs},
          {"stub_fixture", paths.stub_fixture},
          {"annotations", paths.annotations},
          {"calibration", paths.calibration},
          {"model_outputs", paths.model_outputs},
          {"openreview_export", paths.openreview_export}}},
        {"endpoints", endpoints},
        {"thresholds",
         {{"dedup", thresholds.dedup},
          {"human_human", thresholds.human_human},
          {"human_model", thresholds.human_model},
          {"calibration_cutoff", thresholds.calibration_cutoff},
          {"min_delta", thresholds.min_delta},
          {"weight_tolerance", thresholds.weight_tolerance},
          {"quality", thresholds.quality}}},
        {"sampling",
         {{"k", sampling.k},
          {"bootstrap_iterations", sampling.bootstrap_iterations},
          {"seed", sampling.seed},
          {"dev_size", sampling.dev_size},
          {"test_pools", pools}}},
        {"splits", {{"parse", splits.parse}, {"sft", splits.sft}, {"dpo", splits.dpo}, {"eval", splits.eval}}},
        {"strata", strata},
        {"options",
         {{"averaging", name_of(options.averaging, kAveraging)},
          {"cluster_level", options.cluster_level},
          {"require_partner_success", options.require_partner_success},
          {"quality_filter", options.quality_filter},
          {"chosen_mode", name_of(options.chosen_mode, kChosen)},
          {"set_size", options.set_size},
          {"pairs_per_paper", options.pairs_per_paper},
          {"corruption_pairs_per_paper", options.corruption_pairs_per_paper},
          {"corrupt_units_per_paper", options.corrupt_units_per_paper},
          {"correction", name_of(options.correction, kCorrections)},
          {"venue", options.venue},
          {"excerpt_chars", options.excerpt_chars},
          {"baseline_generator", options.baseline_generator}}},
    };
}

fs::path PipelineConfig::resolve(const std::string& path) const {
    if (path.empty()) return {};
    const fs::path p(path);
    return (p.is_absolute() ? p : base_dir / p).lexically_normal();
}

EndpointConfig PipelineConfig::endpoint_for(const std::string& task) const {
    if (auto it = endpoints.find(task); it != endpoints.end()) return it->second;
    if (mode == RunMode::live) throw ConfigError("no endpoint bound for task '" + task + "' in live mode");
    EndpointConfig stub;
    stub.model_name = "stub";
    return stub;
}

std::vector<std::string> PipelineConfig::problems(const std::string& command) const {
    Problems out;
    if (!known_command(command)) {
        std::string names;
        for (const char* c : kCommands) names += (names.empty() ? "" : ", ") + std::string(c);
        out.push_back("command: unknown command '" + command + "' (expected one of " + names + ")");
        return out;
    }

    if (workers < 1) out.push_back("workers: must be >= 1");
    for (const auto& [key, v] : {std::pair{"thresholds.dedup", thresholds.dedup},
                                 std::pair{"thresholds.human_human", thresholds.human_human},
                                 std::pair{"thresholds.human_model", thresholds.human_model}}) {
        if (v < -1.0 || v > 1.0) out.push_back(std::string(key) + ": must be a cosine in [-1, 1]");
    }
    if (thresholds.calibration_cutoff < 0.0 || thresholds.calibration_cutoff > 1.0) {
        out.push_back("thresholds.calibration_cutoff: must be in [0, 1]");
    }
    if (thresholds.min_delta < 1) out.push_back("thresholds.min_delta: must be >= 1");
    if (thresholds.weight_tolerance < 0.0) out.push_back("thresholds.weight_tolerance: must be >= 0");
    try {
        thresholds.quality.validate();
    } catch (const ConfigError& e) {
        out.push_back(std::string("thresholds.quality: ") + e.what());
    }
    if (sampling.k < 1) out.push_back("sampling.k: must be >= 1");
    if (sampling.bootstrap_iterations < 2) out.push_back("sampling.bootstrap_iterations: must be >= 2");
    try {
        StratumTable{strata}.validate();
    } catch (const Error& e) {
        out.push_back(std::string("strata: ") + e.what());
    }
    if (options.set_size < 1) out.push_back("options.set_size: must be >= 1");
    if (options.pairs_per_paper < 1) out.push_back("options.pairs_per_paper: must be >= 1");
    if (options.excerpt_chars < 1) out.push_back("options.excerpt_chars: must be >= 1");
    for (const auto& [key, split] : {std::pair{"splits.parse", &splits.parse}, std::pair{"splits.sft", &splits.sft},
                                     std::pair{"splits.dpo", &splits.dpo}, std::pair{"splits.eval", &splits.eval}}) {
        if (split->empty()) out.push_back(std::string(key) + ": must not be empty");
    }

    auto require_file = [&](const char* key, const std::string& value, bool required) {
        if (value.empty()) {
            if (required) out.push_back(std::string(key) + ": required for `" + command + "`");
            return;
        }
        if (!fs::exists(resolve(value))) {
            out.push_back(std::string(key) + ": '" + resolve(value).string() + "' does not exist");
        }
    };

    const bool reads_corpus = command != "calibrate" && command != "report";
    if (reads_corpus) {
        if (command == "ingest" && paths.corpus.empty() && paths.openreview_export.empty()) {
            out.push_back("paths.corpus: `ingest` needs paths.corpus or paths.openreview_export");
        }
        require_file("paths.corpus", paths.corpus, false);
        if (command == "ingest") require_file("paths.openreview_export", paths.openreview_export, false);
    }
    if (command == "parse") require_file("paths.annotations", paths.annotations, false);
    if (command == "calibrate") require_file("paths.calibration", paths.calibration, true);
    if (command == "consensus-eval" || command == "success-eval") {
        require_file("paths.model_outputs", paths.model_outputs, true);
    }
    if (kJudgeCommands.contains(command)) {
        if (mode == RunMode::stub) {
            require_file("paths.stub_fixture", paths.stub_fixture, true);
        } else {
            for (const auto& task : tasks_for(command)) {
                auto it = endpoints.find(task);
                if (it == endpoints.end()) {
                    out.push_back("endpoints." + task + ": no endpoint bound for task '" + task +
                                  "', which `" + command + "` needs in live mode");
                    continue;
                }
                const auto& env = it->second.api_key_env;
                if (!env.empty() && std::getenv(env.c_str()) == nullptr) {
                    out.push_back("endpoints." + task + ": environment variable " + env + " is not set");
                }
                if (it->second.base_url.empty()) out.push_back("endpoints." + task + ": base_url is empty");
            }
        }
    }
    return out;
}

void PipelineConfig::validate(const std::string& command) const {
    const auto p = problems(command);
    if (!p.empty()) throw ConfigError(join_problems(p));
}

std::string PipelineConfig::hash() const {
    json doc = to_json();
    doc.erase("workers");
    doc["paths"].erase("runs");
    for (auto& [key, value] : doc["paths"].items()) {
        const std::string raw = value.get<std::string>();
        if (raw.empty()) continue;
        const fs::path abs = resolve(raw);
        const fs::path rel = abs.lexically_relative(base_dir);
        const bool inside = !rel.empty() && *rel.begin() != "..";
        value = (inside ? rel : abs).generic_string();
    }
    doc["prompt_versions"] = PromptRegistry::builtin().versions();
    if (mode == RunMode::stub && !paths.stub_fixture.empty() && fs::is_regular_file(resolve(paths.stub_fixture))) {
        doc["stub_fixture_sha256"] = sha256_hex(read_text(resolve(paths.stub_fixture)));
    }
    return sha256_hex(doc.dump());
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "': expected key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override '" + assignment + "': empty key segment");
        if (!node->is_object()) {
            throw ConfigError("override '" + assignment + "': '" + key.substr(0, start - 1) + "' is not an object");
        }
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

PipelineConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
    if (!fs::is_regular_file(path)) throw ConfigError("config file '" + path.string() + "' does not exist");
    json doc;
    try {
        doc = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path.string() + "': " + e.what());
    }
    for (const auto& o : overrides) apply_override(doc, o);
    return PipelineConfig::from_json(doc, fs::absolute(path).parent_path());
}

}  // namespace fbeval
