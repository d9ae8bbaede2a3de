#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fbeval/consensus.hpp"
#include "fbeval/forge.hpp"
#include "fbeval/ingest.hpp"
#include "fbeval/judgeclient.hpp"
#include "fbeval/report.hpp"
#include "fbeval/stats.hpp"
#include "fbeval/successeval.hpp"

namespace fbeval {

enum class RunMode { stub, live };

// Judge tasks that can be bound to an endpoint. "embed" is the embedding
// endpoint; the others are chat completions.
inline constexpr const char* kEndpointTasks[] = {"parse", "corrupt", "verify", "match", "quality", "predict", "embed"};

inline constexpr const char* kCommands[] = {"ingest",    "parse",          "forge-sft",    "forge-dpo",
                                            "calibrate", "consensus-eval", "success-eval", "report"};

struct PipelineConfig {
    RunMode mode = RunMode::stub;
    std::size_t workers = 4;  // not part of the config hash

    struct Paths {
        std::string corpus;             // dataset store directory
        std::string runs = "runs";      // run directories live below this; not hashed
        std::string stub_fixture;       // canned judge responses for stub mode
        std::string annotations;        // unit label annotations (JSONL), optional
        std::string calibration;        // match calibration sample (JSON), optional
        std::string model_outputs;      // generated feedback units (JSONL), optional
        std::string openreview_export;  // raw export for `ingest`, optional
    } paths;

    std::map<std::string, EndpointConfig> endpoints;

    struct Thresholds {
        double dedup = 0.5;
        double human_human = 0.55;
        double human_model = 0.45;
        double calibration_cutoff = 0.1;
        int min_delta = 2;
        double weight_tolerance = 1e-9;
        QualityThresholds quality;
    } thresholds;

    struct Sampling {
        std::size_t k = 5;
        std::size_t bootstrap_iterations = 1000;
        std::uint64_t seed = 2026;
        std::size_t dev_size = 0;
        std::vector<TestSplitPool> test_pools;  // empty: keep the source splits
    } sampling;

    // Dataset split each command reads; "all" means every paper.
    struct Splits {
        std::string parse = "all";
        std::string sft = "train";
        std::string dpo = "train";
        std::string eval = "test";
    } splits;

    std::vector<double> strata = StratumTable{}.boundaries;

    struct Options {
        Averaging averaging = Averaging::micro;
        bool cluster_level = false;
        bool require_partner_success = false;
        bool quality_filter = true;
        ChosenMode chosen_mode = ChosenMode::literal;
        std::size_t set_size = 5;
        std::size_t pairs_per_paper = 1;
        std::size_t corruption_pairs_per_paper = 0;
        std::size_t corrupt_units_per_paper = 0;  // 0: every successful unit
        stats::Correction correction = stats::Correction::none;
        std::string venue = "ICLR";
        std::size_t excerpt_chars = 16000;
        std::string baseline_generator;
    } options;

    // Directory relative paths are resolved against (the config file's).
    std::filesystem::path base_dir = ".";

    // Parses a config document over the defaults. Unknown keys, type errors
    // and out-of-range values are all collected into one ConfigError.
    static PipelineConfig from_json(const json& doc, const std::filesystem::path& base_dir);
    json to_json() const;

    std::filesystem::path resolve(const std::string& path) const;  // empty stays empty
    EndpointConfig endpoint_for(const std::string& task) const;

    // Every problem that would stop `command`, in a stable order.
    std::vector<std::string> problems(const std::string& command) const;
    void validate(const std::string& command) const;  // throws ConfigError listing problems()

    // SHA-256 over the canonical config with normalized paths, prompt
    // versions and (stub mode) the fixture content; excludes workers and the
    // runs root.
    std::string hash() const;
};

// Sets a dotted key ("thresholds.dedup") in a config document. The value is
// read as JSON when it parses, otherwise as a string.
void apply_override(json& doc, const std::string& assignment);

PipelineConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Re-renders report.{json,csv,md} from the fragments in a run directory and
// returns the merged report.
EvalReport render_run_dir(const std::filesystem::path& run_dir);

class Pipeline {
public:
    explicit Pipeline(PipelineConfig config);

    const PipelineConfig& config() const { return config_; }
    const std::string& config_hash() const { return hash_; }
    const std::filesystem::path& run_dir() const { return run_dir_; }

    // Validates the config for the command, takes the run-directory lock and
    // executes it. Returns the merged report after the command.
    EvalReport run(const std::string& command);

private:
    PipelineConfig config_;
    std::string hash_;
    std::filesystem::path run_dir_;
};

}  // namespace fbeval
