#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "fbeval/fbeval.h"

namespace {

const char* kPipelineCommands[] = {"ingest",    "parse",          "forge-sft",    "forge-dpo",
                                   "calibrate", "consensus-eval", "success-eval"};

int fail(fbe_status status) {
    std::cerr << "error: " << fbe_last_error() << "\n";
    return static_cast<int>(status);
}

int print_report(const std::string& run_dir, fbe_format format) {
    char* text = nullptr;
    if (auto s = fbe_render_report(run_dir.c_str(), format, &text); s != FBE_OK) return fail(s);
    std::fputs(text, stdout);
    fbe_string_free(text);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Feedback evaluation pipelines: parsing, training data, and consensus/success evaluation."};
    app.require_subcommand(1);
    app.set_version_flag("--version", fbe_version());

    const std::map<std::string, fbe_format> formats = {
        {"json", FBE_FORMAT_JSON}, {"csv", FBE_FORMAT_CSV}, {"md", FBE_FORMAT_MARKDOWN},
        {"markdown", FBE_FORMAT_MARKDOWN}, {"markdown-table", FBE_FORMAT_MARKDOWN}};

    std::string config;
    std::vector<std::string> overrides;
    std::string format = "md";
    bool quiet = false;
    std::string command;

    for (const char* name : kPipelineCommands) {
        auto* sub = app.add_subcommand(name, std::string("Run the ") + name + " pipeline");
        sub->add_option("-c,--config", config, "JSON config file")->required()->check(CLI::ExistingFile);
        sub->add_option("-s,--set", overrides, "Override a config field, e.g. thresholds.dedup=0.6");
        sub->add_option("-f,--format", format, "Report format printed after the run")
            ->check(CLI::IsMember(formats));
        sub->add_flag("-q,--quiet", quiet, "Do not print the report");
        sub->callback([&command, name] { command = name; });
    }

    std::string run_dir;
    auto* report = app.add_subcommand("report", "Re-render the report of an existing run directory");
    auto* from_dir = report->add_option("-r,--run-dir", run_dir, "Run directory")->check(CLI::ExistingDirectory);
    auto* from_config = report->add_option("-c,--config", config, "Locate the run directory from a config")
                            ->check(CLI::ExistingFile);
    report->add_option("-s,--set", overrides, "Override a config field");
    report->add_option("-f,--format", format, "Report format")->check(CLI::IsMember(formats));
    from_dir->excludes(from_config);
    report->callback([&command] { command = "report"; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : FBE_ERR_CONFIG;
    }

    const fbe_format fmt = formats.at(format);
    if (command == "report" && !run_dir.empty()) return print_report(run_dir, fmt);
    if (config.empty()) {
        std::cerr << "error: report needs --run-dir or --config\n";
        return FBE_ERR_CONFIG;
    }

    std::vector<const char*> raw;
    for (const auto& o : overrides) raw.push_back(o.c_str());
    fbe_pipeline* pipeline = nullptr;
    if (auto s = fbe_pipeline_create(config.c_str(), raw.data(), raw.size(), &pipeline); s != FBE_OK) return fail(s);
    const std::string dir = fbe_pipeline_run_dir(pipeline);
    const fbe_status status = fbe_pipeline_run(pipeline, command.c_str());
    fbe_pipeline_destroy(pipeline);
    if (status != FBE_OK) return fail(status);
    std::cerr << "run directory: " << dir << "\n";
    if (quiet) return 0;
    return print_report(dir, fmt);
}
