#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace fbeval {

using json = nlohmann::json;

// Cells are stored already formatted, so a report read back from JSON
// re-renders to the same bytes.
std::string metric_cell(double v);                 // 3 decimals
std::string percent_cell(double percentage);       // 1 decimal, value already in percent
std::string signed_metric_cell(double v);          // "+0.024" / "-0.010"
std::string count_cell(long long v);
std::string optional_metric_cell(std::optional<double> v);  // "N/A" when absent

struct ReportTable {
    std::string name;   // stable key, e.g. "consensus_eval"
    std::string title;  // heading used in markdown
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
    // Leading cells that identify a row; joined with " / " as the CSV row label.
    std::size_t key_columns = 1;

    void add_row(std::vector<std::string> row);  // throws on width mismatch
    bool operator==(const ReportTable&) const = default;
};

struct EvalReport {
    json metadata = json::object();  // config hash, prompt versions, seed, command
    std::vector<ReportTable> tables;

    const ReportTable* find(std::string_view name) const;
    bool operator==(const EvalReport&) const = default;
};

void to_json(json& j, const ReportTable& t);
void from_json(const json& j, ReportTable& t);
void to_json(json& j, const EvalReport& r);
void from_json(const json& j, EvalReport& r);

enum class ReportFormat { json, csv, markdown };
ReportFormat parse_report_format(std::string_view s);

// Canonical text: sorted-key JSON with 2-space indent; long-format CSV
// (table,row,column,value) with RFC 4180 quoting; markdown with one
// column-aligned table per section. Each ends with a newline.
std::string render_report(const EvalReport& report, ReportFormat format);

// Combines fragments: metadata objects are merged key by key (later wins),
// tables keep fragment order and a later table replaces an earlier one with
// the same name.
EvalReport merge_reports(const std::vector<EvalReport>& fragments);

}  // namespace fbeval
