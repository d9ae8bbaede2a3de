#include "fbeval/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "fbeval/error.hpp"

namespace fbeval {

namespace {

std::string fixed(double v, int decimals) {
    if (!std::isfinite(v)) return "N/A";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    std::string s = buf;
    // Avoid "-0.000" when a tiny negative rounds to zero.
    if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
    return s;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string md_cell(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '|') out += "\\|";
        else if (c == '\n' || c == '\r') out += ' ';
        else out += c;
    }
    return out;
}

// Display width in code points, so UTF-8 labels such as kappa align.
std::size_t width(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) n += (c & 0xC0) != 0x80 ? 1 : 0;
    return n;
}

std::string pad(const std::string& s, std::size_t w, bool right) {
    const std::string fill(w - std::min(w, width(s)), ' ');
    return right ? fill + s : s + fill;
}

std::string render_markdown(const EvalReport& report) {
    std::string out;
    for (const auto& t : report.tables) {
        if (!out.empty()) out += "\n";
        out += "### " + (t.title.empty() ? t.name : t.title) + "\n\n";
        std::vector<std::size_t> w(t.columns.size(), 3);
        for (std::size_t c = 0; c < t.columns.size(); ++c) w[c] = std::max(w[c], width(md_cell(t.columns[c])));
        for (const auto& row : t.rows) {
            for (std::size_t c = 0; c < row.size(); ++c) w[c] = std::max(w[c], width(md_cell(row[c])));
        }
        auto line = [&](const std::vector<std::string>& cells) {
            std::string l = "|";
            for (std::size_t c = 0; c < cells.size(); ++c) l += " " + pad(md_cell(cells[c]), w[c], c > 0) + " |";
            return l + "\n";
        };
        out += line(t.columns);
        std::string sep = "|";
        for (std::size_t c = 0; c < w.size(); ++c) {
            sep += " " + (c > 0 ? std::string(w[c] - 1, '-') + ":" : std::string(w[c], '-')) + " |";
        }
        out += sep + "\n";
        for (const auto& row : t.rows) out += line(row);
    }
    return out;
}

std::string render_csv(const EvalReport& report) {
    std::string out = "table,row,column,value\r\n";
    for (const auto& t : report.tables) {
        const std::size_t keys = std::min(t.key_columns, t.columns.size());
        for (const auto& row : t.rows) {
            std::string label;
            for (std::size_t c = 0; c < keys; ++c) label += (c ? " / " : "") + row[c];
            for (std::size_t c = keys; c < row.size(); ++c) {
                out += csv_field(t.name) + "," + csv_field(label) + "," + csv_field(t.columns[c]) + "," +
                       csv_field(row[c]) + "\r\n";
            }
        }
    }
    return out;
}

}  // namespace

std::string metric_cell(double v) { return fixed(v, 3); }
std::string percent_cell(double percentage) { return fixed(percentage, 1); }

std::string signed_metric_cell(double v) {
    std::string s = fixed(v, 3);
    if (s != "N/A" && s.front() != '-') s = "+" + s;
    return s;
}

std::string count_cell(long long v) { return std::to_string(v); }

std::string optional_metric_cell(std::optional<double> v) { return v ? metric_cell(*v) : "N/A"; }

void ReportTable::add_row(std::vector<std::string> row) {
    if (row.size() != columns.size()) {
        throw InvalidArgument("table " + name + ": row has " + std::to_string(row.size()) + " cells, expected " +
                              std::to_string(columns.size()));
    }
    rows.push_back(std::move(row));
}

const ReportTable* EvalReport::find(std::string_view name) const {
    for (const auto& t : tables) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

void to_json(json& j, const ReportTable& t) {
    j = json{{"name", t.name},
             {"title", t.title},
             {"columns", t.columns},
             {"rows", t.rows},
             {"key_columns", t.key_columns}};
}

void from_json(const json& j, ReportTable& t) {
    t.name = j.at("name").get<std::string>();
    t.title = j.value("title", std::string{});
    t.columns = j.at("columns").get<std::vector<std::string>>();
    t.key_columns = j.value("key_columns", std::size_t{1});
    t.rows.clear();
    for (const auto& row : j.at("rows")) t.add_row(row.get<std::vector<std::string>>());
}

void to_json(json& j, const EvalReport& r) { j = json{{"metadata", r.metadata}, {"tables", r.tables}}; }

void from_json(const json& j, EvalReport& r) {
    r.metadata = j.value("metadata", json::object());
    r.tables = j.value("tables", std::vector<ReportTable>{});
}

ReportFormat parse_report_format(std::string_view s) {
    if (s == "json") return ReportFormat::json;
    if (s == "csv") return ReportFormat::csv;
    if (s == "md" || s == "markdown" || s == "markdown-table") return ReportFormat::markdown;
    throw InvalidArgument("unknown report format '" + std::string(s) + "'");
}

std::string render_report(const EvalReport& report, ReportFormat format) {
    switch (format) {
        case ReportFormat::json: return json(report).dump(2) + "\n";
        case ReportFormat::csv: return render_csv(report);
        case ReportFormat::markdown: return render_markdown(report);
    }
    return {};
}

EvalReport merge_reports(const std::vector<EvalReport>& fragments) {
    EvalReport out;
    for (const auto& f : fragments) {
        out.metadata.merge_patch(f.metadata);
        for (const auto& t : f.tables) {
            auto it = std::find_if(out.tables.begin(), out.tables.end(),
                                   [&](const ReportTable& x) { return x.name == t.name; });
            if (it != out.tables.end()) *it = t;
            else out.tables.push_back(t);
        }
    }
    return out;
}

}  // namespace fbeval
