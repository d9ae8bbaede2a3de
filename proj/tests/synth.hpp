#pragma once

// Builders for small synthetic records shared by the test binaries.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fbeval/core.hpp"

namespace synth {

inline fbeval::FeedbackUnit unit(const std::string& paper, const std::string& reviewer, const std::string& text,
                                 bool successful = true) {
    fbeval::FeedbackUnit u;
    u.paper_id = paper;
    u.reviewer_id = reviewer;
    u.text = text;
    u.validity = successful ? fbeval::Validity::agreed : fbeval::Validity::rebutted;
    u.action = fbeval::AuthorAction::will_revise;
    u.id = fbeval::make_unit_id(paper, reviewer, text);
    return u;
}

inline fbeval::ReviewThread thread(const std::string& reviewer, const std::string& review,
                                   const std::string& reply = {}) {
    fbeval::ReviewThread t;
    t.reviewer_id = reviewer;
    t.turns.push_back({fbeval::Speaker::reviewer, review, std::nullopt});
    if (!reply.empty()) t.turns.push_back({fbeval::Speaker::author, reply, std::nullopt});
    return t;
}

inline fbeval::PaperRecord paper(const std::string& id, int year = 2024,
                                 fbeval::Decision decision = fbeval::Decision::accepted,
                                 const std::vector<std::string>& reviewers = {"R1", "R2"}) {
    fbeval::PaperRecord p;
    p.paper_id = id;
    p.title = "Title of " + id;
    p.abstract = "Abstract of " + id;
    p.body_markdown = "# " + id + "\n\nBody text.";
    p.venue_year = year;
    p.decision = decision;
    for (const auto& r : reviewers) p.threads.push_back(thread(r, "Review by " + r, "Reply to " + r));
    return p;
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("fbeval_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream(path, std::ios::binary) << text;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace synth
