#include "fbeval/ingest.hpp"

#include <algorithm>
#include <fstream>

#include "fbeval/error.hpp"
#include "fbeval/rng.hpp"

namespace fbeval {

namespace fs = std::filesystem;

const PaperRecord& DatasetStore::get(const std::string& paper_id) const {
    auto it = records.find(paper_id);
    if (it == records.end()) throw IngestError("unknown paper_id '" + paper_id + "'");
    return it->second;
}

std::vector<const PaperRecord*> DatasetStore::split(const std::string& name) const {
    auto it = manifest.find(name);
    if (it == manifest.end()) throw IngestError("unknown split '" + name + "'");
    std::vector<const PaperRecord*> out;
    out.reserve(it->second.size());
    for (const auto& id : it->second) out.push_back(&get(id));
    return out;
}

std::vector<const PaperRecord*> DatasetStore::all() const {
    std::vector<const PaperRecord*> out;
    out.reserve(records.size());
    for (const auto& [_, r] : records) out.push_back(&r);
    return out;
}

std::map<std::string, DatasetStore::Counts> DatasetStore::counts() const {
    std::map<std::string, Counts> out;
    auto add = [](Counts& c, const PaperRecord& r) {
        ++c.papers;
        if (r.decision == Decision::accepted) ++c.accepted;
        else if (r.decision == Decision::rejected) ++c.rejected;
        else ++c.unknown;
    };
    for (const auto& [name, ids] : manifest) {
        Counts& c = out[name];
        for (const auto& id : ids) add(c, get(id));
    }
    Counts& total = out["all"];
    for (const auto& [_, r] : records) add(total, r);
    return out;
}

DatasetStore load_corpus(const fs::path& root) {
    const fs::path manifest_path = root / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IngestError("missing manifest: " + manifest_path.string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw IngestError(manifest_path.string() + ": " + e.what());
    }

    DatasetStore store;
    store.root = root;
    store.format_version = manifest.value("format_version", 0);
    if (store.format_version != DatasetStore::kFormatVersion) {
        throw IngestError(manifest_path.string() + ": unsupported format_version " +
                          std::to_string(store.format_version));
    }
    try {
        store.manifest = manifest.at("splits").get<std::map<std::string, std::vector<std::string>>>();
    } catch (const json::exception& e) {
        throw IngestError(manifest_path.string() + ": bad splits: " + e.what());
    }

    std::map<std::string, std::string> owner;  // paper_id -> split
    for (const auto& [name, ids] : store.manifest) {
        for (const auto& id : ids) {
            auto [it, fresh] = owner.emplace(id, name);
            if (!fresh) {
                throw IngestError(manifest_path.string() + ": duplicate paper_id '" + id + "' in splits '" +
                                  it->second + "' and '" + name + "'");
            }
        }
    }

    for (const auto& [name, ids] : store.manifest) {
        const fs::path file = root / (name + ".jsonl");
        std::ifstream records(file);
        if (!records) throw IngestError("missing split file: " + file.string());
        std::string line;
        std::size_t line_no = 0;
        std::set<std::string> seen;
        while (std::getline(records, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            PaperRecord record;
            try {
                record = json::parse(line).get<PaperRecord>();
                validate(record);
            } catch (const std::exception& e) {
                throw IngestError(file.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
            }
            if (!seen.insert(record.paper_id).second || store.records.contains(record.paper_id)) {
                throw IngestError(file.string() + ":" + std::to_string(line_no) + ": duplicate paper_id '" +
                                  record.paper_id + "'");
            }
            auto own = owner.find(record.paper_id);
            if (own == owner.end() || own->second != name) {
                throw IngestError(file.string() + ":" + std::to_string(line_no) + ": paper_id '" + record.paper_id +
                                  "' is not listed under split '" + name + "'");
            }
            store.records.emplace(record.paper_id, std::move(record));
        }
        for (const auto& id : ids) {
            if (!seen.contains(id)) throw IngestError(file.string() + ": missing record for paper_id '" + id + "'");
        }
    }
    return store;
}

std::string canonical_record_line(const PaperRecord& record) { return json(record).dump(); }

void save_corpus(const DatasetStore& store, const fs::path& root) {
    fs::create_directories(root);
    json manifest = {{"format_version", store.format_version}, {"splits", store.manifest}};
    {
        std::ofstream out(root / "manifest.json", std::ios::binary | std::ios::trunc);
        out << manifest.dump(2) << '\n';
        if (!out) throw IngestError("cannot write " + (root / "manifest.json").string());
    }
    for (const auto& [name, ids] : store.manifest) {
        const fs::path file = root / (name + ".jsonl");
        std::ofstream out(file, std::ios::binary | std::ios::trunc);
        for (const auto& id : ids) out << canonical_record_line(store.get(id)) << '\n';
        if (!out) throw IngestError("cannot write " + file.string());
    }
}

std::vector<std::string> build_test_split(const DatasetStore& store, const TestSplitConfig& config,
                                          std::uint64_t seed) {
    for (std::size_t i = 0; i < config.pools.size(); ++i) {
        const auto& p = config.pools[i];
        if (p.first_year > p.last_year) throw ConfigError("test split pool has first_year > last_year");
        for (std::size_t j = 0; j < i; ++j) {
            const auto& q = config.pools[j];
            if (p.first_year <= q.last_year && q.first_year <= p.last_year) {
                throw ConfigError("test split pools have overlapping year ranges");
            }
        }
    }

    std::vector<std::string> out;
    for (std::size_t i = 0; i < config.pools.size(); ++i) {
        const auto& pool = config.pools[i];
        std::vector<std::string> accepted, rejected;
        for (const auto& [id, r] : store.records) {
            if (r.venue_year < pool.first_year || r.venue_year > pool.last_year) continue;
            if (r.decision == Decision::accepted) accepted.push_back(id);
            else if (r.decision == Decision::rejected) rejected.push_back(id);
        }
        const std::size_t want_accepted = pool.size / 2;
        const std::size_t want_rejected = pool.size - want_accepted;
        const std::string range = std::to_string(pool.first_year) + "-" + std::to_string(pool.last_year);
        if (accepted.size() < want_accepted || rejected.size() < want_rejected) {
            throw IngestError("test split pool " + range + " needs " + std::to_string(want_accepted) +
                              " accepted and " + std::to_string(want_rejected) + " rejected papers, has " +
                              std::to_string(accepted.size()) + " and " + std::to_string(rejected.size()));
        }
        Rng rng_a(derive_seed(seed, 2 * i));
        Rng rng_r(derive_seed(seed, 2 * i + 1));
        rng_a.shuffle(accepted);
        rng_r.shuffle(rejected);
        out.insert(out.end(), accepted.begin(), accepted.begin() + static_cast<std::ptrdiff_t>(want_accepted));
        out.insert(out.end(), rejected.begin(), rejected.begin() + static_cast<std::ptrdiff_t>(want_rejected));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Annotations

void to_json(json& j, const AnnotationRecord& a) {
    j = json{{"unit_id", a.unit_id}, {"annotator_id", a.annotator_id}};
    if (a.validity) j["validity"] = to_string(*a.validity);
    if (a.action) j["action"] = to_string(*a.action);
    if (a.match_label) j["match_label"] = *a.match_label;
    if (!a.likert.empty()) j["likert"] = a.likert;
}

void from_json(const json& j, AnnotationRecord& a) {
    a = AnnotationRecord{};
    a.unit_id = j.at("unit_id").get<std::string>();
    a.annotator_id = j.at("annotator_id").get<std::string>();
    if (auto it = j.find("validity"); it != j.end() && !it->is_null()) a.validity = parse_validity(it->get<std::string>());
    if (auto it = j.find("action"); it != j.end() && !it->is_null()) a.action = parse_action(it->get<std::string>());
    if (auto it = j.find("match_label"); it != j.end() && !it->is_null()) a.match_label = it->get<bool>();
    if (auto it = j.find("likert"); it != j.end()) a.likert = it->get<std::map<std::string, int>>();
}

std::vector<AnnotationRecord> load_annotations(const fs::path& path, const std::set<std::string>* roster) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open annotations: " + path.string());
    std::vector<AnnotationRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
        AnnotationRecord rec;
        try {
            rec = json::parse(line).get<AnnotationRecord>();
        } catch (const std::exception& e) {
            throw IngestError(where + "malformed annotation: " + e.what());
        }
        for (const auto& [dim, v] : rec.likert) {
            if (v < 1 || v > 5) {
                throw IngestError(where + "likert value " + std::to_string(v) + " for '" + dim + "' is outside 1..5");
            }
        }
        if (!rec.validity && !rec.action && !rec.match_label && rec.likert.empty()) {
            throw IngestError(where + "annotation carries no label");
        }
        if (roster && !roster->contains(rec.annotator_id)) {
            throw IngestError(where + "unknown annotator '" + rec.annotator_id + "'");
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::map<std::string, bool> majority_match(const std::vector<AnnotationRecord>& records) {
    std::map<std::string, std::pair<int, int>> votes;  // yes, no
    for (const auto& r : records) {
        if (!r.match_label) continue;
        auto& v = votes[r.unit_id];
        (*r.match_label ? v.first : v.second)++;
    }
    std::map<std::string, bool> out;
    for (const auto& [id, v] : votes) out[id] = v.first > v.second;
    return out;
}

// ---------------------------------------------------------------------------
// OpenReview export

namespace {

std::string content_value(const json& v) {
    if (v.is_object() && v.contains("value")) return content_value(v.at("value"));
    if (v.is_string()) return v.get<std::string>();
    return {};
}

// Review and comment fields in reading order; anything else follows sorted.
std::string note_text(const json& content) {
    static const std::vector<std::string> order = {"title",   "summary",   "strengths", "weaknesses",
                                                   "questions", "review",  "comment",   "rebuttal"};
    std::string out;
    std::set<std::string> used;
    auto append = [&](const std::string& key) {
        auto it = content.find(key);
        if (it == content.end()) return;
        used.insert(key);
        const std::string text = content_value(*it);
        if (text.empty()) return;
        if (!out.empty()) out += "\n\n";
        out += text;
    };
    for (const auto& key : order) append(key);
    for (const auto& [key, _] : content.items()) {
        if (!used.contains(key) && key != "rating" && key != "confidence") append(key);
    }
    return out;
}

std::optional<std::string> reviewer_of(const json& signatures) {
    for (const auto& s : signatures) {
        const std::string sig = s.get<std::string>();
        const auto pos = sig.rfind("Reviewer_");
        if (pos != std::string::npos) return sig.substr(pos);
    }
    return std::nullopt;
}

bool by_authors(const json& signatures) {
    for (const auto& s : signatures) {
        const std::string sig = s.get<std::string>();
        if (sig.size() >= 7 && sig.compare(sig.size() - 7, 7, "Authors") == 0) return true;
    }
    return false;
}

Decision decision_from(const std::string& text) {
    std::string lower;
    for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (lower.find("accept") != std::string::npos) return Decision::accepted;
    if (lower.find("reject") != std::string::npos) return Decision::rejected;
    return Decision::unknown;
}

}  // namespace

std::vector<PaperRecord> import_openreview(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open export: " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw IngestError(path.string() + ": " + e.what());
    }

    std::vector<PaperRecord> out;
    std::set<std::string> seen;
    for (const auto& paper : doc.at("papers")) {
        PaperRecord r;
        try {
            r.paper_id = paper.at("forum").get<std::string>();
            r.title = paper.value("title", std::string{});
            r.abstract = paper.value("abstract", std::string{});
            r.body_markdown = paper.value("body_markdown", std::string{});
            r.venue_year = paper.value("venue_year", 0);
            r.decision = decision_from(paper.value("decision", std::string{}));
        } catch (const json::exception& e) {
            throw IngestError(path.string() + ": bad paper entry: " + e.what());
        }
        if (!seen.insert(r.paper_id).second) {
            throw IngestError(path.string() + ": duplicate paper_id '" + r.paper_id + "'");
        }

        struct Note {
            std::string id, replyto;
            json signatures;
            std::string text;
            std::int64_t cdate = 0;
        };
        std::vector<Note> notes;
        for (const auto& n : paper.value("notes", json::array())) {
            Note note;
            note.id = n.at("id").get<std::string>();
            note.replyto = n.value("replyto", std::string{});
            note.signatures = n.value("signatures", json::array());
            note.text = note_text(n.value("content", json::object()));
            note.cdate = n.value("cdate", std::int64_t{0});
            notes.push_back(std::move(note));
        }
        std::stable_sort(notes.begin(), notes.end(), [](const Note& a, const Note& b) {
            return a.cdate != b.cdate ? a.cdate < b.cdate : a.id < b.id;
        });

        std::map<std::string, std::size_t> root_of;  // note id -> thread index
        for (const auto& note : notes) {
            auto reviewer = reviewer_of(note.signatures);
            if (note.replyto == r.paper_id) {
                if (!reviewer || note.text.empty()) continue;
                root_of[note.id] = r.threads.size();
                r.threads.push_back(ReviewThread{*reviewer, {Turn{Speaker::reviewer, note.text, std::to_string(note.cdate)}}});
                continue;
            }
            auto parent = root_of.find(note.replyto);
            if (parent == root_of.end()) continue;
            ReviewThread& thread = r.threads[parent->second];
            std::optional<Speaker> speaker;
            if (by_authors(note.signatures)) speaker = Speaker::author;
            else if (reviewer && *reviewer == thread.reviewer_id) speaker = Speaker::reviewer;
            if (!speaker || note.text.empty()) continue;
            root_of[note.id] = parent->second;
            thread.turns.push_back(Turn{*speaker, note.text, std::to_string(note.cdate)});
        }
        out.push_back(std::move(r));
    }
    std::sort(out.begin(), out.end(), [](const PaperRecord& a, const PaperRecord& b) { return a.paper_id < b.paper_id; });
    return out;
}

}  // namespace fbeval
