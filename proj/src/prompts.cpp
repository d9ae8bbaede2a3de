#include <regex>
#include <set>

#include "fbeval/error.hpp"
#include "fbeval/judgeclient.hpp"

namespace fbeval {

std::vector<std::string> PromptTemplate::placeholders() const {
    static const std::regex pattern(R"(\{\{([a-z_0-9]+)\}\})");
    std::set<std::string> names;
    for (const std::string* text : {&system_text, &user_text}) {
        for (auto it = std::sregex_iterator(text->begin(), text->end(), pattern); it != std::sregex_iterator(); ++it) {
            names.insert((*it)[1].str());
        }
    }
    return {names.begin(), names.end()};
}

RenderedPrompt render(const PromptTemplate& tmpl, const Bindings& bindings) {
    auto fill = [&](const std::string& text) {
        std::string out;
        std::size_t pos = 0;
        while (true) {
            const std::size_t open = text.find("{{", pos);
            if (open == std::string::npos) break;
            const std::size_t close = text.find("}}", open + 2);
            if (close == std::string::npos) break;
            const std::string name = text.substr(open + 2, close - open - 2);
            auto it = bindings.find(name);
            if (it == bindings.end()) {
                throw InvalidArgument("template " + tmpl.name + ": placeholder '" + name + "' is not bound");
            }
            out.append(text, pos, open - pos);
            out.append(it->second);
            pos = close + 2;
        }
        out.append(text, pos, std::string::npos);
        return out;
    };
    return {fill(tmpl.system_text), fill(tmpl.user_text)};
}

namespace {

json string_enum(std::initializer_list<const char*> values) {
    json e = json::array();
    for (const char* v : values) e.push_back(v);
    return json{{"type", "string"}, {"enum", e}};
}

json optional_string() { return json{{"type", json::array({"string", "null"})}}; }

PromptTemplate parse_thread_template() {
    PromptTemplate t;
    t.name = "parse_thread";
    t.version = 1;
    t.system_text =
        "You are a helpful assistant, an expert at analyzing academic peer review responses and "
        "extracting feedback.";
    // Condensed label definitions; bump the version when they change.
    t.user_text =
        "You will receive a conversation between *reviewers* and *authors* for an academic paper.\n"
        "Your task is to **parse each reviewer feedback item** into a **self-contained unit** and\n"
        "evaluate the **corresponding author response**. Ignore purely positive feedback with no\n"
        "actionable critique, question, or suggestion.\n\n"
        "For **each feedback unit**, extract and annotate the following fields:\n"
        "1. feedback_text: rewrite the reviewer feedback as a clear, standalone unit, preserving the\n"
        "   original text as closely as possible. Resolve references such as \"this\" or \"above\".\n"
        "2. author_response_text: rewrite the author response as a clear, standalone unit,\n"
        "   preserving tone and first-person pronouns.\n"
        "3. validity: did the authors agree the feedback is valid?\n"
        "   agreed_by_authors | rebutted_by_authors | unclear\n"
        "4. author_action: what did the authors commit to do?\n"
        "   will_revise | defer_future_work | point_to_existing_content | no_revision_accept |\n"
        "   no_revision_contest | no_action_other | unclear_or_no_response\n"
        "5. dimensions: the parts of the feedback that state the goal (feed_up), the gap\n"
        "   (feed_back) and the next steps (feed_forward); null when absent.\n"
        "6. aspects: emphasized aspects, chosen from: Add Experiments on More Datasets, Add Ablations\n"
        "   Experiments, Algorithm Efficiency, Theoretical Soundness, Implications of the Research,\n"
        "   Ethical Aspects, Missing Citations, Novelty, Clarity and Presentation, Comparison to\n"
        "   Previous Studies, Reproducibility.\n\n"
        "Return output strictly as JSON:\n"
        "{\"feedback_units\": [{\"feedback_text\": str, \"author_response_text\": str|null,\n"
        "  \"validity\": str, \"author_action\": str,\n"
        "  \"dimensions\": {\"feed_up\": str|null, \"feed_back\": str|null, \"feed_forward\": str|null},\n"
        "  \"aspects\": [str]}],\n"
        " \"skipped_positive_count\": int}\n\n"
        "Input:\n{{conversation_text}}";
    const json unit = {
        {"type", "object"},
        {"required", {"feedback_text", "validity", "author_action", "dimensions", "aspects"}},
        {"properties",
         {{"feedback_text", {{"type", "string"}}},
          {"author_response_text", optional_string()},
          {"validity", string_enum({"agreed_by_authors", "rebutted_by_authors", "unclear"})},
          {"author_action", string_enum({"will_revise", "defer_future_work", "point_to_existing_content",
                                         "no_revision_accept", "no_revision_contest", "no_action_other",
                                         "unclear_or_no_response"})},
          {"dimensions",
           {{"type", "object"},
            {"properties",
             {{"feed_up", optional_string()}, {"feed_back", optional_string()}, {"feed_forward", optional_string()}}}}},
          {"aspects", {{"type", "array"}, {"items", {{"type", "string"}}}}}}}};
    t.response_schema = {
        {"type", "object"},
        {"required", {"feedback_units"}},
        {"properties",
         {{"feedback_units", {{"type", "array"}, {"items", unit}}},
          {"skipped_positive_count", {{"type", "integer"}, {"minimum", 0}}}}}};
    return t;
}

PromptTemplate corrupt_template() {
    PromptTemplate t;
    t.name = "corrupt_feedback";
    t.version = 1;
    t.system_text =
        "You are a text transformation assistant. You rewrite reviewer feedback by deliberately "
        "corrupting exactly one quality dimension at a time while preserving all others.";
    t.user_text =
        "Paper title: {{title}}\n\nAbstract: {{abstract}}\n\nOriginal reviewer feedback:\n{{feedback}}\n\n"
        "Produce five rewrites of the feedback, each degrading a single dimension:\n"
        "- generic: remove all paper-specific details so it reads as boilerplate for any paper in the field.\n"
        "- vague: keep paper-specific references but strip concrete questions, examples and guidance.\n"
        "- inaccurate: introduce plausible but factually wrong claims about the paper.\n"
        "- nonessential: shift focus from core fixable issues to peripheral or stylistic concerns.\n"
        "- unsupportive: replace constructive, hedged language with blunt or dismissive phrasing.\n\n"
        "Return a JSON object with exactly the keys generic, vague, inaccurate, nonessential and "
        "unsupportive, each holding the full rewritten feedback as a string.";
    json props = json::object();
    for (const char* k : {"generic", "vague", "inaccurate", "nonessential", "unsupportive"}) {
        props[k] = {{"type", "string"}};
    }
    t.response_schema = {{"type", "object"},
                         {"required", {"generic", "vague", "inaccurate", "nonessential", "unsupportive"}},
                         {"properties", props}};
    return t;
}

PromptTemplate verify_template() {
    PromptTemplate t;
    t.name = "verify_corruption";
    t.version = 1;
    t.system_text =
        "You judge AI-generated text transformations in academic peer review: identify which quality "
        "dimension has been corrupted and evaluate the quality of the corruption.";
    t.user_text =
        "Paper title: {{title}}\n\nAbstract: {{abstract}}\n\nOriginal reviewer feedback:\n{{feedback}}\n\n"
        "Rewritten variants (the corrupted dimension of each is unknown to you):\n{{rewrites}}\n\n"
        "For each rewrite, predict the corrupted dimension (generic, vague, inaccurate, nonessential, "
        "unsupportive) and score:\n"
        "- target_degradation_score (1-3): how clearly that dimension is degraded (3 = clearly).\n"
        "- collateral_preservation_score (1-3): how well all other dimensions are preserved (3 = fully).\n\n"
        "Return a JSON object {\"results\": [...]} ordered by rewrite index, each entry with "
        "rewrite_index, predicted_dimension, target_degradation_score, collateral_preservation_score "
        "and reasoning.";
    const json entry = {
        {"type", "object"},
        {"required", {"rewrite_index", "predicted_dimension", "target_degradation_score",
                      "collateral_preservation_score"}},
        {"properties",
         {{"rewrite_index", {{"type", "integer"}, {"minimum", 0}}},
          {"predicted_dimension", string_enum({"generic", "vague", "inaccurate", "nonessential", "unsupportive"})},
          {"target_degradation_score", {{"type", "integer"}, {"minimum", 1}, {"maximum", 3}}},
          {"collateral_preservation_score", {{"type", "integer"}, {"minimum", 1}, {"maximum", 3}}},
          {"reasoning", {{"type", "string"}}}}}};
    t.response_schema = {{"type", "object"},
                         {"required", {"results"}},
                         {"properties", {{"results", {{"type", "array"}, {"items", entry}}}}}};
    return t;
}

PromptTemplate match_template() {
    PromptTemplate t;
    t.name = "match_feedback";
    t.version = 1;
    t.system_text = "";
    t.user_text =
        "You are given an abstract of a paper and a pair of feedback items about the paper.\n\n"
        "Your task: decide whether the two feedback items match.\n\n"
        "Definition of a match:\n"
        "The two feedback include at least one concrete point that shares the following aspects.\n"
        "- Targeted part of paper\n- Deficiency pointed out\n- Quality dimension addressed\n- Action requested\n\n"
        "Do NOT mark as a match if:\n"
        "- They only refer to the same broad section/topic but raise different issues.\n"
        "- One is praise/positive framing while the other is criticism/negative framing (or they "
        "otherwise differ in stance).\n"
        "- They use similar keywords but the underlying substance or requested change is different.\n\n"
        "Paper abstract: {{abstract}}\n\nFeedback 1: {{feedback1}}\n\nFeedback 2: {{feedback2}}\n\n"
        "Return a JSON object:\n"
        "- \"match\": \"1\" if they match, otherwise \"0\"\n"
        "- \"explanation\": a brief justification focusing on the specific overlap (or lack of it)\n\n"
        "Output format:\n[\n  {\n    \"match\": \"0/1\",\n    \"explanation\": \"<brief explanation>\"\n  }\n]";
    const json verdict = {{"type", "object"},
                          {"required", {"match"}},
                          {"properties", {{"match", string_enum({"0", "1"})}, {"explanation", {{"type", "string"}}}}}};
    t.response_schema = {{"anyOf", json::array({verdict, {{"type", "array"}, {"minItems", 1}, {"items", verdict}}})}};
    return t;
}

PromptTemplate quality_template() {
    PromptTemplate t;
    t.name = "score_quality";
    t.version = 1;
    t.system_text =
        "You are an expert meta-reviewer evaluating peer-review feedback impartially and based on "
        "evidence, citing specific phrases to justify every score.";
    t.user_text =
        "Venue: {{venue}}\n\nPaper excerpt:\n{{paper_excerpt}}\n\nReviewer feedback:\n{{feedback}}\n\n"
        "Score the feedback on each dimension from 1 to 5:\n"
        "- accuracy: are claims about the paper's content, methods and results factually correct?\n"
        "- prioritisation: does it focus on high-impact scientific issues (validity, novelty, "
        "reproducibility) over cosmetic ones?\n"
        "- constructive_tone: is it collegial, respectful and improvement-oriented?\n"
        "- paper_specific_grounding: is it anchored to named components, results and claims of this "
        "paper rather than generic boilerplate?\n"
        "- actionability: are revision directions specific, feasible and tied to concrete sections or "
        "analyses?\n\n"
        "Return JSON: {\"<dimension>\": {\"score\": int, \"justification\": str}, ...} for all five "
        "dimensions, optionally with a \"summary\" string.";
    const json dim = {{"type", "object"},
                      {"required", {"score"}},
                      {"properties",
                       {{"score", {{"type", "integer"}, {"minimum", 1}, {"maximum", 5}}},
                        {"justification", {{"type", "string"}}}}}};
    json props = json::object();
    for (const char* k : {"accuracy", "prioritisation", "constructive_tone", "paper_specific_grounding", "actionability"}) {
        props[k] = dim;
    }
    t.response_schema = {{"type", "object"},
                         {"required", {"accuracy", "prioritisation", "constructive_tone", "paper_specific_grounding",
                                       "actionability"}},
                         {"properties", props}};
    return t;
}

PromptTemplate predict_template() {
    PromptTemplate t;
    t.name = "predict_response";
    t.version = 1;
    t.system_text = "You predict how the authors of a paper will respond to a piece of reviewer feedback.";
    t.user_text =
        "Paper:\n{{paper}}\n\nReviewer feedback:\n{{feedback}}\n\n"
        "Predict the author response. Return JSON with keys validity (agreed_by_authors, "
        "rebutted_by_authors or unclear), author_action (will_revise, defer_future_work, "
        "point_to_existing_content, no_revision_accept, no_revision_contest, no_action_other or "
        "unclear_or_no_response) and author_response_text.";
    // Labels are checked when mapped into the core enums, so an out-of-vocabulary
    // label surfaces as a mapping error rather than a repair loop.
    t.response_schema = {{"type", "object"},
                         {"required", {"validity", "author_action"}},
                         {"properties",
                          {{"validity", {{"type", "string"}}},
                           {"author_action", {{"type", "string"}}},
                           {"author_response_text", optional_string()}}}};
    return t;
}

PromptTemplate generate_template() {
    PromptTemplate t;
    t.name = "generate_feedback";
    t.version = 1;
    t.system_text = "";
    t.user_text =
        "You are an expert researcher. Please review the following research paper and generate a set "
        "of constructive feedback to improve it.\n\nPaper content: {{paper_content}}";
    t.response_schema = nullptr;
    return t;
}

}  // namespace

const PromptRegistry& PromptRegistry::builtin() {
    static const PromptRegistry registry = [] {
        PromptRegistry r;
        r.add(parse_thread_template());
        r.add(corrupt_template());
        r.add(verify_template());
        r.add(match_template());
        r.add(quality_template());
        r.add(predict_template());
        r.add(generate_template());
        return r;
    }();
    return registry;
}

const PromptTemplate& PromptRegistry::get(const std::string& name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw InvalidArgument("unknown prompt template '" + name + "'");
    return it->second;
}

std::map<std::string, std::string> PromptRegistry::versions() const {
    std::map<std::string, std::string> out;
    for (const auto& [name, t] : templates_) out[name] = t.versioned_name();
    return out;
}

void PromptRegistry::add(PromptTemplate tmpl) {
    const std::string name = tmpl.name;
    templates_[name] = std::move(tmpl);
}

}  // namespace fbeval
