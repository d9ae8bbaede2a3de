#include "fbeval/judgeclient.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "fbeval/core.hpp"
#include "fbeval/error.hpp"
#include "fbeval/hash.hpp"
#include "fbeval/rng.hpp"
#include "fbeval/schema.hpp"

namespace fbeval {

void EndpointConfig::validate() const {
    if (max_concurrency < 1) throw ConfigError("endpoint " + model_name + ": max_concurrency must be >= 1");
    if (temperature < 0) throw ConfigError("endpoint " + model_name + ": temperature must be >= 0");
    if (requests_per_minute < 1) throw ConfigError("endpoint " + model_name + ": requests_per_minute must be >= 1");
    if (max_output_tokens < 1) throw ConfigError("endpoint " + model_name + ": max_output_tokens must be >= 1");
    if (max_retries < 0) throw ConfigError("endpoint " + model_name + ": max_retries must be >= 0");
}

void to_json(json& j, const EndpointConfig& e) {
    j = json{{"base_url", e.base_url},
             {"model_name", e.model_name},
             {"api_key_env", e.api_key_env},
             {"max_output_tokens", e.max_output_tokens},
             {"temperature", e.temperature},
             {"extra_params", e.extra_params},
             {"requests_per_minute", e.requests_per_minute},
             {"max_concurrency", e.max_concurrency},
             {"max_retries", e.max_retries},
             {"initial_backoff_ms", e.initial_backoff_ms},
             {"timeout_seconds", e.timeout_seconds}};
}

void from_json(const json& j, EndpointConfig& e) {
    EndpointConfig base;
    if (auto it = j.find("preset"); it != j.end()) {
        auto preset = endpoint_preset(it->get<std::string>());
        if (!preset) throw ConfigError("unknown endpoint preset '" + it->get<std::string>() + "'");
        base = *preset;
    }
    e.base_url = j.value("base_url", base.base_url);
    e.model_name = j.value("model_name", base.model_name);
    e.api_key_env = j.value("api_key_env", base.api_key_env);
    e.max_output_tokens = j.value("max_output_tokens", base.max_output_tokens);
    e.temperature = j.value("temperature", base.temperature);
    e.extra_params = j.value("extra_params", base.extra_params);
    e.requests_per_minute = j.value("requests_per_minute", base.requests_per_minute);
    e.max_concurrency = j.value("max_concurrency", base.max_concurrency);
    e.max_retries = j.value("max_retries", base.max_retries);
    e.initial_backoff_ms = j.value("initial_backoff_ms", base.initial_backoff_ms);
    e.timeout_seconds = j.value("timeout_seconds", base.timeout_seconds);
}

std::optional<EndpointConfig> endpoint_preset(const std::string& name) {
    EndpointConfig e;
    e.base_url = "https://api.openai.com/v1";
    e.api_key_env = "OPENAI_API_KEY";
    if (name == "gpt-4.1-parse") {
        e.model_name = "gpt-4.1-2025-04-14";
        e.temperature = 0.7;
        e.max_output_tokens = 10240;
    } else if (name == "gpt-5-mini-judge") {
        e.model_name = "gpt-5-mini-2025-08-07";
        e.temperature = 1.0;
        e.max_output_tokens = 4096;
        e.extra_params = {{"reasoning_effort", "medium"}, {"verbosity", "medium"}};
    } else if (name == "gpt-5.2-match") {
        e.model_name = "gpt-5.2-2025-12-11";
        e.temperature = 1.0;
        e.max_output_tokens = 8192;
    } else if (name == "text-embedding-3-small") {
        e.model_name = "text-embedding-3-small";
    } else {
        return std::nullopt;
    }
    return e;
}

// ---------------------------------------------------------------------------
// Stub backends

namespace {

json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
    }
}

std::string reply_text(const json& response) {
    return response.is_string() ? response.get<std::string>() : response.dump();
}

bool case_matches(const json& c, const Bindings& bindings) {
    const json when = c.value("when", json::object());
    auto value_of = [&](const std::string& key) -> const std::string* {
        auto it = bindings.find(key);
        return it == bindings.end() ? nullptr : &it->second;
    };
    auto direct = [&](const std::map<std::string, std::string>& swap) {
        for (const auto& [key, expected] : when.items()) {
            const std::string lookup = swap.count(key) ? swap.at(key) : key;
            const std::string* actual = value_of(lookup);
            if (!actual || *actual != expected.get<std::string>()) return false;
        }
        return true;
    };
    if (direct({})) return true;
    if (auto it = c.find("unordered"); it != c.end() && it->size() == 2) {
        const std::string a = (*it)[0].get<std::string>();
        const std::string b = (*it)[1].get<std::string>();
        return direct({{a, b}, {b, a}});
    }
    return false;
}

}  // namespace

StubBackend::StubBackend(json fixture) : fixture_(std::move(fixture)) {
    if (!fixture_.is_object()) throw ConfigError("stub fixture must be a JSON object");
}

std::shared_ptr<StubBackend> StubBackend::from_file(const std::filesystem::path& path) {
    return std::make_shared<StubBackend>(load_json_file(path));
}

ChatReply StubBackend::complete(const EndpointConfig&, const ChatRequest& request) {
    const std::string& name = request.tmpl->name;
    const json templates = fixture_.value("templates", json::object());
    auto entry = templates.find(name);
    if (entry == templates.end()) {
        throw JudgeTransportError("stub fixture has no responses for template '" + name + "'");
    }
    for (const auto& c : entry->value("cases", json::array())) {
        if (case_matches(c, *request.bindings)) return {reply_text(c.at("response")), {}};
    }
    if (auto d = entry->find("default"); d != entry->end()) return {reply_text(*d), {}};
    throw JudgeTransportError("stub fixture has no matching case for template '" + name + "'");
}

StubEmbedder::StubEmbedder(std::size_t dimension, std::map<std::string, std::string> aliases)
    : dimension_(dimension), aliases_(std::move(aliases)) {
    if (dimension_ == 0) throw ConfigError("stub embedding dimension must be positive");
}

std::shared_ptr<StubEmbedder> StubEmbedder::from_fixture(const json& fixture) {
    std::map<std::string, std::string> aliases;
    if (auto it = fixture.find("embedding_aliases"); it != fixture.end()) {
        aliases = it->get<std::map<std::string, std::string>>();
    }
    return std::make_shared<StubEmbedder>(fixture.value("embedding_dimension", std::size_t{256}), std::move(aliases));
}

Vector StubEmbedder::embed_one(const std::string& text) const {
    auto alias = aliases_.find(text);
    const std::string& source = alias == aliases_.end() ? text : alias->second;
    Vector v(dimension_, 0.0);
    auto add = [&](std::string_view token) {
        const std::uint64_t h = fnv1a64(token);
        v[h % dimension_] += (h >> 63) ? -1.0 : 1.0;
    };
    std::string token;
    bool any = false;
    for (char c : source) {
        auto uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc)) {
            token.push_back(static_cast<char>(std::tolower(uc)));
        } else if (!token.empty()) {
            add(token);
            any = true;
            token.clear();
        }
    }
    if (!token.empty()) {
        add(token);
        any = true;
    }
    if (!any) add(source);
    bool nonzero = false;
    for (double x : v) nonzero = nonzero || x != 0.0;
    // Tokens can cancel exactly; fall back to the whole-text bucket.
    if (!nonzero) v[fnv1a64(source) % dimension_] = 1.0;
    normalize_l2(v);
    return v;
}

std::vector<Vector> StubEmbedder::embed(const EndpointConfig&, std::span<const std::string> texts) {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_one(t));
    return out;
}

// ---------------------------------------------------------------------------
// Rate limiting

RateLimiter::RateLimiter(int requests_per_minute, NowFn now, SleepFn sleep)
    : limit_(requests_per_minute), now_(std::move(now)), sleep_(std::move(sleep)) {
    if (limit_ < 1) throw ConfigError("requests_per_minute must be >= 1");
    if (!now_) now_ = [] { return Clock::now(); };
    if (!sleep_) sleep_ = [](Clock::duration d) { std::this_thread::sleep_for(d); };
}

void RateLimiter::acquire() {
    const auto window = std::chrono::seconds(60);
    std::unique_lock lock(mutex_);
    while (true) {
        const auto now = now_();
        while (!recent_.empty() && now - recent_.front() >= window) recent_.pop_front();
        if (static_cast<int>(recent_.size()) < limit_) {
            recent_.push_back(now);
            return;
        }
        const auto wait = recent_.front() + window - now;
        lock.unlock();
        sleep_(wait);
        lock.lock();
    }
}

ConcurrencyGate::ConcurrencyGate(int slots) : free_(slots) {
    if (slots < 1) throw ConfigError("max_concurrency must be >= 1");
}

void ConcurrencyGate::enter() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return free_ > 0; });
    --free_;
}

void ConcurrencyGate::leave() {
    {
        std::lock_guard lock(mutex_);
        ++free_;
    }
    cv_.notify_one();
}

// ---------------------------------------------------------------------------
// Cache

ResponseCache::ResponseCache(std::optional<std::filesystem::path> directory) : directory_(std::move(directory)) {
    if (directory_) std::filesystem::create_directories(*directory_);
}

std::filesystem::path ResponseCache::file_for(const std::string& key) const {
    return *directory_ / key.substr(0, 2) / (key + ".json");
}

std::optional<json> ResponseCache::get(const std::string& key) const {
    {
        std::shared_lock lock(mutex_);
        if (auto it = memory_.find(key); it != memory_.end()) return it->second;
    }
    if (!directory_) return std::nullopt;
    const auto path = file_for(key);
    std::ifstream in(path);
    if (!in) return std::nullopt;
    json value;
    try {
        value = json::parse(in);
    } catch (const json::exception&) {
        return std::nullopt;  // torn or foreign file: treat as a miss
    }
    std::unique_lock lock(mutex_);
    memory_.emplace(key, value);
    return value;
}

void ResponseCache::put(const std::string& key, const json& value) {
    std::unique_lock lock(mutex_);
    memory_[key] = value;
    if (!directory_) return;
    const auto path = file_for(key);
    std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << value.dump(2) << '\n';
        if (!out) throw PipelineError("cannot write cache entry " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Judge client

std::optional<json> extract_json(const std::string& text) {
    auto try_parse = [](std::string_view s) -> std::optional<json> {
        json v = json::parse(s.begin(), s.end(), nullptr, false);
        if (v.is_discarded()) return std::nullopt;
        return v;
    };
    std::string_view body = text;
    // Strip a ``` or ```json fence.
    if (auto fence = body.find("```"); fence != std::string_view::npos) {
        auto start = body.find('\n', fence);
        auto end = start == std::string_view::npos ? std::string_view::npos : body.find("```", start);
        if (end != std::string_view::npos) body = body.substr(start + 1, end - start - 1);
    }
    if (auto v = try_parse(body)) return v;
    const auto first = body.find_first_of("{[");
    if (first == std::string_view::npos) return std::nullopt;
    const char close = body[first] == '{' ? '}' : ']';
    const auto last = body.rfind(close);
    if (last == std::string_view::npos || last < first) return std::nullopt;
    return try_parse(body.substr(first, last - first + 1));
}

JudgeClient::JudgeClient(EndpointConfig endpoint, std::shared_ptr<ChatBackend> backend,
                         std::shared_ptr<ResponseCache> cache)
    : endpoint_(std::move(endpoint)), backend_(std::move(backend)), cache_(std::move(cache)) {
    if (!backend_) throw ConfigError("judge client needs a backend");
    if (!cache_) cache_ = std::make_shared<ResponseCache>();
}

std::string JudgeClient::cache_key(const PromptTemplate& tmpl, const RenderedPrompt& prompt) const {
    const json material = {{"template", tmpl.versioned_name()},
                           {"system", prompt.system},
                           {"user", prompt.user},
                           {"model", endpoint_.model_name},
                           {"temperature", endpoint_.temperature},
                           {"max_output_tokens", endpoint_.max_output_tokens},
                           {"extra_params", endpoint_.extra_params}};
    return sha256_hex(material.dump());
}

JudgeResponse JudgeClient::complete(const PromptTemplate& tmpl, const Bindings& bindings) {
    ChatRequest request;
    request.tmpl = &tmpl;
    request.bindings = &bindings;
    request.prompt = render(tmpl, bindings);
    const std::string key = cache_key(tmpl, request.prompt);

    if (auto cached = cache_->get(key)) {
        JudgeResponse r;
        r.raw_text = cached->value("raw_text", std::string{});
        r.parsed = cached->value("parsed", json());
        r.usage.prompt_tokens = cached->value("prompt_tokens", std::int64_t{0});
        r.usage.completion_tokens = cached->value("completion_tokens", std::int64_t{0});
        r.prompt_version = tmpl.versioned_name();
        r.cache_hit = true;
        return r;
    }

    auto check = [&](const std::string& raw, json& parsed) -> std::optional<std::string> {
        if (tmpl.response_schema.is_null()) {
            parsed = nullptr;
            return std::nullopt;
        }
        auto value = extract_json(raw);
        if (!value) return std::string("reply is not valid JSON");
        if (auto err = validate_schema(*value, tmpl.response_schema)) return err;
        parsed = std::move(*value);
        return std::nullopt;
    };

    ChatReply reply = backend_->complete(endpoint_, request);
    json parsed;
    Usage usage = reply.usage;
    if (auto err = check(reply.text, parsed)) {
        request.repair_note = *err;
        reply = backend_->complete(endpoint_, request);
        usage.prompt_tokens += reply.usage.prompt_tokens;
        usage.completion_tokens += reply.usage.completion_tokens;
        if (auto again = check(reply.text, parsed)) {
            throw JudgeFormatError("template " + tmpl.versioned_name() + ": " + *again, reply.text);
        }
    }

    JudgeResponse r;
    r.raw_text = reply.text;
    r.parsed = parsed;
    r.usage = usage;
    r.prompt_version = tmpl.versioned_name();
    cache_->put(key, json{{"raw_text", r.raw_text},
                          {"parsed", r.parsed},
                          {"prompt_tokens", usage.prompt_tokens},
                          {"completion_tokens", usage.completion_tokens},
                          {"prompt_version", r.prompt_version},
                          {"model", endpoint_.model_name}});
    return r;
}

// ---------------------------------------------------------------------------
// Embeddings

Embedder::Embedder(EndpointConfig endpoint, std::shared_ptr<EmbeddingBackend> backend,
                   std::shared_ptr<ResponseCache> cache)
    : endpoint_(std::move(endpoint)), backend_(std::move(backend)), cache_(std::move(cache)) {
    if (!backend_) throw ConfigError("embedder needs a backend");
    if (!cache_) cache_ = std::make_shared<ResponseCache>();
}

std::vector<Vector> Embedder::embed(std::span<const std::string> texts) {
    if (texts.empty()) throw InvalidArgument("embed needs at least one text");
    std::vector<Vector> out(texts.size());
    std::vector<std::string> keys(texts.size());
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (normalize_text(texts[i]).empty()) throw InvalidArgument("cannot embed an empty string");
        keys[i] = sha256_hex("embed\x1f" + endpoint_.model_name + "\x1f" + texts[i]);
        if (auto hit = cache_->get(keys[i])) {
            out[i] = hit->get<Vector>();
        } else {
            missing.push_back(i);
        }
    }
    if (!missing.empty()) {
        std::vector<std::string> batch;
        batch.reserve(missing.size());
        for (std::size_t i : missing) batch.push_back(texts[i]);
        auto vectors = backend_->embed(endpoint_, batch);
        if (vectors.size() != batch.size()) throw JudgeTransportError("embedding backend returned wrong batch size");
        for (std::size_t j = 0; j < missing.size(); ++j) {
            normalize_l2(vectors[j]);
            cache_->put(keys[missing[j]], vectors[j]);
            out[missing[j]] = std::move(vectors[j]);
        }
    }
    for (const auto& v : out) {
        if (v.size() != out.front().size()) throw InvalidArgument("embedding dimension mismatch within batch");
    }
    return out;
}

void normalize_l2(Vector& v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw InvalidArgument("cannot normalize a zero vector");
    for (double& x : v) x /= norm;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("cosine of vectors with different dimensions");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw InvalidArgument("cosine of a zero vector");
    const double c = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::clamp(c, -1.0, 1.0);
}

}  // namespace fbeval
