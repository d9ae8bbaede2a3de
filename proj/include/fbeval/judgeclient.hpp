#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace fbeval {

using json = nlohmann::json;
using Bindings = std::map<std::string, std::string>;
using Vector = std::vector<double>;

struct EndpointConfig {
    std::string base_url;
    std::string model_name;
    std::string api_key_env;  // name of the environment variable holding the key
    int max_output_tokens = 4096;
    double temperature = 0.0;
    json extra_params = json::object();
    int requests_per_minute = 60;
    int max_concurrency = 4;
    int max_retries = 3;
    int initial_backoff_ms = 1000;
    int timeout_seconds = 120;

    void validate() const;  // throws ConfigError
};

void to_json(json& j, const EndpointConfig& e);
void from_json(const json& j, EndpointConfig& e);

// Named endpoint presets for hosted models.
// Returns nullopt for unknown names.
std::optional<EndpointConfig> endpoint_preset(const std::string& name);

struct PromptTemplate {
    std::string name;
    int version = 1;
    std::string system_text;
    std::string user_text;  // placeholders are written {{name}}
    json response_schema;   // null: free text, no structured response

    std::string versioned_name() const { return name + "@v" + std::to_string(version); }
    std::vector<std::string> placeholders() const;
};

struct RenderedPrompt {
    std::string system;
    std::string user;
};

// Throws InvalidArgument naming the first unbound placeholder.
RenderedPrompt render(const PromptTemplate& tmpl, const Bindings& bindings);

// Built-in prompt templates keyed by task name.
class PromptRegistry {
public:
    static const PromptRegistry& builtin();

    const PromptTemplate& get(const std::string& name) const;
    bool contains(const std::string& name) const { return templates_.contains(name); }
    // name -> "name@vN" for every registered template.
    std::map<std::string, std::string> versions() const;

    void add(PromptTemplate tmpl);

private:
    std::map<std::string, PromptTemplate> templates_;
};

struct Usage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

struct JudgeResponse {
    std::string raw_text;
    json parsed;  // schema-valid value; null for free-text templates
    Usage usage;
    bool cache_hit = false;
    std::string prompt_version;
};

struct ChatRequest {
    const PromptTemplate* tmpl = nullptr;
    const Bindings* bindings = nullptr;
    RenderedPrompt prompt;
    // Present on the single repair attempt after a schema violation.
    std::optional<std::string> repair_note;
};

struct ChatReply {
    std::string text;
    Usage usage;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual ChatReply complete(const EndpointConfig& endpoint, const ChatRequest& request) = 0;
};

class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual std::vector<Vector> embed(const EndpointConfig& endpoint, std::span<const std::string> texts) = 0;
};

// Canned responses for hermetic runs. Fixture layout:
//   {"templates": {"<name>": {"cases": [{"when": {...}, "unordered": [..],
//                                        "response": <json or raw string>}],
//                             "default": <json or raw string>}},
//    "embedding_aliases": {"<text>": "<alias>"}, "embedding_dimension": 256}
// A case matches when every "when" binding equals the request binding; the
// bindings named in "unordered" may also match with their values swapped.
class StubBackend : public ChatBackend {
public:
    explicit StubBackend(json fixture);
    static std::shared_ptr<StubBackend> from_file(const std::filesystem::path& path);

    ChatReply complete(const EndpointConfig& endpoint, const ChatRequest& request) override;
    const json& fixture() const { return fixture_; }

private:
    json fixture_;
};

// Deterministic hashed bag-of-words vectors; texts listed in the fixture's
// "embedding_aliases" are embedded as their alias instead.
class StubEmbedder : public EmbeddingBackend {
public:
    explicit StubEmbedder(std::size_t dimension = 256, std::map<std::string, std::string> aliases = {});
    static std::shared_ptr<StubEmbedder> from_fixture(const json& fixture);

    std::vector<Vector> embed(const EndpointConfig& endpoint, std::span<const std::string> texts) override;
    Vector embed_one(const std::string& text) const;

private:
    std::size_t dimension_;
    std::map<std::string, std::string> aliases_;
};

// Blocks until a request may start without exceeding requests_per_minute in
// any trailing 60 s window. Clock and sleep are injectable for tests.
class RateLimiter {
public:
    using Clock = std::chrono::steady_clock;
    using NowFn = std::function<Clock::time_point()>;
    using SleepFn = std::function<void(Clock::duration)>;

    explicit RateLimiter(int requests_per_minute, NowFn now = {}, SleepFn sleep = {});
    void acquire();

private:
    int limit_;
    NowFn now_;
    SleepFn sleep_;
    std::mutex mutex_;
    std::deque<Clock::time_point> recent_;
};

// Counting gate bounding in-flight requests.
class ConcurrencyGate {
public:
    explicit ConcurrencyGate(int slots);
    void enter();
    void leave();

private:
    int free_;
    std::mutex mutex_;
    std::condition_variable cv_;
};

// OpenAI-style chat completions and embeddings over HTTP(S).
class HttpBackend : public ChatBackend, public EmbeddingBackend {
public:
    explicit HttpBackend(const EndpointConfig& endpoint);

    ChatReply complete(const EndpointConfig& endpoint, const ChatRequest& request) override;
    std::vector<Vector> embed(const EndpointConfig& endpoint, std::span<const std::string> texts) override;

private:
    json post_with_retry(const EndpointConfig& endpoint, const std::string& route, const json& body);

    RateLimiter limiter_;
    ConcurrencyGate gate_;
};

// Content-addressed JSON store: <dir>/<hh>/<sha256>.json. Without a directory
// it keeps entries in memory only.
class ResponseCache {
public:
    explicit ResponseCache(std::optional<std::filesystem::path> directory = std::nullopt);

    std::optional<json> get(const std::string& key) const;
    void put(const std::string& key, const json& value);
    const std::optional<std::filesystem::path>& directory() const { return directory_; }

private:
    std::filesystem::path file_for(const std::string& key) const;

    std::optional<std::filesystem::path> directory_;
    mutable std::shared_mutex mutex_;
    mutable std::map<std::string, json> memory_;
};

// Extracts the first JSON value from model output, tolerating code fences and
// surrounding prose. Returns nullopt when nothing parses.
std::optional<json> extract_json(const std::string& text);

class JudgeClient {
public:
    JudgeClient(EndpointConfig endpoint, std::shared_ptr<ChatBackend> backend,
                std::shared_ptr<ResponseCache> cache);

    // Renders, serves from cache when possible, validates the reply against
    // the template schema with one repair re-prompt, then caches it.
    JudgeResponse complete(const PromptTemplate& tmpl, const Bindings& bindings);

    std::string cache_key(const PromptTemplate& tmpl, const RenderedPrompt& prompt) const;
    const EndpointConfig& endpoint() const { return endpoint_; }

private:
    EndpointConfig endpoint_;
    std::shared_ptr<ChatBackend> backend_;
    std::shared_ptr<ResponseCache> cache_;
};

class Embedder {
public:
    Embedder(EndpointConfig endpoint, std::shared_ptr<EmbeddingBackend> backend,
             std::shared_ptr<ResponseCache> cache);

    // One L2-normalized vector per text. Empty texts and inconsistent
    // dimensions are errors.
    std::vector<Vector> embed(std::span<const std::string> texts);

private:
    EndpointConfig endpoint_;
    std::shared_ptr<EmbeddingBackend> backend_;
    std::shared_ptr<ResponseCache> cache_;
};

void normalize_l2(Vector& v);

// Cosine similarity; throws InvalidArgument for zero or mismatched vectors.
double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace fbeval
