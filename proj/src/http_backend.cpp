#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <cstdlib>
#include <thread>

#include "fbeval/error.hpp"
#include "fbeval/judgeclient.hpp"

namespace fbeval {

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string prefix;  // path without trailing slash
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("base_url must include a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    SplitUrl out;
    out.origin = url.substr(0, path_start);
    out.prefix = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
    return out;
}

bool retryable(int status) { return status == 408 || status == 409 || status == 429 || status >= 500; }

}  // namespace

HttpBackend::HttpBackend(const EndpointConfig& endpoint)
    : limiter_(endpoint.requests_per_minute), gate_(endpoint.max_concurrency) {}

json HttpBackend::post_with_retry(const EndpointConfig& endpoint, const std::string& route, const json& body) {
    const char* key = endpoint.api_key_env.empty() ? nullptr : std::getenv(endpoint.api_key_env.c_str());
    if (!endpoint.api_key_env.empty() && (!key || !*key)) {
        throw ConfigError("environment variable " + endpoint.api_key_env + " is not set");
    }
    const SplitUrl url = split_url(endpoint.base_url);
    httplib::Headers headers;
    if (key) headers.emplace("Authorization", std::string("Bearer ") + key);
    const std::string payload = body.dump();

    std::string last_error;
    auto backoff = std::chrono::milliseconds(endpoint.initial_backoff_ms);
    for (int attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
        limiter_.acquire();
        gate_.enter();
        httplib::Result res;
        {
            httplib::Client client(url.origin);
            client.set_connection_timeout(std::chrono::seconds(endpoint.timeout_seconds));
            client.set_read_timeout(std::chrono::seconds(endpoint.timeout_seconds));
            client.set_write_timeout(std::chrono::seconds(endpoint.timeout_seconds));
            res = client.Post(url.prefix + route, headers, payload, "application/json");
        }
        gate_.leave();
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 200) {
            json parsed = json::parse(res->body, nullptr, false);
            if (parsed.is_discarded()) throw JudgeTransportError("endpoint returned non-JSON body");
            return parsed;
        }
        last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 500);
        if (!retryable(res->status)) break;
    }
    throw JudgeTransportError(endpoint.model_name + " " + route + " failed: " + last_error);
}

ChatReply HttpBackend::complete(const EndpointConfig& endpoint, const ChatRequest& request) {
    json messages = json::array();
    if (!request.prompt.system.empty()) messages.push_back({{"role", "system"}, {"content", request.prompt.system}});
    std::string user = request.prompt.user;
    if (request.repair_note) {
        user += "\n\nYour previous reply did not match the required JSON format (" + *request.repair_note +
                "). Reply again with JSON only.";
    }
    messages.push_back({{"role", "user"}, {"content", user}});

    json body = endpoint.extra_params.is_object() ? endpoint.extra_params : json::object();
    body["model"] = endpoint.model_name;
    body["messages"] = messages;
    body["temperature"] = endpoint.temperature;
    body["max_completion_tokens"] = endpoint.max_output_tokens;

    const json res = post_with_retry(endpoint, "/chat/completions", body);
    ChatReply reply;
    try {
        const auto& content = res.at("choices").at(0).at("message").at("content");
        reply.text = content.is_string() ? content.get<std::string>() : "";
        if (auto u = res.find("usage"); u != res.end()) {
            reply.usage.prompt_tokens = u->value("prompt_tokens", std::int64_t{0});
            reply.usage.completion_tokens = u->value("completion_tokens", std::int64_t{0});
        }
    } catch (const json::exception& e) {
        throw JudgeTransportError(std::string("unexpected chat response shape: ") + e.what());
    }
    return reply;
}

std::vector<Vector> HttpBackend::embed(const EndpointConfig& endpoint, std::span<const std::string> texts) {
    json body = {{"model", endpoint.model_name}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
    const json res = post_with_retry(endpoint, "/embeddings", body);
    std::vector<Vector> out(texts.size());
    try {
        for (const auto& item : res.at("data")) {
            const auto index = item.at("index").get<std::size_t>();
            if (index >= out.size()) throw JudgeTransportError("embedding index out of range");
            out[index] = item.at("embedding").get<Vector>();
        }
    } catch (const json::exception& e) {
        throw JudgeTransportError(std::string("unexpected embedding response shape: ") + e.what());
    }
    for (const auto& v : out) {
        if (v.empty()) throw JudgeTransportError("embedding response is missing an input");
    }
    return out;
}

}  // namespace fbeval
