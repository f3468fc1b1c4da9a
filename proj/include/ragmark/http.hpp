#pragma once

// Network-backed implementations: chat-completion client, HTTP embedding
// provider and HTTP page fetcher. Kept apart so pure code never pulls in
// cpp-httplib.

#include "ragmark/embed.hpp"
#include "ragmark/generate.hpp"
#include "ragmark/ingest.hpp"

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>
#include <utility>

namespace ragmark {

inline constexpr const char* kLlmApiKeyEnv = "RAGMARK_LLM_API_KEY";
inline constexpr const char* kEmbedApiKeyEnv = "RAGMARK_EMBED_API_KEY";

namespace detail {

/// "http://host:port/a/b?c" -> {"http://host:port", "/a/b?c"}.
inline std::pair<std::string, std::string> split_endpoint(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw ConfigError("endpoint is not an absolute URL: " + url);
    const auto path_start = url.find('/', scheme + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

template <class Rep, class Period>
void set_timeouts(httplib::Client& client, std::chrono::duration<Rep, Period> timeout) {
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(timeout);
    const auto sec = static_cast<time_t>(ms.count() / 1000);
    const auto usec = static_cast<time_t>((ms.count() % 1000) * 1000);
    client.set_connection_timeout(sec, usec);
    client.set_read_timeout(sec, usec);
    client.set_write_timeout(sec, usec);
}

inline std::optional<std::string> env(const char* name) {
    const char* value = std::getenv(name);
    if (!value || !*value) return std::nullopt;
    return std::string(value);
}

inline std::string excerpt(const std::string& body, std::size_t limit = 200) {
    return body.size() <= limit ? body : body.substr(0, limit) + "...";
}

inline bool is_retryable_http_status(int status) { return status >= 500 || status == 429; }

} // namespace detail

// ---------------------------------------------------------------------------
// Chat completions

inline nlohmann::json chat_request_body(const LlmSpec& spec, const ChatPrompt& prompt) {
    return {{"model", spec.model_name},
            {"temperature", spec.temperature},
            {"max_tokens", spec.max_output_tokens},
            {"messages",
             nlohmann::json::array({{{"role", "system"}, {"content", prompt.system}},
                                    {{"role", "user"}, {"content", prompt.user}}})}};
}

/// POSTs a two-message chat to `spec.endpoint` and returns the first choice. Timeouts, transport
/// errors, 5xx and 429 are retried with exponential backoff; other non-2xx statuses fail at
/// once. Latency covers the whole exchange including retries.
inline Completion llm_complete(const LlmSpec& spec, const ChatPrompt& prompt, const FirstByteCallback& on_first_byte = {}) {
    if (spec.endpoint.empty()) throw LlmError(LlmError::Kind::config, "LLM endpoint is not configured");
    const auto key = spec.api_key ? spec.api_key : detail::env(kLlmApiKeyEnv);
    if (!key) throw LlmError(LlmError::Kind::config, std::string("missing API key: set ") + kLlmApiKeyEnv);
    const auto [base, path] = detail::split_endpoint(spec.endpoint);
    const auto body = chat_request_body(spec, prompt).dump();

    const auto start = std::chrono::steady_clock::now();
    std::string last_failure;
    int last_status = 0;
    for (unsigned attempt = 0; attempt <= spec.retries; ++attempt) {
        if (attempt > 0) {
            const auto delay = std::chrono::duration<double, std::milli>(
                static_cast<double>(spec.backoff_base.count()) * std::pow(spec.backoff_factor, attempt - 1));
            std::this_thread::sleep_for(delay);
        }
        httplib::Client client(base);
        detail::set_timeouts(client, spec.timeout);
        httplib::Request req;
        req.method = "POST";
        req.path = path;
        req.headers = {{"Authorization", "Bearer " + *key}, {"Accept", "application/json"}};
        req.set_header("Content-Type", "application/json");
        req.body = body;
        bool fired = false;
        req.response_handler = [&](const httplib::Response&) {
            if (on_first_byte && !fired) {
                fired = true;
                on_first_byte();
            }
            return true;
        };
        auto result = client.send(req);
        if (!result) {
            last_failure = "transport error: " + httplib::to_string(result.error());
            last_status = 0;
            continue;
        }
        const int status = result->status;
        if (status >= 200 && status < 300) {
            const double latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            try {
                const auto json = nlohmann::json::parse(result->body);
                return {json.at("choices").at(0).at("message").at("content").get<std::string>(), latency};
            } catch (const std::exception& e) {
                throw LlmError(LlmError::Kind::bad_response,
                               std::string("malformed completion response: ") + e.what(), status);
            }
        }
        last_status = status;
        last_failure = "HTTP " + std::to_string(status) + ": " + detail::excerpt(result->body);
        if (!detail::is_retryable_http_status(status)) {
            throw LlmError(LlmError::Kind::non_retryable, last_failure, status);
        }
    }
    throw LlmError(LlmError::Kind::retryable_exhausted,
                   "retryable-exhausted after " + std::to_string(spec.retries + 1) + " attempts: " + last_failure,
                   last_status);
}

class HttpChatModel : public ChatModel {
public:
    explicit HttpChatModel(LlmSpec spec) : spec_(std::move(spec)) {}

    std::string name() const override { return spec_.model_name; }

    Completion complete(const ChatPrompt& prompt, const FirstByteCallback& on_first_byte) override {
        return llm_complete(spec_, prompt, on_first_byte);
    }

private:
    LlmSpec spec_;
};

// ---------------------------------------------------------------------------
// Embeddings

/// Request `{"model": m, "input": [...]}`; response `{"data": [{"index": i, "embedding": [...]}]}`
/// or `{"embeddings": [[...], ...]}`.
class HttpEmbeddingProvider : public EmbeddingProvider {
public:
    explicit HttpEmbeddingProvider(EmbeddingProviderSpec spec, std::chrono::milliseconds timeout = std::chrono::seconds(60))
        : spec_(std::move(spec)), timeout_(timeout) {
        spec_.validate();
    }

    std::string id() const override { return "http:" + spec_.model_name + ":d" + std::to_string(spec_.dim); }
    std::size_t dim() const override { return spec_.dim; }

    std::vector<std::vector<float>> embed_batch(const std::vector<std::string>& texts) override {
        const auto [base, path] = detail::split_endpoint(spec_.endpoint);
        httplib::Client client(base);
        detail::set_timeouts(client, timeout_);
        httplib::Headers headers{{"Accept", "application/json"}};
        if (auto key = detail::env(kEmbedApiKeyEnv)) headers.emplace("Authorization", "Bearer " + *key);
        const nlohmann::json body{{"model", spec_.model_name}, {"input", texts}};
        auto result = client.Post(path, headers, body.dump(), "application/json");
        if (!result) throw EmbedError("embedding request failed: " + httplib::to_string(result.error()));
        if (result->status < 200 || result->status >= 300) {
            throw EmbedError("embedding request returned HTTP " + std::to_string(result->status) + ": " +
                             detail::excerpt(result->body));
        }
        const auto json = nlohmann::json::parse(result->body);
        std::vector<std::vector<float>> out;
        if (json.contains("embeddings")) {
            for (const auto& v : json.at("embeddings")) out.push_back(v.get<std::vector<float>>());
            return out;
        }
        const auto& data = json.at("data");
        out.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto index = data[i].value("index", i);
            if (index >= out.size()) throw EmbedError("embedding response index out of range");
            out[index] = data[i].at("embedding").get<std::vector<float>>();
        }
        return out;
    }

private:
    EmbeddingProviderSpec spec_;
    std::chrono::milliseconds timeout_;
};

inline std::shared_ptr<EmbeddingProvider> make_embedding_provider(const EmbeddingProviderSpec& spec) {
    spec.validate();
    if (spec.kind == ProviderKind::http_api) return std::make_shared<HttpEmbeddingProvider>(spec);
    return std::make_shared<DeterministicProvider>(spec.dim, spec.seed);
}

// ---------------------------------------------------------------------------
// Page fetching

class HttpFetcher : public Fetcher {
public:
    FetchResponse fetch(const std::string& url, std::chrono::milliseconds timeout) override {
        const auto [base, path] = detail::split_endpoint(url);
        httplib::Client client(base);
        detail::set_timeouts(client, timeout);
        client.set_follow_location(true);
        auto result = client.Get(path, {{"User-Agent", "ragmark-crawler/1.0"}});
        if (!result) {
            const auto err = result.error();
            const bool timed_out = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout;
            throw FetchError("fetch " + url + " failed: " + httplib::to_string(err), timed_out);
        }
        return {result->status, result->get_header_value("Content-Type"), result->body};
    }
};

} // namespace ragmark
