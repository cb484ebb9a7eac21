#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <tuple>

#include "httplib.h"
#include "json.hpp"
#include "palm/errors.hpp"
#include "palm/selection.hpp"

namespace palm {

struct BackendConfig {
    std::string endpoint;
    std::chrono::milliseconds timeout{30000};
    int max_retries = 2;
    std::chrono::milliseconds retry_backoff{200};
    std::optional<std::string> auth_token;
};

struct CompletionParams {
    double temperature = 0.7;
    int max_new_tokens = 256;
    std::optional<std::int64_t> seed;
};

inline const std::string kDefaultCaptionPrefix = "A person is";

/// Captioning service: one caption for the middle frame of a segment.
/// The returned text must begin with the requested prefix.
class CaptionBackend {
public:
    virtual ~CaptionBackend() = default;

    std::string caption(const std::string& clip_id, int frame_index,
                        const std::string& prefix = kDefaultCaptionPrefix) {
        std::string text = do_caption(clip_id, frame_index, prefix);
        if (text.rfind(prefix, 0) != 0)
            throw ProtocolError("caption does not start with prefix \"" + prefix + "\": " + text);
        return text;
    }

private:
    virtual std::string do_caption(const std::string& clip_id, int frame_index, const std::string& prefix) = 0;
};

/// Text embedding service. Must be deterministic: same text, same vector.
class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;

    Embedding embed(const std::string& text) {
        if (text.empty()) throw EmptyInput("embedding text");
        return do_embed(text);
    }

private:
    virtual Embedding do_embed(const std::string& text) = 0;
};

/// Language-model completion service.
class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;

    std::string complete(const std::string& prompt, const CompletionParams& params) {
        if (prompt.empty()) throw EmptyInput("prompt");
        return do_complete(prompt, params);
    }

private:
    virtual std::string do_complete(const std::string& prompt, const CompletionParams& params) = 0;
};

namespace detail {

/// Raised inside a retried call for failures worth another attempt.
struct TransientFailure : Error {
    explicit TransientFailure(const std::string& detail) : Error(detail) {}
};

}  // namespace detail

/// Runs fn up to max_retries+1 times, sleeping retry_backoff between
/// attempts on TransientFailure. Exhaustion becomes BackendUnavailable;
/// anything else propagates immediately.
template <typename F>
auto retry_call(const BackendConfig& config, F&& fn) -> decltype(fn()) {
    std::string last_error;
    for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
        try {
            return fn();
        } catch (const detail::TransientFailure& e) {
            last_error = e.what();
            if (attempt < config.max_retries && config.retry_backoff.count() > 0)
                std::this_thread::sleep_for(config.retry_backoff);
        }
    }
    throw BackendUnavailable(last_error + " (after " + std::to_string(config.max_retries + 1) + " attempts)");
}

struct ParsedEndpoint {
    std::string host;
    int port = 80;
    std::string path = "/";
};

inline ParsedEndpoint parse_endpoint(const std::string& url) {
    const std::string http = "http://";
    if (url.rfind("https://", 0) == 0)
        throw ConfigError("https endpoints are not supported, use http: " + url);
    if (url.rfind(http, 0) != 0) throw ConfigError("endpoint must start with http://: " + url);
    ParsedEndpoint ep;
    std::string rest = url.substr(http.size());
    const std::size_t slash = rest.find('/');
    std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
    if (slash != std::string::npos) ep.path = rest.substr(slash);
    const std::size_t colon = hostport.find(':');
    if (colon == std::string::npos) {
        ep.host = hostport;
    } else {
        ep.host = hostport.substr(0, colon);
        try {
            ep.port = std::stoi(hostport.substr(colon + 1));
        } catch (const std::exception&) {
            throw ConfigError("invalid port in endpoint: " + url);
        }
    }
    if (ep.host.empty()) throw ConfigError("endpoint has no host: " + url);
    return ep;
}

/// JSON-over-HTTP client for the shared service envelope:
/// POST {"task": ..., "payload": {...}} -> {"ok": bool, "result": {...}, "error": str?}.
/// Connection errors and 5xx/408/429 responses are retried per config.
class HttpServiceClient {
public:
    explicit HttpServiceClient(BackendConfig config)
        : config_(std::move(config)), endpoint_(parse_endpoint(config_.endpoint)) {}

    nlohmann::json call(const std::string& task, const nlohmann::json& payload) const {
        const nlohmann::json request{{"task", task}, {"payload", payload}};
        const std::string body = request.dump();
        return retry_call(config_, [&] { return attempt(body); });
    }

    const BackendConfig& config() const { return config_; }

private:
    nlohmann::json attempt(const std::string& body) const {
        httplib::Client client(endpoint_.host, endpoint_.port);
        const auto sec = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
        const auto usec =
            std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - sec);
        client.set_connection_timeout(static_cast<time_t>(sec.count()), static_cast<time_t>(usec.count()));
        client.set_read_timeout(static_cast<time_t>(sec.count()), static_cast<time_t>(usec.count()));
        client.set_write_timeout(static_cast<time_t>(sec.count()), static_cast<time_t>(usec.count()));
        httplib::Headers headers;
        if (config_.auth_token) headers.emplace("Authorization", "Bearer " + *config_.auth_token);

        auto res = client.Post(endpoint_.path, headers, body, "application/json");
        if (!res) throw detail::TransientFailure("no response from " + config_.endpoint + ": " +
                                                 httplib::to_string(res.error()));
        if (res->status >= 500 || res->status == 408 || res->status == 429)
            throw detail::TransientFailure("status " + std::to_string(res->status) + " from " +
                                           config_.endpoint);
        if (res->status < 200 || res->status >= 300)
            throw ProtocolError("unexpected status " + std::to_string(res->status) + " from " +
                                config_.endpoint);
        nlohmann::json reply;
        try {
            reply = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("response is not JSON: ") + e.what());
        }
        if (!reply.is_object() || !reply.contains("ok") || !reply["ok"].is_boolean())
            throw ProtocolError("response missing boolean 'ok' field");
        if (!reply["ok"].get<bool>()) {
            std::string message = reply.value("error", std::string("unspecified server error"));
            throw ProtocolError("server reported: " + message);
        }
        if (!reply.contains("result") || !reply["result"].is_object())
            throw ProtocolError("response missing 'result' object");
        return reply["result"];
    }

    BackendConfig config_;
    ParsedEndpoint endpoint_;
};

class HttpCaptionBackend final : public CaptionBackend {
public:
    explicit HttpCaptionBackend(BackendConfig config) : client_(std::move(config)) {}

private:
    std::string do_caption(const std::string& clip_id, int frame_index, const std::string& prefix) override {
        const nlohmann::json result = client_.call(
            "caption", {{"clip_id", clip_id}, {"frame_index", frame_index}, {"prefix", prefix}});
        if (!result.contains("caption") || !result["caption"].is_string())
            throw ProtocolError("caption result missing string 'caption'");
        return result["caption"].get<std::string>();
    }

    HttpServiceClient client_;
};

class HttpEmbeddingBackend final : public EmbeddingBackend {
public:
    explicit HttpEmbeddingBackend(BackendConfig config) : client_(std::move(config)) {}

private:
    Embedding do_embed(const std::string& text) override {
        const nlohmann::json result = client_.call("embed", {{"text", text}});
        if (!result.contains("values") || !result["values"].is_array())
            throw ProtocolError("embed result missing 'values' array");
        Embedding emb;
        emb.values = result["values"].get<std::vector<double>>();
        if (result.contains("dim") && result["dim"].get<std::size_t>() != emb.dim())
            throw ProtocolError("embed result 'dim' does not match values length");
        return emb;
    }

    HttpServiceClient client_;
};

class HttpCompletionBackend final : public CompletionBackend {
public:
    explicit HttpCompletionBackend(BackendConfig config) : client_(std::move(config)) {}

private:
    std::string do_complete(const std::string& prompt, const CompletionParams& params) override {
        nlohmann::json payload{{"prompt", prompt},
                               {"temperature", params.temperature},
                               {"max_new_tokens", params.max_new_tokens}};
        if (params.seed) payload["seed"] = *params.seed;
        const nlohmann::json result = client_.call("complete", payload);
        if (!result.contains("text") || !result["text"].is_string())
            throw ProtocolError("complete result missing string 'text'");
        return result["text"].get<std::string>();
    }

    HttpServiceClient client_;
};

/// File-backed caption cache keyed by (clip_id, frame_index, prefix).
/// Captions are deterministic inputs, so duplicate writes are benign.
class CachingCaptionBackend final : public CaptionBackend {
public:
    CachingCaptionBackend(std::string cache_path, CaptionBackend& inner)
        : cache_path_(std::move(cache_path)), inner_(inner) {
        std::ifstream in(cache_path_);
        std::string line;
        while (in && std::getline(in, line)) {
            if (line.empty()) continue;
            nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
            if (row.is_discarded()) continue;
            cache_[{row.value("clip_id", ""), row.value("frame_index", 0), row.value("prefix", "")}] =
                row.value("caption", "");
        }
    }

    std::size_t hits() const { return hits_; }
    std::size_t misses() const { return misses_; }

private:
    using Key = std::tuple<std::string, int, std::string>;

    std::string do_caption(const std::string& clip_id, int frame_index, const std::string& prefix) override {
        const Key key{clip_id, frame_index, prefix};
        {
            std::lock_guard<std::mutex> lock(mutex_);
            auto it = cache_.find(key);
            if (it != cache_.end()) {
                ++hits_;
                return it->second;
            }
        }
        std::string text = inner_.caption(clip_id, frame_index, prefix);
        std::lock_guard<std::mutex> lock(mutex_);
        ++misses_;
        cache_[key] = text;
        std::ofstream out(cache_path_, std::ios::app);
        if (!out) throw IoError(cache_path_);
        out << nlohmann::json{{"clip_id", clip_id},
                              {"frame_index", frame_index},
                              {"prefix", prefix},
                              {"caption", text}}
                   .dump()
            << '\n';
        return text;
    }

    std::string cache_path_;
    CaptionBackend& inner_;
    std::map<Key, std::string> cache_;
    std::mutex mutex_;
    std::size_t hits_ = 0;
    std::size_t misses_ = 0;
};

}  // namespace palm
