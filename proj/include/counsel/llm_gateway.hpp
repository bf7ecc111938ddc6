#pragma once

#include "counsel/util.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace counsel {

enum class ChatRole { System, User, Assistant };

std::string_view to_string(ChatRole role);
ChatRole chat_role_from_string(std::string_view s);

struct ChatMessage {
    ChatRole role = ChatRole::User;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.7;
    int max_tokens = 512;

    /// Non-empty messages, at most one system message and only in front,
    /// non-empty user/assistant content, temperature >= 0, max_tokens > 0.
    void validate() const;

    bool operator==(const ChatRequest&) const = default;
};

struct Usage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

struct ChatResponse {
    std::string content;
    std::string finish_reason;
    Usage usage;
};

/// OpenAI-compatible chat-completions body.
nlohmann::json to_json(const ChatRequest& request);
ChatRequest request_from_json(const nlohmann::json& j);

/// Reads choices[0].message.content / finish_reason and usage.
ChatResponse parse_completion_body(std::string_view body);

class BackendError : public Error {
public:
    enum class Kind { InvalidRequest, MissingApiKey, RetriesExhausted, HttpStatus, MalformedResponse, Transport };

    BackendError(Kind kind, const std::string& message, int status = 0, int attempts = 0);

    Kind kind() const noexcept { return kind_; }
    int status() const noexcept { return status_; }
    int attempts() const noexcept { return attempts_; }

private:
    Kind kind_;
    int status_;
    int attempts_;
};

std::string_view to_string(BackendError::Kind kind);

enum class BackendKind { Http, Mock };

struct BackendConfig {
    BackendKind kind = BackendKind::Mock;
    std::string base_url;
    std::string api_key_env;
    std::chrono::milliseconds timeout{30000};
    int max_retries = 2;
    std::optional<std::filesystem::path> mock_script;
    // Exact final-user-message -> reply, loaded from mock_script.
    std::map<std::string, std::string> mock_replies;
    // Reply for unscripted inputs; when unset, replies are digest-based.
    std::optional<std::string> fallback_reply;

    void validate() const;
};

/// Mock config from a JSON object file of final-user-message -> reply.
/// Duplicate keys, non-string replies and unreadable files are errors.
BackendConfig mock_backend_from_script(const std::filesystem::path& path);

/// Parses a JSON object of message -> reply, rejecting duplicate keys.
std::map<std::string, std::string> parse_mock_script(std::string_view text);

/// Backend config document: {"kind": "mock"|"http", ...}. Relative
/// `mock_script` paths resolve against `base_dir`.
BackendConfig backend_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// `source` is either the literal "mock" or a path to a backend config file.
BackendConfig load_backend_config(const std::string& source);

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
    virtual std::string_view kind() const = 0;
};

/// Deterministic offline backend: scripted replies first, otherwise
/// `MOCK(<first 8 hex of SHA-256(final user message)>)`.
class MockBackend : public ChatBackend {
public:
    explicit MockBackend(std::map<std::string, std::string> script = {},
                         std::optional<std::string> fallback_reply = std::nullopt);

    ChatResponse complete(const ChatRequest& request) override;
    std::string_view kind() const override { return "mock"; }

    static std::string digest_reply(std::string_view final_user_message);

    std::size_t call_count() const noexcept { return calls_.load(); }

private:
    std::map<std::string, std::string> script_;
    std::optional<std::string> fallback_;
    std::atomic<std::size_t> calls_{0};
};

struct HttpReply {
    int status = 0;
    std::string body;
};

/// Network failure below HTTP (connect, read timeout, TLS).
class TransportFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpReply post(const std::string& url,
                           const std::vector<std::pair<std::string, std::string>>& headers,
                           const std::string& body, std::chrono::milliseconds timeout) = 0;
};

/// cpp-httplib client; one connection per call.
class HttplibTransport : public Transport {
public:
    HttpReply post(const std::string& url,
                   const std::vector<std::pair<std::string, std::string>>& headers,
                   const std::string& body, std::chrono::milliseconds timeout) override;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

struct RetryPolicy {
    int max_retries = 2;
    std::chrono::milliseconds base_delay{500};
    int factor = 2;

    /// Delay before retry number `retry` (0-based): base * factor^retry.
    std::chrono::milliseconds delay_before(int retry) const;
    static bool retryable_status(int status) { return status == 429 || status >= 500; }
};

class HttpBackend : public ChatBackend {
public:
    explicit HttpBackend(BackendConfig config, std::shared_ptr<Transport> transport = nullptr,
                         Sleeper sleeper = nullptr);

    ChatResponse complete(const ChatRequest& request) override;
    std::string_view kind() const override { return "http"; }

private:
    BackendConfig config_;
    std::shared_ptr<Transport> transport_;
    Sleeper sleeper_;
};

std::shared_ptr<ChatBackend> make_backend(const BackendConfig& config);

/// One-shot convenience over make_backend(config)->complete(request).
ChatResponse complete(const ChatRequest& request, const BackendConfig& config);

}  // namespace counsel
