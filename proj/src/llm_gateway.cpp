#include "counsel/llm_gateway.hpp"

#include <httplib.h>

#include <array>
#include <cstdlib>
#include <set>
#include <sstream>
#include <thread>

namespace counsel {

namespace {

constexpr std::array<std::string_view, 3> kChatRoleNames{"system", "user", "assistant"};

int rough_token_count(std::string_view text) {
    std::istringstream in{std::string(text)};
    int n = 0;
    for (std::string word; in >> word;) ++n;
    return n;
}

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // begins with '/', or empty
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw BackendError(BackendError::Kind::InvalidRequest, "base_url lacks a scheme: " + url);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, ""};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

std::string_view to_string(ChatRole role) { return kChatRoleNames.at(static_cast<std::size_t>(role)); }

ChatRole chat_role_from_string(std::string_view s) {
    for (std::size_t i = 0; i < kChatRoleNames.size(); ++i) {
        if (kChatRoleNames[i] == s) return static_cast<ChatRole>(i);
    }
    throw BackendError(BackendError::Kind::InvalidRequest, "unknown chat role '" + std::string(s) + "'");
}

void ChatRequest::validate() const {
    using K = BackendError::Kind;
    if (messages.empty()) throw BackendError(K::InvalidRequest, "request has no messages");
    for (std::size_t i = 0; i < messages.size(); ++i) {
        const auto& m = messages[i];
        if (m.role == ChatRole::System && i != 0) {
            throw BackendError(K::InvalidRequest, "system message allowed only in first position");
        }
        if (m.role != ChatRole::System && m.content.empty()) {
            throw BackendError(K::InvalidRequest, "empty content in message " + std::to_string(i));
        }
    }
    if (!(temperature >= 0.0)) throw BackendError(K::InvalidRequest, "temperature must be >= 0");
    if (max_tokens <= 0) throw BackendError(K::InvalidRequest, "max_tokens must be positive");
}

nlohmann::json to_json(const ChatRequest& request) {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    return {{"model", request.model},
            {"messages", std::move(messages)},
            {"temperature", request.temperature},
            {"max_tokens", request.max_tokens}};
}

ChatRequest request_from_json(const nlohmann::json& j) {
    try {
        ChatRequest r;
        r.model = j.at("model").get<std::string>();
        for (const auto& m : j.at("messages")) {
            r.messages.push_back({chat_role_from_string(m.at("role").get<std::string>()),
                                  m.at("content").get<std::string>()});
        }
        r.temperature = j.at("temperature").get<double>();
        r.max_tokens = j.at("max_tokens").get<int>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(BackendError::Kind::InvalidRequest, std::string("malformed request: ") + e.what());
    }
}

ChatResponse parse_completion_body(std::string_view body) {
    using K = BackendError::Kind;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
        throw BackendError(K::MalformedResponse, std::string("response is not JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
        throw BackendError(K::MalformedResponse, "response has no choices");
    }
    const auto& choice = j["choices"][0];
    ChatResponse out;
    out.finish_reason = choice.value("finish_reason", std::string());
    const bool has_content = choice.contains("message") && choice["message"].is_object() &&
                             choice["message"].contains("content") &&
                             choice["message"]["content"].is_string();
    if (has_content) {
        out.content = choice["message"]["content"].get<std::string>();
    } else if (out.finish_reason == "stop" || out.finish_reason.empty()) {
        throw BackendError(K::MalformedResponse, "choice has no message content");
    }
    if (j.contains("usage") && j["usage"].is_object()) {
        out.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
        out.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
    }
    return out;
}

BackendError::BackendError(Kind kind, const std::string& message, int status, int attempts)
    : Error("backend_" + std::string(to_string(kind)), message),
      kind_(kind),
      status_(status),
      attempts_(attempts) {}

std::string_view to_string(BackendError::Kind kind) {
    switch (kind) {
        case BackendError::Kind::InvalidRequest: return "invalid_request";
        case BackendError::Kind::MissingApiKey: return "missing_api_key";
        case BackendError::Kind::RetriesExhausted: return "retries_exhausted";
        case BackendError::Kind::HttpStatus: return "http_status";
        case BackendError::Kind::MalformedResponse: return "malformed_response";
        case BackendError::Kind::Transport: return "transport";
    }
    return "unknown";
}

void BackendConfig::validate() const {
    if (kind == BackendKind::Http) {
        if (base_url.empty()) throw Error("invalid_backend", "http backend requires base_url");
        if (api_key_env.empty()) throw Error("invalid_backend", "http backend requires api_key_env");
    }
    if (max_retries < 0) throw Error("invalid_backend", "max_retries must be >= 0");
    if (timeout.count() <= 0) throw Error("invalid_backend", "timeout must be positive");
}

std::map<std::string, std::string> parse_mock_script(std::string_view text) {
    using json = nlohmann::json;
    std::vector<std::set<std::string>> open_objects;
    std::optional<std::string> duplicate;
    json::parser_callback_t on_event = [&](int, json::parse_event_t event, json& parsed) {
        switch (event) {
            case json::parse_event_t::object_start: open_objects.emplace_back(); break;
            case json::parse_event_t::object_end: open_objects.pop_back(); break;
            case json::parse_event_t::key: {
                auto key = parsed.get<std::string>();
                if (!open_objects.back().insert(key).second && !duplicate) duplicate = std::move(key);
                break;
            }
            default: break;
        }
        return true;
    };
    json j;
    try {
        j = json::parse(text, on_event);
    } catch (const json::parse_error& e) {
        throw Error("invalid_mock_script", std::string("mock script is not valid JSON: ") + e.what());
    }
    if (duplicate) throw Error("invalid_mock_script", "duplicate key in mock script: " + *duplicate);
    if (!j.is_object()) throw Error("invalid_mock_script", "mock script must be a JSON object");
    std::map<std::string, std::string> script;
    for (const auto& [key, value] : j.items()) {
        if (!value.is_string()) throw Error("invalid_mock_script", "reply for '" + key + "' is not a string");
        script.emplace(key, value.get<std::string>());
    }
    return script;
}

BackendConfig mock_backend_from_script(const std::filesystem::path& path) {
    BackendConfig config;
    config.kind = BackendKind::Mock;
    config.mock_script = path;
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error& e) {
        throw Error("invalid_mock_script", e.what());
    }
    config.mock_replies = parse_mock_script(text);
    return config;
}

BackendConfig backend_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw Error("invalid_backend", "backend config must be a JSON object");
    BackendConfig config;
    try {
        const auto kind = j.value("kind", std::string("mock"));
        if (kind == "mock") {
            if (j.contains("mock_script")) {
                std::filesystem::path script = j["mock_script"].get<std::string>();
                if (script.is_relative() && !base_dir.empty()) script = base_dir / script;
                config = mock_backend_from_script(script);
            }
            if (j.contains("mock_replies")) {
                config.mock_replies.merge(parse_mock_script(j["mock_replies"].dump()));
            }
            if (j.contains("fallback_reply")) config.fallback_reply = j["fallback_reply"].get<std::string>();
        } else if (kind == "http") {
            config.kind = BackendKind::Http;
            config.base_url = j.value("base_url", std::string());
            config.api_key_env = j.value("api_key_env", std::string("OPENAI_API_KEY"));
        } else {
            throw Error("invalid_backend", "unknown backend kind '" + kind + "'");
        }
        config.timeout = std::chrono::milliseconds(j.value("timeout_ms", 30000));
        config.max_retries = j.value("max_retries", 2);
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid_backend", std::string("malformed backend config: ") + e.what());
    }
    config.validate();
    return config;
}

BackendConfig load_backend_config(const std::string& source) {
    if (source == "mock") return BackendConfig{};
    const std::filesystem::path path(source);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("invalid_backend", path.string() + ": " + e.what());
    }
    return backend_config_from_json(j, path.parent_path());
}

MockBackend::MockBackend(std::map<std::string, std::string> script, std::optional<std::string> fallback_reply)
    : script_(std::move(script)), fallback_(std::move(fallback_reply)) {}

std::string MockBackend::digest_reply(std::string_view final_user_message) {
    return "MOCK(" + sha256_hex(final_user_message).substr(0, 8) + ")";
}

ChatResponse MockBackend::complete(const ChatRequest& request) {
    request.validate();
    ++calls_;
    std::string_view final_user = request.messages.back().content;
    for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
        if (it->role == ChatRole::User) {
            final_user = it->content;
            break;
        }
    }
    ChatResponse out;
    if (const auto hit = script_.find(std::string(final_user)); hit != script_.end()) {
        out.content = hit->second;
    } else {
        out.content = fallback_ ? *fallback_ : digest_reply(final_user);
    }
    out.finish_reason = "stop";
    for (const auto& m : request.messages) out.usage.prompt_tokens += rough_token_count(m.content);
    out.usage.completion_tokens = rough_token_count(out.content);
    return out;
}

HttpReply HttplibTransport::post(const std::string& url,
                                 const std::vector<std::pair<std::string, std::string>>& headers,
                                 const std::string& body, std::chrono::milliseconds timeout) {
    const auto [origin, path] = split_url(url);
    httplib::Client client(origin);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(path.empty() ? "/" : path, h, body, "application/json");
    if (!res) throw TransportFailure("request to " + url + " failed: " + httplib::to_string(res.error()));
    return HttpReply{res->status, res->body};
}

std::chrono::milliseconds RetryPolicy::delay_before(int retry) const {
    auto delay = base_delay;
    for (int i = 0; i < retry; ++i) delay *= factor;
    return delay;
}

HttpBackend::HttpBackend(BackendConfig config, std::shared_ptr<Transport> transport, Sleeper sleeper)
    : config_(std::move(config)),
      transport_(transport ? std::move(transport) : std::make_shared<HttplibTransport>()),
      sleeper_(sleeper ? std::move(sleeper) : Sleeper([](std::chrono::milliseconds d) {
          std::this_thread::sleep_for(d);
      })) {
    config_.validate();
}

ChatResponse HttpBackend::complete(const ChatRequest& request) {
    using K = BackendError::Kind;
    request.validate();
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
        throw BackendError(K::MissingApiKey, "environment variable " + config_.api_key_env + " is not set");
    }

    std::string base = config_.base_url;
    while (!base.empty() && base.back() == '/') base.pop_back();
    const std::string url = base + "/chat/completions";
    const std::vector<std::pair<std::string, std::string>> headers{
        {"Authorization", std::string("Bearer ") + key}};
    const std::string body = to_json(request).dump();

    const RetryPolicy policy{config_.max_retries};
    std::string last_failure;
    int last_status = 0;
    for (int attempt = 0; attempt <= policy.max_retries; ++attempt) {
        if (attempt > 0) sleeper_(policy.delay_before(attempt - 1));
        try {
            const HttpReply reply = transport_->post(url, headers, body, config_.timeout);
            if (reply.status >= 200 && reply.status < 300) return parse_completion_body(reply.body);
            last_status = reply.status;
            last_failure = "HTTP " + std::to_string(reply.status) + ": " + reply.body.substr(0, 200);
            if (!RetryPolicy::retryable_status(reply.status)) {
                throw BackendError(K::HttpStatus, last_failure, reply.status, attempt + 1);
            }
        } catch (const TransportFailure& e) {
            last_status = 0;
            last_failure = e.what();
        }
    }
    throw BackendError(K::RetriesExhausted,
                       "gave up after " + std::to_string(policy.max_retries + 1) + " attempts: " + last_failure,
                       last_status, policy.max_retries + 1);
}

std::shared_ptr<ChatBackend> make_backend(const BackendConfig& config) {
    config.validate();
    if (config.kind == BackendKind::Http) return std::make_shared<HttpBackend>(config);
    return std::make_shared<MockBackend>(config.mock_replies, config.fallback_reply);
}

ChatResponse complete(const ChatRequest& request, const BackendConfig& config) {
    return make_backend(config)->complete(request);
}

}  // namespace counsel
