#pragma once

#include "counsel/consultation.hpp"
#include "counsel/llm_gateway.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

namespace httplib {
class Server;
}

namespace counsel::service {

inline constexpr std::string_view kSafetyBanner =
    "This assistant is not a crisis service. If you are in danger or thinking about harming yourself, "
    "contact local emergency services or a crisis line now.";

struct Response {
    int status = 200;
    nlohmann::ordered_json body;
};

/// Sessions by id. Each entry carries its own mutex: one writer per session,
/// different sessions proceed in parallel.
class SessionStore {
public:
    struct Entry {
        std::mutex mutex;
        Session session;
    };

    void insert(Session session);
    std::shared_ptr<Entry> find(const std::string& id) const;
    std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
};

struct ServiceOptions {
    std::string model = "gpt-4";
    int max_tokens = 512;
    // Closed sessions are appended here as JSONL when set.
    std::optional<std::filesystem::path> export_path;
    Clock clock = system_clock();
};

/// Transport-independent handlers. Error bodies are {error_code, message}.
class ConsultationService {
public:
    ConsultationService(std::shared_ptr<ChatBackend> backend, ConsultationResources resources,
                        ServiceOptions options = {});

    Response create_session(std::string_view body);
    Response post_message(const std::string& session_id, std::string_view body);
    Response get_session(const std::string& session_id) const;
    Response close_session(const std::string& session_id);

    const SessionStore& store() const { return store_; }

private:
    std::shared_ptr<ChatBackend> backend_;
    ConsultationResources resources_;
    ServiceOptions options_;
    SessionStore store_;
    std::mutex export_mutex_;
};

Response error_response(int status, std::string_view code, std::string_view message);

/// Export document with the safety banner as its first field.
nlohmann::ordered_json session_document(const Session& session);

/// POST /sessions, POST /sessions/{id}/messages, GET /sessions/{id},
/// POST /sessions/{id}/close.
void mount_routes(httplib::Server& server, ConsultationService& service);

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    BackendConfig backend;
    std::filesystem::path data_dir;
    std::string model = "gpt-4";
    int max_tokens = 512;
    std::optional<std::filesystem::path> export_path;
    std::optional<SessionConfig> session;

    /// Relative paths resolve against `base_dir`. `backend` is either an
    /// inline backend document or a string accepted by load_backend_config.
    static ServiceConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    static ServiceConfig from_file(const std::filesystem::path& path);
};

}  // namespace counsel::service
