#include "counsel/service.hpp"

#include <httplib.h>

#include <fstream>

namespace counsel::service {

namespace {

int status_for(const std::string& code) {
    if (code == "session_closed" || code == "alternation_violation") return 409;
    if (code == "empty_text") return 422;
    if (code == "invalid_config" || code == "malformed_body") return 400;
    return 500;
}

// Empty bodies read as {}.
std::optional<nlohmann::json> parse_object(std::string_view body) {
    if (is_blank(body)) return nlohmann::json::object();
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    return j;
}

SessionConfig apply_overrides(SessionConfig config, const nlohmann::json& overrides) {
    if (!overrides.is_object()) throw Error("malformed_body", "config must be an object");
    try {
        for (const auto& [key, value] : overrides.items()) {
            if (key == "advance_slot_threshold") config.advance_slot_threshold = value.get<int>();
            else if (key == "advance_turn_threshold") config.advance_turn_threshold = value.get<int>();
            else if (key == "distress_lexicon_id") config.distress_lexicon_id = value.get<std::string>();
            else if (key == "temperature") config.temperature = value.get<double>();
            else throw Error("invalid_config", "unknown config field '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed_body", std::string("bad config value: ") + e.what());
    }
    config.validate();
    return config;
}

}  // namespace

void SessionStore::insert(Session session) {
    auto entry = std::make_shared<Entry>();
    const std::string id = session.id;
    entry->session = std::move(session);
    std::lock_guard lock(mutex_);
    if (!sessions_.emplace(id, std::move(entry)).second) {
        throw Error("duplicate_session", "session id " + id + " already exists");
    }
}

std::shared_ptr<SessionStore::Entry> SessionStore::find(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

std::size_t SessionStore::size() const {
    std::lock_guard lock(mutex_);
    return sessions_.size();
}

Response error_response(int status, std::string_view code, std::string_view message) {
    Response r;
    r.status = status;
    r.body = {{"error_code", code}, {"message", message}};
    return r;
}

nlohmann::ordered_json session_document(const Session& session) {
    nlohmann::ordered_json doc;
    doc["safety_banner"] = std::string(kSafetyBanner);
    const auto exported = export_session(session);
    for (auto& [key, value] : exported.items()) doc[key] = value;
    return doc;
}

ConsultationService::ConsultationService(std::shared_ptr<ChatBackend> backend, ConsultationResources resources,
                                         ServiceOptions options)
    : backend_(std::move(backend)), resources_(std::move(resources)), options_(std::move(options)) {
    if (!backend_) throw Error("invalid_config", "service requires a backend");
    resources_.session_config.validate();
}

Response ConsultationService::create_session(std::string_view body) {
    const auto request = parse_object(body);
    if (!request) return error_response(400, "malformed_body", "body must be a JSON object");
    try {
        std::optional<std::string> topic;
        if (const auto it = request->find("scenario_topic"); it != request->end() && !it->is_null()) {
            if (!it->is_string()) return error_response(400, "malformed_body", "scenario_topic must be a string");
            topic = it->get<std::string>();
        }
        SessionConfig config = resources_.session_config;
        if (const auto it = request->find("config"); it != request->end()) config = apply_overrides(config, *it);
        resources_.rules.lexicon(config.distress_lexicon_id);

        Session session = counsel::create_session(config, topic);
        session = open_consultation(std::move(session), resources_, options_.clock);
        Response r;
        r.status = 201;
        r.body = {{"session_id", session.id},
                  {"opening_prompt", session.turns.front().text},
                  {"stage", to_string(session.stage)},
                  {"safety_banner", kSafetyBanner}};
        store_.insert(std::move(session));
        return r;
    } catch (const Error& e) {
        return error_response(status_for(e.code()), e.code(), e.what());
    }
}

Response ConsultationService::post_message(const std::string& session_id, std::string_view body) {
    const auto entry = store_.find(session_id);
    if (!entry) return error_response(404, "unknown_session", "no session " + session_id);
    const auto request = parse_object(body);
    if (!request) return error_response(400, "malformed_body", "body must be a JSON object");
    const auto text = request->find("text");
    if (text == request->end() || !text->is_string()) {
        return error_response(400, "malformed_body", "body must carry a string 'text'");
    }

    std::lock_guard lock(entry->mutex);
    // Work on a copy; the stored session changes only once the reply exists.
    Session working = entry->session;
    try {
        working = ingest_user_message(std::move(working), text->get<std::string>(), resources_.rules,
                                      options_.clock);
        const ChatRequest chat = layered_reply_request(working, resources_, options_.model, options_.max_tokens);
        ChatResponse reply;
        try {
            reply = backend_->complete(chat);
        } catch (const BackendError& e) {
            std::string detail = e.what();
            if (e.attempts() > 0) detail += " (after " + std::to_string(e.attempts()) + " attempts)";
            return error_response(502, "backend_failure", detail);
        }
        if (is_blank(reply.content)) return error_response(502, "backend_failure", "backend returned an empty reply");
        working = append_assistant_turn(std::move(working), reply.content, options_.clock);

        Response r;
        r.body = {{"reply", reply.content},
                  {"stage", to_string(working.stage)},
                  {"signals", nlohmann::ordered_json(to_json(working.signals))}};
        entry->session = std::move(working);
        return r;
    } catch (const Error& e) {
        return error_response(status_for(e.code()), e.code(), e.what());
    }
}

Response ConsultationService::get_session(const std::string& session_id) const {
    const auto entry = store_.find(session_id);
    if (!entry) return error_response(404, "unknown_session", "no session " + session_id);
    std::lock_guard lock(entry->mutex);
    Response r;
    r.body = session_document(entry->session);
    return r;
}

Response ConsultationService::close_session(const std::string& session_id) {
    const auto entry = store_.find(session_id);
    if (!entry) return error_response(404, "unknown_session", "no session " + session_id);
    std::lock_guard lock(entry->mutex);
    if (entry->session.stage == Stage::Closing) {
        return error_response(409, "session_closed", "session is already closed");
    }
    Session closed = counsel::close_session(entry->session);
    Response r;
    r.body = session_document(closed);
    if (options_.export_path) {
        std::lock_guard export_lock(export_mutex_);
        std::ofstream out(*options_.export_path, std::ios::binary | std::ios::app);
        out << r.body.dump() << '\n';
        if (!out) return error_response(500, "export_failed", "cannot append to " + options_.export_path->string());
    }
    entry->session = std::move(closed);
    return r;
}

void mount_routes(httplib::Server& server, ConsultationService& service) {
    const auto send = [](httplib::Response& res, const Response& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json; charset=utf-8");
    };
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server.Options(R"(/sessions.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.Post("/sessions", [&service, send](const httplib::Request& req, httplib::Response& res) {
        send(res, service.create_session(req.body));
    });
    server.Post(R"(/sessions/([^/]+)/messages)", [&service, send](const httplib::Request& req, httplib::Response& res) {
        send(res, service.post_message(req.matches[1], req.body));
    });
    server.Post(R"(/sessions/([^/]+)/close)", [&service, send](const httplib::Request& req, httplib::Response& res) {
        send(res, service.close_session(req.matches[1]));
    });
    server.Get(R"(/sessions/([^/]+))", [&service, send](const httplib::Request& req, httplib::Response& res) {
        send(res, service.get_session(req.matches[1]));
    });
    server.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string message = "unexpected failure";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            message = e.what();
        } catch (...) {
        }
        send(res, error_response(500, "internal_error", message));
    });
    server.set_error_handler([send](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) send(res, error_response(res.status, "not_found", "no such route"));
    });
}

ServiceConfig ServiceConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw Error("invalid_config", "service config must be a JSON object");
    const auto resolve = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };
    ServiceConfig c;
    try {
        c.host = j.value("host", c.host);
        c.port = j.value("port", c.port);
        c.model = j.value("model", c.model);
        c.max_tokens = j.value("max_tokens", c.max_tokens);
        c.data_dir = j.contains("data_dir") ? resolve(j.at("data_dir").get<std::string>()) : default_data_dir();
        if (j.contains("export_path")) c.export_path = resolve(j.at("export_path").get<std::string>());
        if (const auto it = j.find("backend"); it == j.end()) {
            c.backend = load_backend_config("mock");
        } else if (it->is_string()) {
            const auto source = it->get<std::string>();
            c.backend = load_backend_config(source == "mock" ? source : resolve(source).string());
        } else {
            c.backend = backend_config_from_json(*it, base_dir);
        }
        if (const auto it = j.find("session"); it != j.end()) {
            c.session = apply_overrides(SessionConfig{}, *it);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid_config", std::string("malformed service config: ") + e.what());
    }
    if (c.port < 0 || c.port > 65535) throw Error("invalid_config", "port out of range");
    if (c.max_tokens <= 0) throw Error("invalid_config", "max_tokens must be positive");
    return c;
}

ServiceConfig ServiceConfig::from_file(const std::filesystem::path& path) {
    const auto j = nlohmann::json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw Error("invalid_config", path.string() + " is not valid JSON");
    return from_json(j, path.parent_path());
}

}  // namespace counsel::service
