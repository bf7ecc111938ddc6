#pragma once

#include "counsel/util.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace counsel {

/// Position in the layered consultation flow. EmpathyOverlay interposes on
/// detected distress and hands control back to the stage it interrupted.
enum class Stage { Intake, Exploration, EmpathyOverlay, Guidance, Closing };

enum class Role { User, Assistant, System };

std::string_view to_string(Stage stage);
std::string_view to_string(Role role);
Stage stage_from_string(std::string_view s);
Role role_from_string(std::string_view s);

/// Rank on the forward axis Intake < Exploration < Guidance < Closing.
/// EmpathyOverlay has no rank; returns -1.
int progress_rank(Stage stage);

inline constexpr std::array<std::string_view, 4> kSlotNames{"concern", "impact", "triggers", "coping"};

struct Turn {
    Role role = Role::User;
    std::string text;
    Stage stage_tag = Stage::Intake;
    std::size_t index = 0;
    std::string timestamp;

    bool operator==(const Turn&) const = default;
};

struct SignalState {
    bool distress = false;
    // Set by a fresh lexicon hit, cleared once the assistant has replied
    // inside the overlay.
    bool empathy_pending = false;
    std::map<std::string, std::optional<std::string>> slots = empty_slots();
    int user_turn_count = 0;

    static std::map<std::string, std::optional<std::string>> empty_slots();
    int filled_slot_count() const;
    bool slot_filled(std::string_view name) const;

    bool operator==(const SignalState&) const = default;
};

struct SessionConfig {
    int advance_slot_threshold = 3;
    int advance_turn_threshold = 4;
    std::string distress_lexicon_id = "default";
    double temperature = 0.7;

    /// Throws Error("invalid_config") on threshold < 1 or negative temperature.
    void validate() const;

    bool operator==(const SessionConfig&) const = default;
};

struct Session {
    std::string id;
    Stage stage = Stage::Intake;
    // Stage the overlay will hand back to; meaningful only while
    // stage == EmpathyOverlay.
    Stage resume_stage = Stage::Intake;
    std::vector<Turn> turns;
    SignalState signals;
    SessionConfig config;
    std::optional<std::string> scenario_topic;
    // Prompt templates already issued in this session.
    std::set<std::string> used_templates;
};

/// Case-insensitive word-boundary phrase list.
class Lexicon {
public:
    Lexicon() = default;
    explicit Lexicon(std::vector<std::string> entries);

    static Lexicon from_file(const std::filesystem::path& path);

    bool matches(std::string_view text) const;
    bool empty() const { return entries_.empty(); }
    const std::vector<std::string>& entries() const { return entries_; }

private:
    std::vector<std::string> entries_;
};

/// Keyword groups per slot. File format: `slot: phrase` per line; the phrase
/// `*` fills the slot from any message carrying at least one alphanumeric.
class SlotPatterns {
public:
    SlotPatterns() = default;

    static SlotPatterns from_file(const std::filesystem::path& path);

    void add(std::string slot, std::string phrase);
    bool matches(std::string_view slot, std::string_view text) const;
    const std::map<std::string, std::vector<std::string>>& groups() const { return groups_; }

private:
    std::map<std::string, std::vector<std::string>> groups_;
};

/// Everything signal extraction needs: distress lexicons by id plus slot
/// patterns.
struct SignalRules {
    std::map<std::string, Lexicon> lexicons;
    SlotPatterns slot_patterns;

    /// Loads `<dir>/lexicon/distress.txt` as "default" and
    /// `<dir>/lexicon/slot_patterns.txt`.
    static SignalRules from_data_dir(const std::filesystem::path& dir);

    const Lexicon& lexicon(const std::string& id) const;
};

Session create_session(const SessionConfig& config,
                       std::optional<std::string> scenario_topic = std::nullopt);

SignalState extract_signals(std::string_view text, const SignalState& prior,
                            const Lexicon& lexicon, const SlotPatterns& patterns);

/// Pure: depends only on the session's stage, resume stage, signals and config.
Stage next_stage(const Session& session);

Session ingest_user_message(Session session, std::string_view text, const SignalRules& rules,
                            const Clock& clock = system_clock());

/// The first turn of a session may be an assistant turn (the opening
/// prompt); after that assistant turns must answer a user turn.
Session append_assistant_turn(Session session, std::string_view text,
                              const Clock& clock = system_clock());

/// Moves the session to Closing; further messages are rejected.
Session close_session(Session session);

const std::vector<Turn>& transcript(const Session& session);

nlohmann::json to_json(const Turn& turn);
nlohmann::json to_json(const SignalState& signals);
Turn turn_from_json(const nlohmann::json& j);

/// Export document {id, stage, scenario_topic, turns[], signals}.
nlohmann::ordered_json export_session(const Session& session);

}  // namespace counsel
