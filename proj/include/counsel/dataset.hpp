#pragma once

#include "counsel/util.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace counsel::dataset {

struct Exchange {
    std::string speaker;
    std::string text;

    bool operator==(const Exchange&) const = default;
};

struct RawDialogue {
    std::string source_id;
    std::vector<Exchange> exchanges;
    std::map<std::string, std::string> raw_metadata;

    bool operator==(const RawDialogue&) const = default;
};

enum class DialogueRole { Seeker, Counselor };

std::string_view to_string(DialogueRole role);
DialogueRole dialogue_role_from_string(std::string_view s);

struct RecordTurn {
    DialogueRole role = DialogueRole::Seeker;
    std::string text;

    bool operator==(const RecordTurn&) const = default;
};

struct Provenance {
    std::string source_id;
    std::string ingested_at;

    bool operator==(const Provenance&) const = default;
};

struct DialogueRecord {
    std::string record_id;
    std::string topic;
    std::map<std::string, std::string> demographics;
    std::string context;
    std::vector<RecordTurn> turns;
    Provenance provenance;

    bool operator==(const DialogueRecord&) const = default;
};

nlohmann::json to_json(const DialogueRecord& record);
DialogueRecord record_from_json(const nlohmann::json& j);

/// A skipped input row or unreadable output line, 1-based.
struct LineIssue {
    std::size_t line = 0;
    std::string message;
};

struct ParseResult {
    std::vector<RawDialogue> dialogues;
    std::vector<LineIssue> skipped;
};

/// `format_id` is "jsonl" ({dialogue_id, speaker, text} per line) or "csv"
/// (header naming dialogue_id, speaker, text). Extra fields become
/// raw_metadata. Dialogues keep first-appearance order.
ParseResult parse_raw(std::string_view bytes, std::string_view format_id);

enum class PiiClass { Email, Phone, Url, Name, Id };

std::string_view to_string(PiiClass cls);
std::string_view placeholder(PiiClass cls);

struct PiiRule {
    PiiClass cls;
    std::string pattern;
    std::regex compiled;
};

using PiiRuleSet = std::vector<PiiRule>;

/// Email, URL, phone, long digit run, honorific + capitalized name. Applied
/// in that order.
PiiRuleSet default_pii_rules();

struct AnonymizationReport {
    std::vector<std::pair<PiiClass, int>> replacements;
    int total = 0;

    int count(PiiClass cls) const;
};

/// Matches of every rule in `text`, without replacing anything.
int count_pii_matches(std::string_view text, const PiiRuleSet& rules);

std::pair<RawDialogue, AnonymizationReport> anonymize(const RawDialogue& dialogue, const PiiRuleSet& rules);

/// Drops blank, pure-URL and sub-2-character exchanges; absent when fewer
/// than two exchanges survive or only one speaker remains.
std::optional<RawDialogue> clean(const RawDialogue& dialogue);

/// Speaker label -> role, matched case-insensitively. File lines look like
/// `therapist = Counselor`.
class RoleMap {
public:
    RoleMap() = default;

    static RoleMap from_file(const std::filesystem::path& path);
    static RoleMap shipped();

    void set(std::string label, DialogueRole role);
    std::optional<DialogueRole> lookup(std::string_view label) const;

private:
    std::map<std::string, DialogueRole> roles_;
};

/// `rec-` + first 16 hex of SHA-256(source_id, first exchange text).
std::string record_id_for(const RawDialogue& dialogue);

DialogueRecord standardize(const RawDialogue& dialogue, const std::string& topic,
                           const std::map<std::string, std::string>& demographics,
                           const std::string& context, const RoleMap& roles,
                           const Clock& clock = system_clock());

std::size_t write_records(const std::vector<DialogueRecord>& records, const std::filesystem::path& path);

struct ReadResult {
    std::vector<DialogueRecord> records;
    std::vector<LineIssue> errors;
};

ReadResult read_records(const std::filesystem::path& path);

}  // namespace counsel::dataset
