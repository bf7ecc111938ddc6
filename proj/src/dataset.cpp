#include "counsel/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace counsel::dataset {

namespace {

constexpr int kMaxAnonymizationPasses = 4;

const std::regex& url_regex() {
    static const std::regex re(R"((https?://|www\.)[^\s<>"]*[^\s<>".,;:!?)\]'])");
    return re;
}

// Splits on '\n', stripping a trailing '\r'. Line numbers are index + 1.
std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        start = end + 1;
    }
    return lines;
}

std::string scalar_to_string(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    return v.dump();
}

class DialogueGrouper {
public:
    void add(const std::string& id, Exchange exchange, const std::map<std::string, std::string>& extra) {
        auto [it, inserted] = index_.emplace(id, dialogues_.size());
        if (inserted) dialogues_.push_back(RawDialogue{id, {}, {}});
        auto& d = dialogues_[it->second];
        d.exchanges.push_back(std::move(exchange));
        for (const auto& [k, v] : extra) d.raw_metadata.emplace(k, v);
    }

    std::vector<RawDialogue> take() { return std::move(dialogues_); }

private:
    std::map<std::string, std::size_t> index_;
    std::vector<RawDialogue> dialogues_;
};

ParseResult parse_jsonl(std::string_view text) {
    ParseResult result;
    DialogueGrouper grouper;
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (is_blank(lines[i])) continue;
        const std::size_t line_no = i + 1;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(lines[i]);
        } catch (const nlohmann::json::parse_error& e) {
            result.skipped.push_back({line_no, std::string("invalid JSON: ") + e.what()});
            continue;
        }
        if (!j.is_object()) {
            result.skipped.push_back({line_no, "line is not a JSON object"});
            continue;
        }
        std::string missing;
        for (const char* field : {"dialogue_id", "speaker", "text"}) {
            if (!j.contains(field) || !(j[field].is_string() || j[field].is_number_integer())) {
                missing = field;
                break;
            }
        }
        if (!missing.empty()) {
            result.skipped.push_back({line_no, "missing or non-scalar field '" + missing + "'"});
            continue;
        }
        std::map<std::string, std::string> extra;
        for (const auto& [k, v] : j.items()) {
            if (k == "dialogue_id" || k == "speaker" || k == "text") continue;
            if (v.is_primitive() && !v.is_null()) extra.emplace(k, scalar_to_string(v));
        }
        grouper.add(scalar_to_string(j["dialogue_id"]),
                    Exchange{scalar_to_string(j["speaker"]), scalar_to_string(j["text"])}, extra);
    }
    result.dialogues = grouper.take();
    return result;
}

ParseResult parse_csv(std::string_view text) {
    ParseResult result;
    auto records = read_csv(text);
    if (records.empty()) return result;

    const auto& header = records.front();
    if (header.unterminated) throw Error("invalid_format", "CSV header has an unterminated quote");
    std::map<std::string, std::size_t> column;
    for (std::size_t c = 0; c < header.fields.size(); ++c) column.emplace(trim(header.fields[c]), c);
    for (const char* required : {"dialogue_id", "speaker", "text"}) {
        if (!column.contains(required)) {
            throw Error("invalid_format", std::string("CSV header lacks column '") + required + "'");
        }
    }

    DialogueGrouper grouper;
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.unterminated) {
            result.skipped.push_back({rec.line, "unterminated quoted field"});
            continue;
        }
        if (rec.fields.size() != header.fields.size()) {
            result.skipped.push_back({rec.line, "expected " + std::to_string(header.fields.size()) +
                                                    " fields, found " + std::to_string(rec.fields.size())});
            continue;
        }
        const auto& id = rec.fields[column["dialogue_id"]];
        if (is_blank(id)) {
            result.skipped.push_back({rec.line, "empty dialogue_id"});
            continue;
        }
        std::map<std::string, std::string> extra;
        for (const auto& [name, c] : column) {
            if (name == "dialogue_id" || name == "speaker" || name == "text") continue;
            if (!rec.fields[c].empty()) extra.emplace(name, rec.fields[c]);
        }
        grouper.add(id, Exchange{rec.fields[column["speaker"]], rec.fields[column["text"]]}, extra);
    }
    result.dialogues = grouper.take();
    return result;
}

bool is_pure_url(std::string_view text) {
    const std::string t = trim(text);
    if (t == placeholder(PiiClass::Url)) return true;
    return std::regex_match(t, url_regex());
}

std::string anonymize_text(const std::string& text, const PiiRuleSet& rules, std::map<PiiClass, int>& counts) {
    std::string current = text;
    for (int pass = 0; pass < kMaxAnonymizationPasses; ++pass) {
        int replaced_this_pass = 0;
        for (const auto& rule : rules) {
            std::string out;
            auto last = current.cbegin();
            int n = 0;
            for (std::sregex_iterator it(current.begin(), current.end(), rule.compiled), end; it != end; ++it) {
                out.append(last, (*it)[0].first);
                out.append(placeholder(rule.cls));
                last = (*it)[0].second;
                ++n;
            }
            if (n == 0) continue;
            out.append(last, current.cend());
            current = std::move(out);
            counts[rule.cls] += n;
            replaced_this_pass += n;
        }
        if (replaced_this_pass == 0) break;
    }
    return current;
}

}  // namespace

std::string_view to_string(DialogueRole role) { return role == DialogueRole::Seeker ? "Seeker" : "Counselor"; }

DialogueRole dialogue_role_from_string(std::string_view s) {
    const auto lower = to_lower_ascii(trim(s));
    if (lower == "seeker") return DialogueRole::Seeker;
    if (lower == "counselor") return DialogueRole::Counselor;
    throw Error("invalid_role", "unknown dialogue role '" + std::string(s) + "'");
}

nlohmann::json to_json(const DialogueRecord& record) {
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& t : record.turns) turns.push_back({{"role", to_string(t.role)}, {"text", t.text}});
    return {{"record_id", record.record_id},
            {"topic", record.topic},
            {"demographics", record.demographics},
            {"context", record.context},
            {"turns", std::move(turns)},
            {"provenance",
             {{"source_id", record.provenance.source_id}, {"ingested_at", record.provenance.ingested_at}}}};
}

DialogueRecord record_from_json(const nlohmann::json& j) {
    DialogueRecord r;
    r.record_id = j.at("record_id").get<std::string>();
    r.topic = j.at("topic").get<std::string>();
    r.demographics = j.at("demographics").get<std::map<std::string, std::string>>();
    r.context = j.at("context").get<std::string>();
    for (const auto& t : j.at("turns")) {
        r.turns.push_back({dialogue_role_from_string(t.at("role").get<std::string>()), t.at("text").get<std::string>()});
    }
    if (r.turns.empty()) throw Error("invalid_record", "record has no turns");
    const auto& p = j.at("provenance");
    r.provenance = {p.at("source_id").get<std::string>(), p.at("ingested_at").get<std::string>()};
    return r;
}

ParseResult parse_raw(std::string_view bytes, std::string_view format_id) {
    if (format_id != "jsonl" && format_id != "csv") {
        throw Error("unknown_format", "unknown input format '" + std::string(format_id) + "'");
    }
    if (bytes.substr(0, 3) == "\xEF\xBB\xBF") bytes.remove_prefix(3);
    if (!is_valid_utf8(bytes)) throw Error("invalid_encoding", "input is not valid UTF-8");
    return format_id == "jsonl" ? parse_jsonl(bytes) : parse_csv(bytes);
}

std::string_view to_string(PiiClass cls) {
    switch (cls) {
        case PiiClass::Email: return "EMAIL";
        case PiiClass::Phone: return "PHONE";
        case PiiClass::Url: return "URL";
        case PiiClass::Name: return "NAME";
        case PiiClass::Id: return "ID";
    }
    return "UNKNOWN";
}

std::string_view placeholder(PiiClass cls) {
    switch (cls) {
        case PiiClass::Email: return "[EMAIL]";
        case PiiClass::Phone: return "[PHONE]";
        case PiiClass::Url: return "[URL]";
        case PiiClass::Name: return "[NAME]";
        case PiiClass::Id: return "[ID]";
    }
    return "[PII]";
}

PiiRuleSet default_pii_rules() {
    const std::vector<std::pair<PiiClass, std::string>> patterns{
        {PiiClass::Email, R"([A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,})"},
        {PiiClass::Url, R"((https?://|www\.)[^\s<>"]*[^\s<>".,;:!?)\]'])"},
        {PiiClass::Phone, R"((\+\d{1,3}[ .-]?)?(\(\d{3}\)[ .-]?|\d{3}[ .-])\d{3}[ .-]\d{4}\b)"},
        {PiiClass::Id, R"(\b\d{6,}\b)"},
        {PiiClass::Name, R"(\b(Mr|Mrs|Ms|Miss|Mx|Dr|Prof)\.?\s+[A-Z][a-z]+( [A-Z][a-z]+)?)"},
    };
    PiiRuleSet rules;
    for (const auto& [cls, pattern] : patterns) {
        rules.push_back(PiiRule{cls, pattern, std::regex(pattern, std::regex::ECMAScript | std::regex::optimize)});
    }
    return rules;
}

int AnonymizationReport::count(PiiClass cls) const {
    for (const auto& [c, n] : replacements) {
        if (c == cls) return n;
    }
    return 0;
}

int count_pii_matches(std::string_view text, const PiiRuleSet& rules) {
    const std::string s(text);
    int n = 0;
    for (const auto& rule : rules) {
        n += static_cast<int>(std::distance(std::sregex_iterator(s.begin(), s.end(), rule.compiled),
                                            std::sregex_iterator()));
    }
    return n;
}

std::pair<RawDialogue, AnonymizationReport> anonymize(const RawDialogue& dialogue, const PiiRuleSet& rules) {
    if (rules.empty()) throw Error("invalid_rules", "PII rule set is empty");
    std::map<PiiClass, int> counts;
    RawDialogue out = dialogue;
    for (auto& ex : out.exchanges) ex.text = anonymize_text(ex.text, rules, counts);

    AnonymizationReport report;
    for (const auto& rule : rules) {
        if (std::none_of(report.replacements.begin(), report.replacements.end(),
                         [&](const auto& kv) { return kv.first == rule.cls; })) {
            const int n = counts[rule.cls];
            report.replacements.emplace_back(rule.cls, n);
            report.total += n;
        }
    }
    return {std::move(out), report};
}

std::optional<RawDialogue> clean(const RawDialogue& dialogue) {
    RawDialogue out = dialogue;
    out.exchanges.clear();
    for (const auto& ex : dialogue.exchanges) {
        if (is_blank(ex.text) || is_pure_url(ex.text) || utf8_length(trim(ex.text)) < 2) continue;
        out.exchanges.push_back(ex);
    }
    if (out.exchanges.size() < 2) return std::nullopt;
    const bool alternates = std::adjacent_find(out.exchanges.begin(), out.exchanges.end(),
                                               [](const Exchange& a, const Exchange& b) {
                                                   return a.speaker != b.speaker;
                                               }) != out.exchanges.end();
    if (!alternates) return std::nullopt;
    return out;
}

RoleMap RoleMap::from_file(const std::filesystem::path& path) {
    RoleMap map;
    for (const auto& line : read_entry_lines(path)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error("invalid_role_map", "expected 'label = Role' in " + path.string() + ": " + line);
        }
        map.set(trim(line.substr(0, eq)), dialogue_role_from_string(line.substr(eq + 1)));
    }
    return map;
}

RoleMap RoleMap::shipped() { return from_file(default_data_dir() / "role_map.txt"); }

void RoleMap::set(std::string label, DialogueRole role) { roles_[to_lower_ascii(trim(label))] = role; }

std::optional<DialogueRole> RoleMap::lookup(std::string_view label) const {
    const auto it = roles_.find(to_lower_ascii(trim(label)));
    if (it == roles_.end()) return std::nullopt;
    return it->second;
}

std::string record_id_for(const RawDialogue& dialogue) {
    std::string key = dialogue.source_id;
    key.push_back('\x1f');
    if (!dialogue.exchanges.empty()) key.append(dialogue.exchanges.front().text);
    return "rec-" + sha256_hex(key).substr(0, 16);
}

DialogueRecord standardize(const RawDialogue& dialogue, const std::string& topic,
                           const std::map<std::string, std::string>& demographics,
                           const std::string& context, const RoleMap& roles, const Clock& clock) {
    if (is_blank(topic)) throw Error("empty_topic", "topic must be non-empty");
    if (dialogue.exchanges.empty()) throw Error("empty_dialogue", "dialogue " + dialogue.source_id + " is empty");

    DialogueRecord record;
    record.record_id = record_id_for(dialogue);
    record.topic = topic;
    record.demographics = demographics;
    record.context = context;
    record.provenance = {dialogue.source_id, clock()};
    const std::string first_speaker = dialogue.exchanges.front().speaker;
    for (const auto& ex : dialogue.exchanges) {
        auto role = roles.lookup(ex.speaker);
        if (!role && ex.speaker == first_speaker) role = DialogueRole::Seeker;
        if (!role) {
            throw Error("unmappable_speaker", "dialogue " + dialogue.source_id + ": no role for speaker '" +
                                                  ex.speaker + "'");
        }
        record.turns.push_back({*role, ex.text});
    }
    return record;
}

std::size_t write_records(const std::vector<DialogueRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io_error", "cannot write " + path.string());
    for (const auto& r : records) out << to_json(r).dump() << '\n';
    out.flush();
    if (!out) throw Error("io_error", "write failed for " + path.string());
    return records.size();
}

ReadResult read_records(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    ReadResult result;
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (is_blank(lines[i])) continue;
        try {
            result.records.push_back(record_from_json(nlohmann::json::parse(lines[i])));
        } catch (const nlohmann::json::exception& e) {
            result.errors.push_back({i + 1, e.what()});
        } catch (const Error& e) {
            result.errors.push_back({i + 1, e.what()});
        }
    }
    return result;
}

}  // namespace counsel::dataset
