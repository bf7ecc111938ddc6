#include "counsel/judge.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

namespace counsel::judge {

namespace {

struct KeyValueLine {
    std::string key;
    std::string value;
};

std::optional<KeyValueLine> split_key_value(std::string_view line) {
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) return std::nullopt;
    return KeyValueLine{trim(line.substr(0, colon)), trim(line.substr(colon + 1))};
}

std::optional<int> parse_int(std::string_view s) {
    if (s.empty()) return std::nullopt;
    int value = 0;
    const char* begin = s.data();
    if (*begin == '+') ++begin;
    const auto [end, ec] = std::from_chars(begin, s.data() + s.size(), value);
    if (ec != std::errc() || end != s.data() + s.size()) return std::nullopt;
    return value;
}

std::vector<std::string> split_lines(std::string_view raw) {
    std::vector<std::string> lines;
    std::string current;
    for (char c : raw) {
        if (c == '\n') {
            if (!current.empty() && current.back() == '\r') current.pop_back();
            lines.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    if (!current.empty() && current.back() == '\r') current.pop_back();
    lines.push_back(std::move(current));
    return lines;
}

std::string system_instructions(const Rubric& rubric) {
    std::ostringstream out;
    out << "You are an expert evaluator of psychological consultation dialogues. Read the transcript "
           "and judge the ASSISTANT's replies to the USER against each criterion below. Compare them "
           "with the reference examples you are shown.\n\nCriteria:\n";
    for (const auto& d : rubric.dimensions) {
        out << "- " << d.id << " (" << d.name << ", integer " << d.scale_min << "-" << d.scale_max
            << "): " << d.description << '\n';
    }
    out << "\nOutput format: exactly one line per criterion in the form `<criterion_id>: <integer>`, "
           "then one final line `feedback: <qualitative strengths and areas for improvement>`. "
           "Write nothing else.";
    return out.str();
}

void atomic_write(const std::filesystem::path& path, const std::string& contents) {
    auto tmp = path;
    tmp += ".tmp";
    write_file(tmp, contents);
    std::filesystem::rename(tmp, path);
}

}  // namespace

void Rubric::validate() const {
    if (id.empty()) throw Error("invalid_rubric", "rubric id is empty");
    if (dimensions.empty()) throw Error("invalid_rubric", "rubric " + id + " has no dimensions");
    std::set<std::string> seen;
    for (const auto& d : dimensions) {
        if (d.id.empty() || d.id == "feedback") {
            throw Error("invalid_rubric", "rubric " + id + " has an invalid dimension id '" + d.id + "'");
        }
        if (!seen.insert(d.id).second) throw Error("invalid_rubric", "duplicate dimension " + d.id);
        if (d.scale_min >= d.scale_max) throw Error("invalid_rubric", "dimension " + d.id + " has min >= max");
    }
    for (std::size_t i = 0; i < exemplars.size(); ++i) {
        try {
            parse_verdict(exemplars[i].verdict_block, *this);
        } catch (const VerdictError& e) {
            throw Error("invalid_rubric", "exemplar " + std::to_string(i) + " does not parse: " + e.what());
        }
    }
}

Rubric Rubric::from_json(const nlohmann::json& j) {
    Rubric r;
    try {
        r.id = j.at("id").get<std::string>();
        r.version = j.value("version", 1);
        for (const auto& d : j.at("dimensions")) {
            RubricDimension dim;
            dim.id = d.at("id").get<std::string>();
            dim.name = d.value("name", dim.id);
            dim.description = d.value("description", std::string());
            dim.scale_min = d.value("scale_min", 1);
            dim.scale_max = d.value("scale_max", 5);
            r.dimensions.push_back(std::move(dim));
        }
        for (const auto& e : j.value("exemplars", nlohmann::json::array())) {
            r.exemplars.push_back({e.at("transcript_excerpt").get<std::string>(), e.at("verdict_block").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid_rubric", std::string("malformed rubric: ") + e.what());
    }
    r.validate();
    return r;
}

Rubric Rubric::from_file(const std::filesystem::path& path) {
    try {
        return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("invalid_rubric", path.string() + ": " + e.what());
    }
}

nlohmann::json Rubric::to_json() const {
    nlohmann::json dims = nlohmann::json::array();
    for (const auto& d : dimensions) {
        dims.push_back({{"id", d.id},
                        {"name", d.name},
                        {"description", d.description},
                        {"scale_min", d.scale_min},
                        {"scale_max", d.scale_max}});
    }
    nlohmann::json ex = nlohmann::json::array();
    for (const auto& e : exemplars) {
        ex.push_back({{"transcript_excerpt", e.transcript_excerpt}, {"verdict_block", e.verdict_block}});
    }
    return {{"id", id}, {"version", version}, {"dimensions", dims}, {"exemplars", ex}};
}

std::vector<std::string> Rubric::dimension_ids() const {
    std::vector<std::string> ids;
    for (const auto& d : dimensions) ids.push_back(d.id);
    return ids;
}

VerdictError::VerdictError(Kind kind, const std::string& detail)
    : Error("verdict_" + std::string(to_string(kind)), std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

std::string_view to_string(VerdictError::Kind kind) {
    switch (kind) {
        case VerdictError::Kind::MissingDimension: return "MissingDimension";
        case VerdictError::Kind::DuplicateDimension: return "DuplicateDimension";
        case VerdictError::Kind::OutOfRange: return "OutOfRange";
        case VerdictError::Kind::NoFeedbackLine: return "NoFeedbackLine";
        case VerdictError::Kind::Unparseable: return "Unparseable";
    }
    return "Unknown";
}

ScoringError::ScoringError(VerdictError last, int attempts)
    : Error("judge_retries_exhausted",
            "no parseable verdict after " + std::to_string(attempts) + " attempt(s); last error " + last.what()),
      last_(std::move(last)),
      attempts_(attempts) {}

std::string serialize_transcript(const std::vector<Turn>& transcript) {
    std::string out;
    for (const auto& t : transcript) {
        std::string role(to_string(t.role));
        std::transform(role.begin(), role.end(), role.begin(),
                       [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
        std::string text = t.text;
        std::replace(text.begin(), text.end(), '\n', ' ');
        std::replace(text.begin(), text.end(), '\r', ' ');
        if (!out.empty()) out.push_back('\n');
        out.append(role).append(": ").append(text);
    }
    return out;
}

ChatRequest build_judge_prompt(const std::vector<Turn>& transcript, const Rubric& rubric,
                               const JudgeOptions& options) {
    if (transcript.empty()) throw Error("empty_transcript", "cannot judge an empty transcript");
    ChatRequest request;
    request.model = options.model;
    request.temperature = 0.0;
    request.max_tokens = options.max_tokens;
    request.messages.push_back({ChatRole::System, system_instructions(rubric)});
    for (const auto& ex : rubric.exemplars) {
        request.messages.push_back({ChatRole::User, ex.transcript_excerpt});
        request.messages.push_back({ChatRole::Assistant, ex.verdict_block});
    }
    request.messages.push_back({ChatRole::User, serialize_transcript(transcript)});
    return request;
}

JudgeVerdict parse_verdict(std::string_view raw, const Rubric& rubric) {
    using K = VerdictError::Kind;
    const auto lines = split_lines(raw);
    const auto find_dimension = [&](const std::string& key) -> const RubricDimension* {
        for (const auto& d : rubric.dimensions) {
            if (d.id == key) return &d;
        }
        return nullptr;
    };

    std::size_t i = 0;
    for (; i < lines.size(); ++i) {
        const auto kv = split_key_value(lines[i]);
        if (kv && find_dimension(kv->key) != nullptr) break;
    }
    if (i == lines.size()) throw VerdictError(K::Unparseable, "no score line found");

    JudgeVerdict verdict;
    bool saw_feedback = false;
    for (; i < lines.size(); ++i) {
        if (is_blank(lines[i])) continue;
        const auto kv = split_key_value(lines[i]);
        if (!kv) throw VerdictError(K::Unparseable, "expected '<dimension>: <score>', got '" + lines[i] + "'");
        if (kv->key == "feedback") {
            std::string feedback = kv->value;
            for (std::size_t k = i + 1; k < lines.size(); ++k) feedback.append("\n").append(lines[k]);
            verdict.feedback = trim(feedback);
            saw_feedback = true;
            break;
        }
        const RubricDimension* dim = find_dimension(kv->key);
        if (dim == nullptr) throw VerdictError(K::Unparseable, "unknown dimension '" + kv->key + "'");
        const auto score = parse_int(kv->value);
        if (!score) throw VerdictError(K::Unparseable, "score for " + dim->id + " is not an integer: '" + kv->value + "'");
        if (verdict.scores.contains(dim->id)) throw VerdictError(K::DuplicateDimension, dim->id);
        if (*score < dim->scale_min || *score > dim->scale_max) {
            throw VerdictError(K::OutOfRange, dim->id + " = " + std::to_string(*score) + " outside [" +
                                                  std::to_string(dim->scale_min) + ", " +
                                                  std::to_string(dim->scale_max) + "]");
        }
        verdict.scores.emplace(dim->id, *score);
    }
    if (!saw_feedback) throw VerdictError(K::NoFeedbackLine, "verdict has no 'feedback:' line");
    for (const auto& d : rubric.dimensions) {
        if (!verdict.scores.contains(d.id)) throw VerdictError(K::MissingDimension, d.id);
    }
    return verdict;
}

std::string format_verdict(const JudgeVerdict& verdict, const Rubric& rubric) {
    std::string out;
    for (const auto& d : rubric.dimensions) {
        out.append(d.id).append(": ").append(std::to_string(verdict.scores.at(d.id))).append("\n");
    }
    out.append("feedback: ").append(verdict.feedback);
    return out;
}

std::string reask_message(const VerdictError& error) {
    return std::string("Your previous reply could not be parsed (") + error.what() +
           "). Reply again with exactly one `<criterion_id>: <integer>` line per criterion, followed by "
           "one `feedback: <text>` line.";
}

JudgeVerdict score_transcript(const std::vector<Turn>& transcript, const Rubric& rubric, ChatBackend& backend,
                              int retries, const JudgeOptions& options) {
    ChatRequest request = build_judge_prompt(transcript, rubric, options);
    std::optional<VerdictError> last;
    const int attempts = std::max(retries, 0) + 1;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        const ChatResponse response = backend.complete(request);
        try {
            return parse_verdict(response.content, rubric);
        } catch (const VerdictError& e) {
            last = e;
            request.messages.push_back({ChatRole::Assistant, response.content.empty() ? "(empty reply)" : response.content});
            request.messages.push_back({ChatRole::User, reask_message(e)});
        }
    }
    throw ScoringError(*last, attempts);
}

double round_mean_1dp(long long sum, std::size_t n) {
    const auto den = static_cast<long long>(n);
    // floor(10 * sum / n + 1/2) for non-negative sums
    const long long tenths = (20 * sum + den) / (2 * den);
    return static_cast<double>(tenths) / 10.0;
}

Aggregate aggregate(const std::vector<JudgeVerdict>& verdicts, const Rubric& rubric) {
    if (verdicts.empty()) throw Error("empty_verdicts", "cannot aggregate zero verdicts");
    const auto ids = rubric.dimension_ids();
    std::map<std::string, long long> sums;
    for (const auto& v : verdicts) {
        if (v.scores.size() != ids.size()) throw Error("rubric_mismatch", "verdict does not match rubric " + rubric.id);
        for (const auto& id : ids) {
            const auto it = v.scores.find(id);
            if (it == v.scores.end()) throw Error("rubric_mismatch", "verdict lacks dimension " + id);
            if (it->second < 0) throw Error("rubric_mismatch", "negative score for " + id);
            sums[id] += it->second;
        }
    }
    Aggregate out;
    out.count = verdicts.size();
    for (const auto& id : ids) {
        out.means[id] = static_cast<double>(sums[id]) / static_cast<double>(verdicts.size());
        out.rounded[id] = round_mean_1dp(sums[id], verdicts.size());
    }
    return out;
}

nlohmann::json to_json(const RefinementEntry& e) {
    return {{"timestamp", e.timestamp},         {"target", e.target},
            {"old_version", e.old_version},     {"new_version", e.new_version},
            {"judge_feedback", e.judge_feedback}, {"author_note", e.author_note}};
}

RefinementEntry refinement_from_json(const nlohmann::json& j) {
    return RefinementEntry{j.at("timestamp").get<std::string>(),     j.at("target").get<std::string>(),
                           j.at("old_version").get<int>(),           j.at("new_version").get<int>(),
                           j.at("judge_feedback").get<std::string>(), j.at("author_note").get<std::string>()};
}

void log_refinement(const RefinementEntry& entry, const std::filesystem::path& catalog_path,
                    const std::filesystem::path& log_path) {
    if (entry.new_version != entry.old_version + 1) {
        throw Error("version_conflict", "new_version must be old_version + 1");
    }
    nlohmann::json catalog;
    try {
        catalog = nlohmann::json::parse(read_file(catalog_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("invalid_catalog", catalog_path.string() + ": " + e.what());
    }

    nlohmann::json* current = nullptr;
    if (catalog.is_array()) {
        for (auto& t : catalog) {
            if (t.value("id", std::string()) != entry.target) continue;
            if (current == nullptr || (*current).value("version", 1) < t.value("version", 1)) current = &t;
        }
    } else if (catalog.is_object() && catalog.value("id", std::string()) == entry.target) {
        current = &catalog;
    }
    if (current == nullptr) throw Error("unknown_target", "no template or rubric named " + entry.target);

    const int current_version = current->value("version", 1);
    if (entry.old_version != current_version) {
        throw Error("version_conflict", entry.target + " is at version " + std::to_string(current_version) +
                                            ", not " + std::to_string(entry.old_version));
    }
    (*current)["version"] = entry.new_version;

    {
        std::ofstream log(log_path, std::ios::binary | std::ios::app);
        if (!log) throw Error("io_error", "cannot open refinement log " + log_path.string());
        log << to_json(entry).dump() << '\n';
        log.flush();
        if (!log) throw Error("io_error", "write failed for " + log_path.string());
    }
    atomic_write(catalog_path, catalog.dump(2) + "\n");
}

std::vector<RefinementEntry> read_refinement_log(const std::filesystem::path& log_path) {
    std::vector<RefinementEntry> entries;
    std::istringstream in(read_file(log_path));
    for (std::string line; std::getline(in, line);) {
        if (is_blank(line)) continue;
        entries.push_back(refinement_from_json(nlohmann::json::parse(line)));
    }
    return entries;
}

}  // namespace counsel::judge
