#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace counsel {

/// Base for every error raised by the library. `code()` is a stable,
/// machine-readable string; `what()` is the human message.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

/// Returns an ISO-8601 UTC timestamp. Injected wherever timestamps are
/// recorded so runs can be pinned for byte-reproducible output.
using Clock = std::function<std::string()>;

std::string utc_now_iso8601();
Clock system_clock();
Clock frozen_clock(std::string timestamp);

std::string trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
bool is_blank(std::string_view s);

/// Number of UTF-8 code points; invalid sequences count one per byte.
std::size_t utf8_length(std::string_view s);
bool is_valid_utf8(std::string_view s);

/// Lowercase hex SHA-256 of the input bytes.
std::string sha256_hex(std::string_view data);

/// Case-insensitive phrase match anchored on word boundaries at both ends.
/// Typographic apostrophes in `text` are treated as ASCII apostrophes.
bool contains_phrase(std::string_view text, std::string_view phrase);

/// Reads a line-oriented data file: one entry per line, `#` starts a comment,
/// blank lines ignored, entries trimmed.
std::vector<std::string> read_entry_lines(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

struct CsvRow {
    std::size_t line = 0;  // 1-based line where the row starts
    std::vector<std::string> fields;
    bool unterminated = false;
};

/// RFC 4180 reader: quoted fields may hold commas, doubled quotes and
/// newlines. Blank lines are skipped.
std::vector<CsvRow> read_csv(std::string_view text);
std::string csv_escape(std::string_view field);

/// Directory holding the shipped lexicons, catalogs, rubrics and fixtures.
std::filesystem::path default_data_dir();

}  // namespace counsel
