#pragma once

// Small text helpers shared by the config, record and CSV code.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace cunsb::text {

/// Shortest representation that parses back to the same double.
/// Infinities print as "inf" / "-inf".
std::string format_double(double v);

// The parse functions throw std::invalid_argument on malformed input,
// with `what` naming the field.
double parse_double(std::string_view s, std::string_view what);
long long parse_int(std::string_view s, std::string_view what);
std::uint64_t parse_u64(std::string_view s, std::string_view what);
bool parse_bool(std::string_view s, std::string_view what);

std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::vector<std::string> split_whitespace(std::string_view s);

/// Parses "key = value" lines. '#' starts a comment, blank lines are
/// skipped. Duplicate keys and lines without '=' throw invalid_argument.
std::map<std::string, std::string> parse_key_values(std::string_view content, std::string_view source);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace cunsb::text
