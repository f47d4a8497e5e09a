#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace xpl {

/// Shortest decimal form that parses back to the identical double.
std::string format_exact(double v);
/// CSV form: six significant digits, '.' decimal, no grouping.
std::string format_csv(double v);
double parse_double(std::string_view s);
long long parse_int(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);

/// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace xpl
