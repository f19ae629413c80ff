#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace voxnas::io {

// Shortest round-trip decimal form.
std::string format_double(double v);

std::vector<std::string> split_csv_line(std::string_view line);
std::string trim(std::string_view s);

// Strict full-string parse; `ok` is false unless every character is consumed.
double parse_double(std::string_view s, bool& ok);

std::string read_text(const std::string& path);
// Writes to a sibling temporary and renames over the target.
void write_text_atomic(const std::string& path, const std::string& contents);

}  // namespace voxnas::io
