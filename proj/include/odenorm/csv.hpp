#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace odenorm {

// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);
// Strict: the whole field must be consumed. Throws std::invalid_argument.
double parse_double(std::string_view text);
int parse_int(std::string_view text);

std::vector<std::string> split(std::string_view line, char sep);
std::string_view trim(std::string_view text);

}  // namespace odenorm
