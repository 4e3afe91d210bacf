#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace ctxrisk::csv {

/// Splits one CSV line (RFC 4180 quoting, no embedded newlines).
std::vector<std::string> split(std::string_view line);

/// Quotes a field only when it contains a separator, quote, or newline.
std::string escape(std::string_view field);

std::string join(const std::vector<std::string>& fields);

/// Shortest representation that round-trips through strtod.
std::string format_double(double value);

/// Fixed-point rendering with the given number of decimals.
std::string format_fixed(double value, int decimals);

double parse_double(std::string_view text);

/// Reads all non-empty lines of a CSV file (header included).
std::vector<std::vector<std::string>> read_rows(std::istream& in);

}  // namespace ctxrisk::csv
