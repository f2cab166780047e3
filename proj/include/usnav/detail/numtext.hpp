#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace usnav::detail {

// Shortest decimal text that parses back to the identical double.
std::string format_double(double v);
std::optional<double> parse_double(std::string_view s);
std::optional<std::uint64_t> parse_u64(std::string_view s);

// Splits on a single-character delimiter; empty fields are kept.
std::vector<std::string_view> split(std::string_view s, char delim);

}  // namespace usnav::detail
