#pragma once

#include <string>
#include <string_view>

namespace tppkit {

// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double value);

// Fixed-point text with `digits` decimals, e.g. format_fixed(0.5, 4) == "0.5000".
std::string format_fixed(double value, int digits);

// Strict decimal parse of the whole string; throws DataError on junk.
double parse_double(std::string_view text);
long long parse_integer(std::string_view text);

}  // namespace tppkit
