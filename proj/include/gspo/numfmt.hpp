#pragma once

#include <string>
#include <string_view>

namespace gspo {

/// Shortest decimal string that parses back to exactly the same double.
std::string format_double(double v);

/// Inverse of format_double; accepts "inf", "-inf" and "nan". Throws std::invalid_argument.
double parse_double(std::string_view text);

}  // namespace gspo
