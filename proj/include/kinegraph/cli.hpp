#pragma once

#include <ostream>
#include <string>
#include <string_view>

namespace kinegraph::cli {

inline constexpr std::string_view kVersion = "0.1.0";

// Runs one `kinegraph` invocation. Exit codes: 0 success, 2 input or
// validation error, 3 numerical failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

std::string sha256_hex(std::string_view bytes);

}  // namespace kinegraph::cli
