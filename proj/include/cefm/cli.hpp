#pragma once

#include <string>
#include <vector>

namespace cefm::cli {

inline constexpr const char* kVersion = "0.1.0";

// Runs one CLI invocation. Exit codes: 0 success, 1 internal error,
// 2 usage or data error.
int run(const std::vector<std::string>& args);

}  // namespace cefm::cli
