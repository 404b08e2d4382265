#pragma once

#include <ostream>
#include <span>
#include <string>

namespace observatory {

// Entry point for the `observatory` tool. Exit codes: 0 success,
// 1 operational error, 2 usage error.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace observatory
