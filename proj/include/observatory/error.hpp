#pragma once

#include <stdexcept>
#include <string>

namespace observatory {

// Operation failure with a stable machine-readable code ("EmptyWindow",
// "DuplicateRuleId", ...) and a human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(std::string code, std::string detail)
      : std::runtime_error(code + ": " + detail), code_(std::move(code)), detail_(std::move(detail)) {}

  const std::string& code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string code_;
  std::string detail_;
};

}  // namespace observatory
