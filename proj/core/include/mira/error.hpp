#pragma once

#include <stdexcept>
#include <string>

namespace mira {

// Data-level failure with a stable machine-readable code, e.g.
// "malformed-line(3)" or "duplicate-doc(d17)". The CLI maps these to
// exit code 2 and prints what() on stderr.
class Error : public std::runtime_error {
 public:
  explicit Error(std::string code)
      : std::runtime_error(code), code_(std::move(code)) {}
  Error(std::string code, const std::string& detail)
      : std::runtime_error(code + ": " + detail), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

}  // namespace mira
