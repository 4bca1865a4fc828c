#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace flowrisk {

// All library failures are thrown as Error. The class string is a stable,
// machine-parseable tag (e.g. "input-missing", "non-convergence") that the
// CLI prints verbatim; the message is free-form human detail.
class Error : public std::runtime_error {
 public:
  Error(std::string error_class, const std::string& message)
      : std::runtime_error(message), class_(std::move(error_class)) {}

  const std::string& error_class() const noexcept { return class_; }

 private:
  std::string class_;
};

[[noreturn]] inline void fail(const std::string& error_class, const std::string& message) {
  throw Error(error_class, message);
}

}  // namespace flowrisk
