#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kdadapt {

// Coarse failure classes. The CLI prints the category name as the first
// field of its single-line error report.
enum class ErrorCategory {
    validation,
    alignment,
    protocol,
    io,
    numeric,
    usage,
};

std::string_view category_name(ErrorCategory category);

class Error : public std::runtime_error {
  public:
    Error(ErrorCategory category, const std::string &message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const { return category_; }

  private:
    ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory category, const std::string &message) {
    throw Error(category, message);
}

} // namespace kdadapt
