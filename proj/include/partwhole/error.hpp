#pragma once

#include <stdexcept>
#include <string>

namespace partwhole {

/// Raised when an argument or configuration value violates an operation's
/// precondition. The message names the offending field.
class PreconditionError : public std::invalid_argument {
 public:
  PreconditionError(const std::string& field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(field) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Raised when training produces a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw PreconditionError(field, what);
}

}  // namespace partwhole
