#pragma once

#include <stdexcept>
#include <string>

namespace headgame {

// Precondition violated by the caller: bad shape, out-of-range argument,
// malformed config.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced a non-finite value or failed to converge.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace headgame
