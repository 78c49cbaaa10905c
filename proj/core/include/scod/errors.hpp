#pragma once

#include <stdexcept>
#include <string>

namespace scod {

/// Raised when an input violates a documented contract: bad labels, missing
/// files, mismatched shapes or ids. The CLI maps it to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace scod
