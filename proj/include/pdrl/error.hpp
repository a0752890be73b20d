#pragma once

#include <stdexcept>
#include <string>

namespace pdrl {

/// Input violated a documented contract (bad file contents, bad arguments, shape mismatch).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failure: missing file, unwritable output.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pdrl
