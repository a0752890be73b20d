#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pdrl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

/// Runs one pipeline stage. `args` excludes the program name.
/// Returns 0 on success, 1 on usage or validation errors, 2 on I/O errors.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pdrl::cli
