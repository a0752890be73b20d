#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace pdrl::io {

std::string read_text(const std::filesystem::path& path);

/// Writes via a sibling temp file and rename, so readers never observe a partial file.
void write_text_atomic(const std::filesystem::path& path, std::string_view contents);

/// Shortest decimal string that parses back to the same double.
std::string format_double(double value);

}  // namespace pdrl::io
