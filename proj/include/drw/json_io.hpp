#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace drw {

/// Decimal with exactly 17 significant digits, e.g. 5.0000000000000000e-01.
std::string format_real(double value);

/// Writes to a sibling temp file then renames over `path`.
void write_file_atomic(const std::filesystem::path& path,
                       std::string_view contents);

std::string read_file(const std::filesystem::path& path);

}  // namespace drw
