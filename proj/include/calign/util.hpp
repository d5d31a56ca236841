#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace calign {

/// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view data);

/// Shortest round-trip decimal form of a double, identical on every
/// IEEE-754 platform.
std::string canonical_double(double value);

/// Percent string with two decimals, rounding half away from zero.
/// `fraction` 0.8 renders as "80.00".
std::string format_pct(double fraction);

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames over the target, so readers only
// ever observe complete files.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

/// Replaces characters outside [A-Za-z0-9_-] with '-' for use in file names.
std::string slugify(std::string_view text);

}  // namespace calign
