#pragma once

#include <filesystem>
#include <string>

namespace partwhole {

/// Writes to `path.tmp` then renames over `path`.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace partwhole
