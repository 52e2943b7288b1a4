#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace kclab {

std::string read_text_file(const std::filesystem::path& path);

/// Writes via a uniquely named temporary in the same directory followed by
/// rename(2). Readers never observe a partial file. Skips the write when the
/// file already holds exactly `content`. Returns true if the file changed.
bool write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace kclab
