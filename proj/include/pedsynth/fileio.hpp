#pragma once

#include <filesystem>
#include <string>

namespace pedsynth {

std::string read_file(const std::filesystem::path &path);
/// Creates parent directories as needed.
void write_file(const std::filesystem::path &path, const std::string &content);

} // namespace pedsynth
