#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace sentdecomp {

// Raw little-endian float32 blobs, row-major, no header.
void write_f32_blob(const std::filesystem::path& path, std::span<const float> values,
                    const std::string& module);

// Reads exactly `expected_count` floats. Throws kMissingFile if absent and
// kDimensionMismatch if the byte size is not 4 * expected_count.
std::vector<float> read_f32_blob(const std::filesystem::path& path, std::size_t expected_count,
                                 const std::string& module);

std::string read_text_file(const std::filesystem::path& path, const std::string& module);
void write_text_file(const std::filesystem::path& path, const std::string& text,
                     const std::string& module);

}  // namespace sentdecomp
