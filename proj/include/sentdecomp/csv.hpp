#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace sentdecomp {

// Shortest round-trip decimal form; "nan"/"inf"/"-inf" for non-finite values.
std::string format_number(double value);

// Quotes a field when it contains a comma, quote or newline.
std::string csv_field(std::string_view text);

std::string csv_row(const std::vector<std::string>& fields);

// Minimal reader for the files this project writes: first row is the header.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column; throws kInvalidFormat if absent.
  std::size_t column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text);

}  // namespace sentdecomp
