#pragma once

#include <string>
#include <vector>

namespace jointhaz {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Comma-separated, UTF-8, header required. Double-quoted fields with ""
// escapes are accepted; empty cell means missing.
CsvTable read_csv_file(const std::string& path);

void write_csv_file(const std::string& path, const CsvTable& table);

// %.17g (round-trip exact for doubles)
std::string format_double(double v);

// human-readable tables use 6 significant digits
std::string format_double6(double v);

}  // namespace jointhaz
