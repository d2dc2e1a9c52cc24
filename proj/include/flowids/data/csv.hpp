#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace flowids::data {

// Header row plus string cells. Quoting follows RFC 4180: fields may be
// double-quoted, embedded quotes double up, quoted fields may span lines.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(const std::string& text, const std::string& origin);

std::string csv_quote(const std::string& field);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

}  // namespace flowids::data
