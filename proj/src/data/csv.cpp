#include "flowids/data/csv.hpp"

#include <sstream>

#include "flowids/errors.hpp"
#include "flowids/util.hpp"

namespace flowids::data {

namespace {

// One record starting at *pos. Returns false at end of input.
bool parse_record(const std::string& text, std::size_t& pos, std::size_t& line,
                  std::vector<std::string>& fields, const std::string& origin) {
  fields.clear();
  if (pos >= text.size()) return false;
  std::string field;
  bool in_quotes = false;
  bool any = false;
  while (pos < text.size()) {
    const char c = text[pos];
    if (in_quotes) {
      if (c == '"') {
        if (pos + 1 < text.size() && text[pos + 1] == '"') {
          field.push_back('"');
          pos += 2;
        } else {
          in_quotes = false;
          ++pos;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
        ++pos;
      }
      continue;
    }
    if (c == '"' && field.empty()) {
      in_quotes = true;
      any = true;
      ++pos;
    } else if (c == ',') {
      fields.push_back(field);
      field.clear();
      any = true;
      ++pos;
    } else if (c == '\r') {
      ++pos;  // swallowed; the newline ends the record
    } else if (c == '\n') {
      ++pos;
      ++line;
      fields.push_back(field);
      return true;
    } else {
      field.push_back(c);
      any = true;
      ++pos;
    }
  }
  if (in_quotes) {
    throw CsvError(origin + ": unterminated quoted field at end of file");
  }
  if (!any && fields.empty()) return false;
  fields.push_back(field);
  return true;
}

}  // namespace

CsvTable parse_csv(const std::string& text, const std::string& origin) {
  CsvTable table;
  std::size_t pos = 0;
  std::size_t line = 1;
  std::vector<std::string> fields;
  if (!parse_record(text, pos, line, fields, origin)) {
    throw CsvError(origin + ": empty file, expected a header row");
  }
  table.header = fields;
  const std::size_t width = table.header.size();
  std::size_t row_number = 1;  // 1-based data rows, header excluded
  while (parse_record(text, pos, line, fields, origin)) {
    // A lone trailing newline yields one empty field; skip it.
    if (fields.size() == 1 && fields[0].empty() && pos >= text.size()) break;
    if (fields.size() != width) {
      throw CsvError(origin + ": row " + std::to_string(row_number) + " has " +
                     std::to_string(fields.size()) + " fields, expected " +
                     std::to_string(width));
    }
    table.rows.push_back(fields);
    ++row_number;
  }
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  return parse_csv(util::read_text_file(path), path.string());
}

std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ostringstream ss;
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (j > 0) ss << ',';
    ss << csv_quote(table.header[j]);
  }
  ss << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j > 0) ss << ',';
      ss << csv_quote(row[j]);
    }
    ss << '\n';
  }
  util::write_text_file(path, ss.str());
}

}  // namespace flowids::data
