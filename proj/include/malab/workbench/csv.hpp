#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace malab::workbench {

inline constexpr int kCsvVersion = 1;

// One field; numbers are written with 9 significant digits.
class CsvCell {
 public:
  CsvCell(const char* text) : text_(text) {}
  CsvCell(std::string text) : text_(std::move(text)) {}
  CsvCell(double value);
  CsvCell(int value) : text_(std::to_string(value)) {}
  CsvCell(long value) : text_(std::to_string(value)) {}
  CsvCell(long long value) : text_(std::to_string(value)) {}
  CsvCell(unsigned value) : text_(std::to_string(value)) {}
  CsvCell(unsigned long value) : text_(std::to_string(value)) {}
  CsvCell(unsigned long long value) : text_(std::to_string(value)) {}

  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

// "%.9g".
std::string format_number(double value);

struct CsvTable {
  std::string schema;  // e.g. "layer_profile"
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  // Throws std::invalid_argument when the row width differs from the header.
  void add(const std::vector<CsvCell>& row);
  std::size_t column(const std::string& name) const;
  double number(std::size_t row, const std::string& name) const;
};

// "# malab-csv schema=<schema> version=1", the header, then one line per
// row. Fields may not contain commas, quotes or line breaks.
std::string encode_csv(const CsvTable& table);
CsvTable decode_csv(const std::string& text);

void write_csv(const CsvTable& table, const std::string& path);
// Throws VersionError for an unknown schema version, IoError otherwise.
CsvTable read_csv(const std::string& path);

}  // namespace malab::workbench
