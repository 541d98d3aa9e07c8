#include "malab/workbench/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "malab/errors.hpp"

namespace malab::workbench {

namespace {

constexpr const char* kMagic = "# malab-csv ";

void check_field(const std::string& field) {
  if (field.find_first_of(",\"\r\n") != std::string::npos) {
    throw std::invalid_argument("csv field '" + field + "' contains a reserved character");
  }
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::string format_number(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return buf;
}

CsvCell::CsvCell(double value) : text_(format_number(value)) {}

void CsvTable::add(const std::vector<CsvCell>& row) {
  if (row.size() != columns.size()) {
    throw std::invalid_argument("csv row of width " + std::to_string(row.size()) + " for " +
                                std::to_string(columns.size()) + " columns");
  }
  std::vector<std::string> fields;
  fields.reserve(row.size());
  for (const auto& cell : row) {
    check_field(cell.text());
    fields.push_back(cell.text());
  }
  rows.push_back(std::move(fields));
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  throw std::out_of_range("no csv column '" + name + "'");
}

double CsvTable::number(std::size_t row, const std::string& name) const {
  const std::string& text = rows.at(row).at(column(name));
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw std::invalid_argument("csv field '" + text + "' is not a number");
  }
  return value;
}

std::string encode_csv(const CsvTable& table) {
  check_field(table.schema);
  if (table.schema.empty() || table.schema.find_first_of(" =") != std::string::npos) {
    throw std::invalid_argument("csv schema name '" + table.schema + "' is not a single word");
  }
  std::string out = kMagic;
  out += "schema=" + table.schema + " version=" + std::to_string(kCsvVersion) + "\n";
  auto line = [&out](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      check_field(fields[i]);
      if (i) out += ',';
      out += fields[i];
    }
    out += '\n';
  };
  line(table.columns);
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size()) throw std::invalid_argument("csv table is not rectangular");
    line(row);
  }
  return out;
}

CsvTable decode_csv(const std::string& text) {
  std::istringstream in(text);
  std::string first;
  if (!std::getline(in, first) || first.rfind(kMagic, 0) != 0) {
    throw IoError("csv lacks the '# malab-csv' schema line");
  }
  CsvTable table;
  std::istringstream meta(first.substr(std::string(kMagic).size()));
  std::string token;
  std::string version;
  while (meta >> token) {
    if (token.rfind("schema=", 0) == 0) table.schema = token.substr(7);
    if (token.rfind("version=", 0) == 0) version = token.substr(8);
  }
  if (table.schema.empty() || version.empty()) throw IoError("malformed csv schema line '" + first + "'");
  if (version != std::to_string(kCsvVersion)) {
    throw VersionError("csv schema version " + version + " unsupported (expected " + std::to_string(kCsvVersion) + ")");
  }
  std::string line;
  if (!std::getline(in, line)) throw IoError("csv lacks a header row");
  table.columns = split(line);
  while (std::getline(in, line)) {
    auto fields = split(line);
    if (fields.size() != table.columns.size()) throw IoError("csv row of width " + std::to_string(fields.size()) +
                                                             " for " + std::to_string(table.columns.size()) + " columns");
    table.rows.push_back(std::move(fields));
  }
  return table;
}

void write_csv(const CsvTable& table, const std::string& path) {
  const std::string text = encode_csv(table);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return decode_csv(buffer.str());
}

}  // namespace malab::workbench
