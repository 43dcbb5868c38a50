#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "../errors.hpp"

namespace gmix {

// Shortest round-trip decimal representation; non-finite values become
// "nan", "inf" or "-inf".
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline std::string format_int(long long x) { return std::to_string(x); }

inline double parse_double(std::string_view s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double x = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), x);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw schema_error("not a number: '" + std::string(s) + "'");
  return x;
}

// In-memory CSV table with string cells. Lines starting with '#' are
// comments (the version header) and are skipped when reading.
class CsvTable {
public:
  CsvTable() = default;
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }

  void add_row(std::vector<std::string> row) {
    if (row.size() != header_.size())
      throw schema_error("CSV row has " + std::to_string(row.size()) + " cells, header has " +
                         std::to_string(header_.size()));
    rows_.push_back(std::move(row));
  }

  bool has_column(std::string_view name) const {
    for (const auto& h : header_)
      if (h == name) return true;
    return false;
  }

  std::size_t index(std::string_view name) const {
    for (std::size_t i = 0; i < header_.size(); ++i)
      if (header_[i] == name) return i;
    throw schema_error("missing CSV column '" + std::string(name) + "'");
  }

  std::vector<double> numbers(std::string_view name) const {
    std::size_t c = index(name);
    std::vector<double> out;
    out.reserve(rows_.size());
    for (const auto& r : rows_) out.push_back(r[c].empty() ? std::nan("") : parse_double(r[c]));
    return out;
  }

  std::vector<std::string> strings(std::string_view name) const {
    std::size_t c = index(name);
    std::vector<std::string> out;
    out.reserve(rows_.size());
    for (const auto& r : rows_) out.push_back(r[c]);
    return out;
  }

  void write(std::ostream& os, const std::string& comment = {}) const {
    if (!comment.empty()) os << "# " << comment << '\n';
    write_line(os, header_);
    for (const auto& r : rows_) write_line(os, r);
  }

  std::string to_string(const std::string& comment = {}) const {
    std::ostringstream os;
    write(os, comment);
    return os.str();
  }

  void save(const std::string& path, const std::string& comment = {}) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw error("cannot write " + path);
    write(f, comment);
  }

  static CsvTable parse(std::istream& is) {
    CsvTable t;
    std::string line;
    bool have_header = false;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      auto cells = split(line);
      if (!have_header) {
        t.header_ = std::move(cells);
        have_header = true;
      } else {
        t.add_row(std::move(cells));
      }
    }
    if (!have_header) throw schema_error("CSV has no header line");
    return t;
  }

  static CsvTable load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw error("cannot read " + path);
    return parse(f);
  }

private:
  // Cells never contain commas or quotes (numbers and identifiers only).
  static void write_line(std::ostream& os, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << ',';
      os << cells[i];
    }
    os << '\n';
  }

  static std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
      std::size_t p = line.find(',', start);
      out.push_back(line.substr(start, p == std::string::npos ? std::string::npos : p - start));
      if (p == std::string::npos) break;
      start = p + 1;
    }
    return out;
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace gmix
