#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace adabn {

// 12 significant digits so oracle gaps at the 1e-12 scale survive the trip
// through the artifact files.
inline std::string csv_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline std::string csv_num(long v) { return std::to_string(v); }
inline std::string csv_num(int v) { return std::to_string(v); }

// Comma-separated sink with a fixed header, constant column count and LF
// line endings.
class CsvSink {
 public:
  CsvSink(const std::string& path, std::vector<std::string> header)
      : columns_(header.size()), out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("CsvSink: cannot open " + path);
    write_cells(header);
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_)
      throw std::logic_error("CsvSink: column count changed mid-file");
    write_cells(cells);
  }

  std::size_t rows_written() const { return rows_; }

 private:
  void write_cells(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
    ++rows_;
  }

  std::size_t columns_;
  std::size_t rows_ = 0;
  std::ofstream out_;
};

}  // namespace adabn
