#pragma once

#include <charconv>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgdlab {

// Shortest round-trip decimal representation, '.' decimal point, no locale
// dependence.  Keeps repeated runs byte-identical.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + path);
  }

  void header(const std::vector<std::string>& names) { line(names); }

  void cell(double x) { push(format_double(x)); }
  void cell(long x) { push(std::to_string(x)); }
  void cell(int x) { push(std::to_string(x)); }
  void cell(const std::string& s) { push(s); }

  void end_row() {
    out_ << row_ << '\n';
    row_.clear();
    first_ = true;
  }

 private:
  void push(const std::string& s) {
    if (!first_) row_ += ',';
    row_ += s;
    first_ = false;
  }
  void line(const std::vector<std::string>& cells) {
    for (const auto& c : cells) push(c);
    end_row();
  }

  std::ofstream out_;
  std::string row_;
  bool first_ = true;
};

}  // namespace sgdlab
