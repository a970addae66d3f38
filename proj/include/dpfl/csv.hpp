#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace dpfl {

/// Shortest round-trip decimal form; identical values always print identically.
inline std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\n") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Streams rows to a CSV file with a fixed header.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
      : out_(path), columns_(header.size()) {
    if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << csv_field(header[i]);
    out_ << '\n';
  }

  template <typename... Fields>
  void row(const Fields&... fields) {
    if (sizeof...(fields) != columns_) throw std::logic_error("CSV row width mismatch");
    bool first = true;
    ((out_ << (first ? "" : ",") << render(fields), first = false), ...);
    out_ << '\n';
    if (!out_) throw std::runtime_error("CSV write failed");
  }

 private:
  template <typename T>
  static std::string render(const T& v) {
    if constexpr (std::is_floating_point_v<T>) {
      return format_number(static_cast<double>(v));
    } else if constexpr (std::is_integral_v<T>) {
      return std::to_string(v);
    } else {
      return csv_field(std::string_view(v));
    }
  }

  std::ofstream out_;
  std::size_t columns_;
};

/// Parsed CSV table (header plus string cells).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  }
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace dpfl
