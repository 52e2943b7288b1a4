#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

/// Minimal RFC 4180 reader/writer. Lines starting with '#' before the header
/// are treated as metadata comments and kept aside.
namespace kclab::csv {

struct Table {
  std::string source;
  std::vector<std::string> comments;  // without the leading '#'
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based physical line where each row starts

  /// Index of `name` in the header; throws ParseError if absent.
  std::size_t column(std::string_view name) const;
  std::ptrdiff_t find_column(std::string_view name) const;
};

Table parse(std::string_view text, std::string_view source_name = "<memory>");
Table read_file(const std::filesystem::path& path);

std::string escape(std::string_view field);
std::string format_row(const std::vector<std::string>& fields);

/// Accumulates rows and renders the whole file (CRLF-free, '\n' line endings).
class Writer {
public:
  explicit Writer(std::vector<std::string> header);

  void comment(std::string_view text);
  void row(const std::vector<std::string>& fields);
  std::string str() const;

private:
  std::size_t width_;
  std::string comments_;
  std::string body_;
};

}  // namespace kclab::csv
