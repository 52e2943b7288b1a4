#include "kclab/util/csv.hpp"

#include "kclab/error.hpp"
#include "kclab/util/files.hpp"

namespace kclab::csv {

std::ptrdiff_t Table::find_column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<std::ptrdiff_t>(i);
  }
  return -1;
}

std::size_t Table::column(std::string_view name) const {
  const auto idx = find_column(name);
  if (idx < 0) {
    throw ParseError(source + ": missing required column '" + std::string(name) + "'");
  }
  return static_cast<std::size_t>(idx);
}

namespace {

struct Cursor {
  std::string_view text;
  std::size_t pos = 0;
  std::size_t line = 1;

  bool done() const { return pos >= text.size(); }
};

// Reads one record. Returns false at end of input.
bool read_record(Cursor& c, std::vector<std::string>& out, std::string_view source) {
  out.clear();
  if (c.done()) return false;
  const std::size_t start_line = c.line;
  std::string field;
  bool quoted = false;
  bool field_started_quoted = false;
  while (true) {
    if (c.done()) {
      if (quoted) {
        throw ParseError(std::string(source) + ":" + std::to_string(start_line) +
                         ": unterminated quoted field");
      }
      out.push_back(std::move(field));
      return true;
    }
    const char ch = c.text[c.pos];
    if (quoted) {
      if (ch == '"') {
        if (c.pos + 1 < c.text.size() && c.text[c.pos + 1] == '"') {
          field.push_back('"');
          c.pos += 2;
        } else {
          quoted = false;
          ++c.pos;
        }
      } else {
        if (ch == '\n') ++c.line;
        field.push_back(ch);
        ++c.pos;
      }
      continue;
    }
    if (ch == '"') {
      if (!field.empty() || field_started_quoted) {
        throw ParseError(std::string(source) + ":" + std::to_string(c.line) +
                         ": stray quote inside unquoted field");
      }
      quoted = true;
      field_started_quoted = true;
      ++c.pos;
    } else if (ch == ',') {
      out.push_back(std::move(field));
      field.clear();
      field_started_quoted = false;
      ++c.pos;
    } else if (ch == '\r' && c.pos + 1 < c.text.size() && c.text[c.pos + 1] == '\n') {
      c.pos += 2;
      ++c.line;
      out.push_back(std::move(field));
      return true;
    } else if (ch == '\n') {
      ++c.pos;
      ++c.line;
      out.push_back(std::move(field));
      return true;
    } else {
      if (field_started_quoted) {
        throw ParseError(std::string(source) + ":" + std::to_string(c.line) +
                         ": characters after closing quote");
      }
      field.push_back(ch);
      ++c.pos;
    }
  }
}

}  // namespace

Table parse(std::string_view text, std::string_view source_name) {
  Table t;
  t.source = std::string(source_name);
  Cursor c{text};
  // metadata comments
  while (!c.done() && c.text[c.pos] == '#') {
    const auto eol = c.text.find('\n', c.pos);
    const auto end = eol == std::string_view::npos ? c.text.size() : eol;
    std::string_view line = c.text.substr(c.pos + 1, end - c.pos - 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    t.comments.emplace_back(line);
    c.pos = eol == std::string_view::npos ? c.text.size() : eol + 1;
    ++c.line;
  }
  if (!read_record(c, t.header, t.source)) {
    throw ParseError(t.source + ": empty file, expected a header row");
  }
  if (!t.header.empty() && t.header[0].starts_with("\xEF\xBB\xBF")) t.header[0].erase(0, 3);
  std::vector<std::string> record;
  while (true) {
    const std::size_t line = c.line;
    if (!read_record(c, record, t.source)) break;
    if (record.size() == 1 && record[0].empty()) continue;  // blank line
    if (record.size() != t.header.size()) {
      throw ParseError(t.source + ":" + std::to_string(line) + ": expected " +
                       std::to_string(t.header.size()) + " fields, found " +
                       std::to_string(record.size()));
    }
    t.rows.push_back(record);
    t.line_numbers.push_back(line);
  }
  return t;
}

Table read_file(const std::filesystem::path& path) {
  return parse(read_text_file(path), path.string());
}

std::string escape(std::string_view field) {
  const bool needs_quotes = field.find_first_of(",\"\r\n") != std::string_view::npos ||
                            (!field.empty() && (field.front() == ' ' || field.back() == ' ' ||
                                                field.front() == '#'));
  if (!needs_quotes) return std::string(field);
  std::string out;
  out.reserve(field.size() + 2);
  out.push_back('"');
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

std::string format_row(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line.push_back(',');
    line += escape(fields[i]);
  }
  line.push_back('\n');
  return line;
}

Writer::Writer(std::vector<std::string> header) : width_(header.size()) {
  body_ = format_row(header);
}

void Writer::comment(std::string_view text) {
  comments_.push_back('#');
  comments_.append(text);
  comments_.push_back('\n');
}

void Writer::row(const std::vector<std::string>& fields) {
  if (fields.size() != width_) {
    throw PreconditionError("csv::Writer: row has " + std::to_string(fields.size()) +
                            " fields, header has " + std::to_string(width_));
  }
  body_ += format_row(fields);
}

std::string Writer::str() const { return comments_ + body_; }

}  // namespace kclab::csv
