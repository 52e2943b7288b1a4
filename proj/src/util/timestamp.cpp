#include "kclab/util/timestamp.hpp"

#include <cstdio>

#include "kclab/error.hpp"

namespace kclab {

namespace {

int digits(std::string_view s, std::size_t pos, std::size_t count, std::string_view whole) {
  if (pos + count > s.size()) throw ParseError("invalid RFC 3339 timestamp '" + std::string(whole) + "'");
  int v = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const char ch = s[pos + i];
    if (ch < '0' || ch > '9') throw ParseError("invalid RFC 3339 timestamp '" + std::string(whole) + "'");
    v = v * 10 + (ch - '0');
  }
  return v;
}

void expect(std::string_view s, std::size_t pos, std::string_view allowed, std::string_view whole) {
  if (pos >= s.size() || allowed.find(s[pos]) == std::string_view::npos) {
    throw ParseError("invalid RFC 3339 timestamp '" + std::string(whole) + "'");
  }
}

}  // namespace

Timestamp parse_rfc3339(std::string_view text) {
  using namespace std::chrono;
  const std::string_view s = text;
  const int y = digits(s, 0, 4, text);
  expect(s, 4, "-", text);
  const int mo = digits(s, 5, 2, text);
  expect(s, 7, "-", text);
  const int d = digits(s, 8, 2, text);
  expect(s, 10, "Tt ", text);
  const int hh = digits(s, 11, 2, text);
  expect(s, 13, ":", text);
  const int mi = digits(s, 14, 2, text);
  expect(s, 16, ":", text);
  const int ss = digits(s, 17, 2, text);
  std::size_t pos = 19;
  int millis = 0;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    int scale = 100;
    const std::size_t frac_start = pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      millis += (s[pos] - '0') * scale;
      scale /= 10;
      ++pos;
    }
    if (pos == frac_start) throw ParseError("invalid RFC 3339 timestamp '" + std::string(text) + "'");
  }
  minutes offset{0};
  if (pos < s.size() && (s[pos] == 'Z' || s[pos] == 'z')) {
    ++pos;
  } else {
    expect(s, pos, "+-", text);
    const int sign = s[pos] == '-' ? -1 : 1;
    const int oh = digits(s, pos + 1, 2, text);
    expect(s, pos + 3, ":", text);
    const int om = digits(s, pos + 4, 2, text);
    offset = minutes(sign * (oh * 60 + om));
    pos += 6;
  }
  if (pos != s.size()) throw ParseError("invalid RFC 3339 timestamp '" + std::string(text) + "'");

  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || hh > 23 || mi > 59 || ss > 60) {
    throw ParseError("invalid RFC 3339 timestamp '" + std::string(text) + "'");
  }
  const auto local = sys_days{ymd} + hours{hh} + minutes{mi} + seconds{ss} + milliseconds{millis};
  return time_point_cast<milliseconds>(local - offset);
}

std::string format_rfc3339(Timestamp ts) {
  using namespace std::chrono;
  const auto day_point = floor<days>(ts);
  const year_month_day ymd{day_point};
  auto rest = ts - day_point;
  const auto h = duration_cast<hours>(rest);
  rest -= h;
  const auto m = duration_cast<minutes>(rest);
  rest -= m;
  const auto s = duration_cast<seconds>(rest);
  rest -= s;
  const auto ms = rest.count();
  char buf[40];
  if (ms != 0) {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(h.count()), static_cast<int>(m.count()),
                  static_cast<int>(s.count()), static_cast<int>(ms));
  } else {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(h.count()), static_cast<int>(m.count()),
                  static_cast<int>(s.count()));
  }
  return buf;
}

}  // namespace kclab
