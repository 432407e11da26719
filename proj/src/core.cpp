#include "sbench/core.hpp"

#include <cstdio>

namespace sbench {

int parse_iso_date(const std::string& s) {
  int y = 0, m = 0, d = 0;
  char dash1 = 0, dash2 = 0;
  if (std::sscanf(s.c_str(), "%d%c%d%c%d", &y, &dash1, &m, &dash2, &d) != 5 ||
      dash1 != '-' || dash2 != '-' || m < 1 || m > 12 || d < 1 || d > 31) {
    throw ParseError("invalid ISO date: '" + s + "'");
  }
  return days_from_civil(y, m, d);
}

std::string format_iso_date(int serial) {
  const Date c = civil_from_days(serial);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", c.year, c.month, c.day);
  return std::string(buf);
}

}  // namespace sbench
