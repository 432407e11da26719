#pragma once

// Shared conventions: panels are Eigen matrices indexed [date, ticker],
// missing cells are NaN, dates are serial day counts (days since 1970-01-01).

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace sbench {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kTradingDaysPerYear = 252.0;

inline bool present(double x) { return std::isfinite(x); }
inline bool missing(double x) { return !std::isfinite(x); }

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- calendar -------------------------------------------------------------
// Serial day <-> civil date (proleptic Gregorian), Howard Hinnant's algorithms.

struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;
};

constexpr int days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<int>(doe) - 719468;
}

constexpr Date civil_from_days(int z) {
  z += 719468;
  const int era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const int y = static_cast<int>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp + (mp < 10 ? 3 : -9);
  return Date{y + (m <= 2), static_cast<int>(m), static_cast<int>(d)};
}

// 0 = Monday ... 6 = Sunday; serial 0 (1970-01-01) was a Thursday.
constexpr int weekday(int serial) { return ((serial % 7) + 7 + 3) % 7; }

inline int year_of(int serial) { return civil_from_days(serial).year; }

int parse_iso_date(const std::string& s);  // "YYYY-MM-DD" -> serial, throws ParseError
std::string format_iso_date(int serial);

// next weekday strictly after `serial`
inline int next_weekday(int serial) {
  int d = serial + 1;
  while (weekday(d) >= 5) ++d;
  return d;
}

// --- small helpers ---------------------------------------------------------

inline MatrixXd make_missing(Eigen::Index rows, Eigen::Index cols) {
  return MatrixXd::Constant(rows, cols, kMissing);
}

// FNV-1a, used for checkpoint fingerprints
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace sbench
