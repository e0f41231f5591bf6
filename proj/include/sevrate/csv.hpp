#ifndef SEVRATE_CSV_HPP
#define SEVRATE_CSV_HPP

// CSV ingestion and emission.  Schemas are deliberately minimal:
//   counts:     date,count
//   rates:      date,rate
//   variants:   date,variant,proportion
//   estimates:  date,method,estimate,clipped_flag
// Dates are ISO-8601; missing numeric values are written as NA; numbers are
// rendered with %.10g so reruns are byte-identical.

#include <cstdio>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sevrate/core.hpp"

namespace sevrate::io {

inline std::string fmt_g(double v) {
  if (std::isnan(v)) return "NA";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

namespace detail_csv {

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::vector<std::vector<std::string>> read_rows(const std::string& path,
                                                       const std::string& header) {
  std::ifstream in(path);
  detail::require<ValidationError>(in.good(), "cannot open " + path);
  std::string line;
  detail::require<ValidationError>(static_cast<bool>(std::getline(in, line)),
                                   path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  detail::require<ValidationError>(line == header, path + ": header is '" + line +
                                                       "', expected '" + header + "'");
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = detail_csv::split(line);
    detail::require<ValidationError>(
        f.size() == detail_csv::split(header).size(),
        path + ":" + std::to_string(lineno) + ": wrong field count");
    rows.push_back(std::move(f));
  }
  return rows;
}

inline std::int64_t parse_int(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const std::int64_t v = std::stoll(s, &pos);
    detail::require<ValidationError>(pos == s.size(), where + ": bad integer '" + s + "'");
    return v;
  } catch (const Error&) {
    throw;
  } catch (...) {
    throw ValidationError(where + ": bad integer '" + s + "'");
  }
}

inline double parse_real(const std::string& s, const std::string& where) {
  if (s == "NA") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    detail::require<ValidationError>(pos == s.size(), where + ": bad number '" + s + "'");
    return v;
  } catch (const Error&) {
    throw;
  } catch (...) {
    throw ValidationError(where + ": bad number '" + s + "'");
  }
}

// rows (date, value) -> gap-free check with the missing dates listed
template <typename T>
void check_daily(const std::vector<std::pair<Date, T>>& rows, const std::string& path) {
  detail::require<ValidationError>(!rows.empty(), path + ": no data rows");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const Date prev = rows[i - 1].first, cur = rows[i].first;
    detail::require<ValidationError>(cur != prev,
                                     path + ": duplicate date " + cur.str());
    detail::require<ValidationError>(cur > prev, path + ": dates out of order at " +
                                                     cur.str());
    if (cur - prev > 1) {
      std::string missing;
      for (Date d = prev + 1; d < cur; d = d + 1) {
        if (!missing.empty()) missing += ", ";
        missing += d.str();
      }
      throw ValidationError(path + ": missing dates: " + missing);
    }
  }
}

}  // namespace detail_csv

inline CountSeries read_count_csv(const std::string& path, bool allow_negative = false) {
  const auto rows = detail_csv::read_rows(path, "date,count");
  std::vector<std::pair<Date, std::int64_t>> parsed;
  parsed.reserve(rows.size());
  for (const auto& r : rows) {
    const Date d = Date::parse(r[0]);
    const std::int64_t v = detail_csv::parse_int(r[1], path + " at " + r[0]);
    detail::require<ValidationError>(allow_negative || v >= 0,
                                     path + ": negative count at " + r[0]);
    parsed.emplace_back(d, v);
  }
  detail_csv::check_daily(parsed, path);
  CountSeries s;
  s.origin = parsed.front().first;
  for (const auto& [d, v] : parsed) s.values.push_back(v);
  return s;
}

inline void write_count_csv(const std::string& path, const CountSeries& s) {
  std::ofstream out(path);
  detail::require<ValidationError>(out.good(), "cannot write " + path);
  out << "date,count\n";
  for (std::int64_t i = 0; i < s.size(); ++i)
    out << (s.origin + i).str() << ',' << s.values[static_cast<std::size_t>(i)] << '\n';
}

inline SeverityCurve read_rate_csv(const std::string& path) {
  const auto rows = detail_csv::read_rows(path, "date,rate");
  std::vector<std::pair<Date, double>> parsed;
  for (const auto& r : rows)
    parsed.emplace_back(Date::parse(r[0]),
                        detail_csv::parse_real(r[1], path + " at " + r[0]));
  detail_csv::check_daily(parsed, path);
  std::vector<double> v;
  v.reserve(parsed.size());
  for (const auto& [d, x] : parsed) v.push_back(x);
  return SeverityCurve::checked(parsed.front().first, std::move(v), /*allow_nan=*/true);
}

inline void write_rate_csv(const std::string& path, const SeverityCurve& p) {
  std::ofstream out(path);
  detail::require<ValidationError>(out.good(), "cannot write " + path);
  out << "date,rate\n";
  for (std::int64_t i = 0; i < p.size(); ++i)
    out << (p.origin + i).str() << ',' << fmt_g(p.p[static_cast<std::size_t>(i)])
        << '\n';
}

// Variant proportions: per-variant daily series; per-date proportions must
// sum to 1 within 1e-6 and each variant's series must be gap-free.
inline std::map<std::string, RealSeries> read_variant_csv(const std::string& path) {
  const auto rows = detail_csv::read_rows(path, "date,variant,proportion");
  std::map<std::string, std::vector<std::pair<Date, double>>> by_variant;
  std::map<Date, double> date_sum;
  for (const auto& r : rows) {
    const Date d = Date::parse(r[0]);
    const double v = detail_csv::parse_real(r[2], path + " at " + r[0]);
    detail::require<ValidationError>(v >= 0 && v <= 1,
                                     path + ": proportion outside [0,1] at " + r[0]);
    by_variant[r[1]].emplace_back(d, v);
    date_sum[d] += v;
  }
  for (const auto& [d, s] : date_sum)
    detail::require<ValidationError>(std::abs(s - 1) <= 1e-6,
                                     path + ": proportions at " + d.str() +
                                         " sum to " + fmt_g(s));
  std::map<std::string, RealSeries> out;
  for (auto& [name, parsed] : by_variant) {
    detail_csv::check_daily(parsed, path + " (variant " + name + ")");
    RealSeries s;
    s.origin = parsed.front().first;
    for (const auto& [d, v] : parsed) s.values.push_back(v);
    out[name] = std::move(s);
  }
  return out;
}

struct EstimateRow {
  Date date;
  std::string method;
  double estimate = 0;
  int clipped = 0;
};

inline void write_estimates_csv(const std::string& path,
                                const std::vector<EstimateRow>& rows) {
  std::ofstream out(path);
  detail::require<ValidationError>(out.good(), "cannot write " + path);
  out << "date,method,estimate,clipped_flag\n";
  for (const auto& r : rows)
    out << r.date.str() << ',' << r.method << ',' << fmt_g(r.estimate) << ','
        << r.clipped << '\n';
}

inline std::vector<EstimateRow> read_estimates_csv(const std::string& path) {
  const auto rows = detail_csv::read_rows(path, "date,method,estimate,clipped_flag");
  std::vector<EstimateRow> out;
  for (const auto& r : rows) {
    EstimateRow e;
    e.date = Date::parse(r[0]);
    e.method = r[1];
    e.estimate = detail_csv::parse_real(r[2], path + " at " + r[0]);
    e.clipped = static_cast<int>(detail_csv::parse_int(r[3], path + " at " + r[0]));
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace sevrate::io

#endif  // SEVRATE_CSV_HPP
