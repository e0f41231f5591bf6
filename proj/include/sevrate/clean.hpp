#ifndef SEVRATE_CLEAN_HPP
#define SEVRATE_CLEAN_HPP

// Cleaning pipeline for reported secondary counts: redistribute batching
// artifacts (dumps, negative corrections), truncate outliers, undo weekly
// reporting cycles, and impute daily values from weekly totals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sevrate/core.hpp"
#include "sevrate/rng.hpp"
#include "sevrate/smooth.hpp"

namespace sevrate::clean {

// A dump is a nonzero count preceded by six zero days: the value is spread
// uniformly (multinomial) over those seven days.  Scanning is left to right
// on the working series, so filled days break later zero runs.
inline CountSeries redistribute_dumps(const CountSeries& Y, std::uint64_t seed) {
  CountSeries out = Y;
  Rng rng = make_rng(seed);
  const std::vector<double> uniform7(7, 1.0 / 7.0);
  for (std::int64_t t = 6; t < out.size(); ++t) {
    const std::int64_t v = out.values[static_cast<std::size_t>(t)];
    if (v <= 0) continue;
    bool run = true;
    for (std::int64_t u = t - 6; u < t && run; ++u)
      if (out.values[static_cast<std::size_t>(u)] != 0) run = false;
    if (!run) continue;
    const auto parts = multinomial_draw(rng, v, uniform7);
    for (int j = 0; j < 7; ++j)
      out.values[static_cast<std::size_t>(t - 6 + j)] =
          parts[static_cast<std::size_t>(j)];
  }
  return out;
}

// A negative count is a correction: zero it and subtract its magnitude from
// the preceding history, one unit at a time, uniformly over the count units
// already on the books.  Left-to-right and in place, so later corrections
// see earlier ones.
inline CountSeries redistribute_negatives(const CountSeries& Y, std::uint64_t seed) {
  CountSeries out = Y;
  Rng rng = make_rng(seed);
  for (std::int64_t t = 0; t < out.size(); ++t) {
    const std::int64_t v = out.values[static_cast<std::size_t>(t)];
    if (v >= 0) continue;
    std::int64_t g = -v;
    std::int64_t total = 0;
    for (std::int64_t u = 0; u < t; ++u)
      if (out.values[static_cast<std::size_t>(u)] > 0)
        total += out.values[static_cast<std::size_t>(u)];
    detail::require<FeasibilityError>(
        total >= g, "negative correction of " + std::to_string(g) + " at " +
                        (out.origin + t).str() + " exceeds preceding history (" +
                        std::to_string(total) + ")");
    out.values[static_cast<std::size_t>(t)] = 0;
    while (g > 0) {
      std::uniform_int_distribution<std::int64_t> pick(0, total - 1);
      std::int64_t u = pick(rng);
      for (std::int64_t j = 0; j < t; ++j) {
        const std::int64_t c = out.values[static_cast<std::size_t>(j)];
        if (c <= 0) continue;
        if (u < c) {
          --out.values[static_cast<std::size_t>(j)];
          break;
        }
        u -= c;
      }
      --total;
      --g;
    }
  }
  return out;
}

namespace detail_clean {

inline std::vector<double> local_medians(const std::vector<double>& v, int window) {
  const auto n = static_cast<std::int64_t>(v.size());
  const int half = window / 2;
  std::vector<double> med(v.size());
  std::vector<double> buf;
  for (std::int64_t t = 0; t < n; ++t) {
    const std::int64_t lo = std::max<std::int64_t>(0, t - half);
    const std::int64_t hi = std::min<std::int64_t>(n - 1, t + half);
    buf.assign(v.begin() + lo, v.begin() + hi + 1);
    const auto mid = buf.size() / 2;
    std::nth_element(buf.begin(), buf.begin() + mid, buf.end());
    double m = buf[mid];
    if (buf.size() % 2 == 0) {
      std::nth_element(buf.begin(), buf.begin() + mid - 1, buf.begin() + mid);
      m = 0.5 * (m + buf[mid - 1]);
    }
    med[static_cast<std::size_t>(t)] = m;
  }
  return med;
}

}  // namespace detail_clean

// Real-valued truncation: values outside [median - mult*IQR, median + mult*IQR]
// (IQR taken globally over residuals to local medians) move to the band edge.
inline std::vector<double> outlier_truncate_real(const std::vector<double>& v,
                                                 int window, double iqr_mult) {
  detail::require<ParameterError>(window >= 3 && window % 2 == 1,
                                  "window must be odd and >= 3");
  detail::require<ParameterError>(iqr_mult > 0, "IQR multiplier must be > 0");
  if (v.size() < 2) return v;
  const auto med = detail_clean::local_medians(v, window);
  std::vector<double> resid(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) resid[i] = v[i] - med[i];
  const double iqr = quantile(resid, 0.75) - quantile(resid, 0.25);
  std::vector<double> out = v;
  if (iqr <= 0) return out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double lo = med[i] - iqr_mult * iqr;
    const double hi = med[i] + iqr_mult * iqr;
    out[i] = std::clamp(v[i], lo, hi);
  }
  return out;
}

struct TruncateResult {
  CountSeries series;
  std::int64_t n_truncated = 0;
  std::int64_t total_change = 0;  // sum(out) - sum(in); the only total-changing op
};

// Integer truncation: band edges are rounded toward the local median so a
// truncated value never crosses to the far side of the band.
inline TruncateResult outlier_truncate(const CountSeries& Y, int window = 15,
                                       double iqr_mult = 3.0) {
  std::vector<double> v(Y.values.begin(), Y.values.end());
  detail::require<ParameterError>(window >= 3 && window % 2 == 1,
                                  "window must be odd and >= 3");
  detail::require<ParameterError>(iqr_mult > 0, "IQR multiplier must be > 0");
  TruncateResult res;
  res.series = Y;
  if (v.size() < 2) return res;
  const auto med = detail_clean::local_medians(v, window);
  std::vector<double> resid(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) resid[i] = v[i] - med[i];
  const double iqr = quantile(resid, 0.75) - quantile(resid, 0.25);
  if (iqr <= 0) return res;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double lo = med[i] - iqr_mult * iqr;
    const double hi = med[i] + iqr_mult * iqr;
    std::int64_t nv = Y.values[i];
    if (v[i] > hi)
      nv = static_cast<std::int64_t>(std::floor(hi));
    else if (v[i] < lo)
      nv = static_cast<std::int64_t>(std::ceil(lo));
    if (nv != Y.values[i]) {
      res.total_change += nv - Y.values[i];
      ++res.n_truncated;
      res.series.values[i] = nv;
    }
  }
  return res;
}

// Remove the weekly reporting cycle: trailing-7 average (partial windows at
// the start), real-valued truncation, penalized smooth of the averaged data,
// then the averaged-data residuals scaled by sqrt(7) are added back to the
// smooth curve.  Stochastic rounding keeps totals unbiased and a final
// uniform correction makes the grand total match the input exactly.
inline CountSeries deweekify(const CountSeries& Y, std::uint64_t seed,
                             int window = 15, double iqr_mult = 3.0) {
  const std::int64_t n = Y.size();
  detail::require<DimensionError>(n >= 28, "deweekify needs at least 28 days");
  std::vector<double> avg(static_cast<std::size_t>(n));
  double run = 0;
  for (std::int64_t t = 0; t < n; ++t) {
    run += static_cast<double>(Y.values[static_cast<std::size_t>(t)]);
    if (t >= 7) run -= static_cast<double>(Y.values[static_cast<std::size_t>(t - 7)]);
    avg[static_cast<std::size_t>(t)] = run / static_cast<double>(std::min<std::int64_t>(t + 1, 7));
  }
  const auto trunc = outlier_truncate_real(avg, window, iqr_mult);
  const auto fit = whittaker_gcv(trunc);
  Rng rng = make_rng(seed);
  CountSeries out;
  out.origin = Y.origin;
  out.values.resize(static_cast<std::size_t>(n));
  const double rt7 = std::sqrt(7.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::int64_t t = 0; t < n; ++t) {
    const auto i = static_cast<std::size_t>(t);
    const double e = trunc[i] - fit.fitted[i];
    const double x = std::max(fit.fitted[i] + rt7 * e, 0.0);
    const double fl = std::floor(x);
    out.values[i] =
        static_cast<std::int64_t>(fl) + ((unif(rng) < x - fl) ? 1 : 0);
  }
  // exact total conservation
  std::int64_t target = 0, got = 0;
  for (std::int64_t t = 0; t < n; ++t) {
    target += Y.values[static_cast<std::size_t>(t)];
    got += out.values[static_cast<std::size_t>(t)];
  }
  if (got < target) {
    const std::vector<double> uni(static_cast<std::size_t>(n),
                                  1.0 / static_cast<double>(n));
    const auto add = multinomial_draw(rng, target - got, uni);
    for (std::int64_t t = 0; t < n; ++t)
      out.values[static_cast<std::size_t>(t)] += add[static_cast<std::size_t>(t)];
  } else if (got > target) {
    std::int64_t g = got - target;
    std::int64_t total = 0;
    for (auto v : out.values) total += std::max<std::int64_t>(v, 0);
    detail::require<NumericError>(total >= g, "conservation repair infeasible");
    while (g > 0) {
      std::uniform_int_distribution<std::int64_t> pick(0, total - 1);
      std::int64_t u = pick(rng);
      for (auto& v : out.values) {
        if (v <= 0) continue;
        if (u < v) {
          --v;
          break;
        }
        u -= v;
      }
      --total;
      --g;
    }
  }
  return out;
}

// Expand weekly totals (origin = first day of the first week) into daily
// counts via Multinomial(total, uniform 1/7) per week; weekly sums are
// preserved exactly.
inline CountSeries impute_daily(const CountSeries& weekly, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const std::vector<double> uniform7(7, 1.0 / 7.0);
  CountSeries out;
  out.origin = weekly.origin;
  out.values.resize(static_cast<std::size_t>(weekly.size()) * 7);
  for (std::int64_t w = 0; w < weekly.size(); ++w) {
    const std::int64_t tot = weekly.values[static_cast<std::size_t>(w)];
    detail::require<ValidationError>(tot >= 0, "negative weekly total at " +
                                                   (weekly.origin + w).str());
    const auto parts = multinomial_draw(rng, tot, uniform7);
    for (int j = 0; j < 7; ++j)
      out.values[static_cast<std::size_t>(w * 7 + j)] =
          parts[static_cast<std::size_t>(j)];
  }
  return out;
}

// Full cleaning pipeline: dumps, then negative corrections, then the weekly
// cycle removal (which includes truncation of the averaged series).
inline CountSeries clean_pipeline(const CountSeries& Y, std::uint64_t seed,
                                  int window = 15, double iqr_mult = 3.0) {
  CountSeries s = redistribute_dumps(Y, derive_seed(seed, {1}));
  s = redistribute_negatives(s, derive_seed(seed, {2}));
  return deweekify(s, derive_seed(seed, {3}), window, iqr_mult);
}

}  // namespace sevrate::clean

#endif  // SEVRATE_CLEAN_HPP
