#ifndef SEVRATE_RATIOS_HPP
#define SEVRATE_RATIOS_HPP

// Ratio baselines: lagged and convolutional ratios of smoothed secondary to
// smoothed primary counts.  Real-time forms use trailing windows, the
// retrospective forms centered windows.  Missing values (incomplete window,
// zero denominator) stay NaN; out-of-range ratios are clipped with a flag.

#include <cmath>
#include <cstdint>
#include <vector>

#include "sevrate/core.hpp"

namespace sevrate::ratios {

enum class Alignment { kTrailing, kCentered };

struct SmoothingMode {
  int W = 1;
  Alignment alignment = Alignment::kTrailing;
};

// Window mean on the input axis; NaN where the window leaves the axis.  An
// optional mask (1 = usable) restricts the mean to usable entries, which is
// how cross-validation keeps held-out values out of the smoothing; a window
// with no usable entries is NaN.
inline RealSeries smooth(const CountSeries& s, const SmoothingMode& mode,
                         const std::vector<std::uint8_t>* mask = nullptr) {
  detail::require<ParameterError>(mode.W >= 1, "window must be >= 1");
  if (mask)
    detail::require<DimensionError>(
        static_cast<std::int64_t>(mask->size()) == s.size(), "mask length mismatch");
  const std::int64_t n = s.size();
  RealSeries out;
  out.origin = s.origin;
  out.values.assign(static_cast<std::size_t>(n),
                    std::numeric_limits<double>::quiet_NaN());
  for (std::int64_t t = 0; t < n; ++t) {
    std::int64_t lo, hi;  // inclusive window [lo, hi]
    if (mode.alignment == Alignment::kTrailing) {
      lo = t - mode.W + 1;
      hi = t;
    } else {
      lo = t - mode.W / 2;
      hi = t + (mode.W + 1) / 2 - 1;
    }
    if (lo < 0 || hi > n - 1) continue;
    double sum = 0;
    std::int64_t cnt = 0;
    for (std::int64_t u = lo; u <= hi; ++u) {
      if (mask && !(*mask)[static_cast<std::size_t>(u)]) continue;
      sum += static_cast<double>(s.values[static_cast<std::size_t>(u)]);
      ++cnt;
    }
    if (cnt > 0) out.values[static_cast<std::size_t>(t)] = sum / static_cast<double>(cnt);
  }
  return out;
}

struct RatioResult {
  SeverityCurve curve;                // NaN at missing values
  std::vector<std::uint8_t> clipped;  // aligned to curve
  std::int64_t n_clipped = 0;
  std::int64_t n_missing = 0;
};

namespace detail_ratio {

inline double at_or_nan(const RealSeries& s, Date t) {
  if (!s.covers(t)) return std::numeric_limits<double>::quiet_NaN();
  return s.values[static_cast<std::size_t>(t - s.origin)];
}

inline RatioResult finalize(Date origin, std::vector<double> v) {
  RatioResult out;
  out.clipped.assign(v.size(), 0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::isnan(v[i])) {
      ++out.n_missing;
      continue;
    }
    if (v[i] < 0) {
      v[i] = 0;
      out.clipped[i] = 1;
      ++out.n_clipped;
    } else if (v[i] > 1) {
      v[i] = 1;
      out.clipped[i] = 1;
      ++out.n_clipped;
    }
  }
  out.curve = SeverityCurve::checked(origin, std::move(v), /*allow_nan=*/true);
  return out;
}

}  // namespace detail_ratio

// Lagged ratio.  Trailing mode (real-time): p_hat_t = Ytil_t / Xtil_{t-ell},
// on the secondary axis.  Centered mode (retrospective):
// p_hat_t = Ytil_{t+ell} / Xtil_t, on the primary axis.
inline RatioResult lagged_ratio(const CountSeries& X, const CountSeries& Y,
                                int ell, const SmoothingMode& mode,
                                const std::vector<std::uint8_t>* y_mask = nullptr) {
  detail::require<ParameterError>(ell >= 0, "lag must be >= 0");
  const RealSeries Xs = smooth(X, mode);
  const RealSeries Ys = smooth(Y, mode, y_mask);
  const bool realtime = mode.alignment == Alignment::kTrailing;
  const Date origin = realtime ? Y.origin : X.origin;
  const std::int64_t n = realtime ? Y.size() : X.size();
  std::vector<double> v(static_cast<std::size_t>(n));
  for (std::int64_t t = 0; t < n; ++t) {
    const Date day = origin + t;
    const double num = detail_ratio::at_or_nan(Ys, realtime ? day : day + ell);
    const double den = detail_ratio::at_or_nan(Xs, realtime ? day - ell : day);
    v[static_cast<std::size_t>(t)] =
        (std::isnan(num) || std::isnan(den) || den <= 0)
            ? std::numeric_limits<double>::quiet_NaN()
            : num / den;
  }
  return detail_ratio::finalize(origin, std::move(v));
}

// Convolutional real-time ratio on the secondary axis:
//   p_hat_t = Ytil_t / sum_k Xtil_{t-k} pi_k^{(t-k)},  trailing windows.
inline RatioResult conv_ratio_realtime(const CountSeries& X, const CountSeries& Y,
                                       const DelayDistribution& pi, int W,
                                       const std::vector<std::uint8_t>* y_mask = nullptr) {
  const SmoothingMode mode{W, Alignment::kTrailing};
  const RealSeries Xs = smooth(X, mode);
  const RealSeries Ys = smooth(Y, mode, y_mask);
  const int d = pi.max_delay();
  std::vector<double> v(static_cast<std::size_t>(Y.size()));
  for (std::int64_t t = 0; t < Y.size(); ++t) {
    const Date day = Y.origin + t;
    const double num = detail_ratio::at_or_nan(Ys, day);
    double den = 0;
    bool ok = !std::isnan(num);
    for (int k = 0; k <= d && ok; ++k) {
      const double m = pi.pmf_at(day - k)[static_cast<std::size_t>(k)];
      if (m == 0) continue;  // zero-mass lags do not constrain availability
      const double x = detail_ratio::at_or_nan(Xs, day - k);
      if (std::isnan(x))
        ok = false;
      else
        den += x * m;
    }
    v[static_cast<std::size_t>(t)] = (ok && den > 0)
                                         ? num / den
                                         : std::numeric_limits<double>::quiet_NaN();
  }
  return detail_ratio::finalize(Y.origin, std::move(v));
}

// Convolutional retrospective ratio on the primary axis:
//   p_hat_t = sum_k pi_k^{(t)} Ytil_{t+k} / sum_j Xtil_{t+k-j} pi_j^{(t+k-j)},
// centered windows; each k term carries its own denominator.
inline RatioResult conv_ratio_retrospective(const CountSeries& X, const CountSeries& Y,
                                            const DelayDistribution& pi, int W,
                                            const std::vector<std::uint8_t>* y_mask = nullptr) {
  const SmoothingMode mode{W, Alignment::kCentered};
  const RealSeries Xs = smooth(X, mode);
  const RealSeries Ys = smooth(Y, mode, y_mask);
  const int d = pi.max_delay();
  std::vector<double> v(static_cast<std::size_t>(X.size()));
  for (std::int64_t t = 0; t < X.size(); ++t) {
    const Date day = X.origin + t;
    const auto& mass = pi.pmf_at(day);
    double acc = 0;
    bool ok = true;
    for (int k = 0; k <= d && ok; ++k) {
      if (mass[static_cast<std::size_t>(k)] == 0) continue;
      const double num = detail_ratio::at_or_nan(Ys, day + k);
      if (std::isnan(num)) {
        ok = false;
        break;
      }
      double den = 0;
      for (int j = 0; j <= d; ++j) {
        const double m = pi.pmf_at(day + k - j)[static_cast<std::size_t>(j)];
        if (m == 0) continue;
        const double x = detail_ratio::at_or_nan(Xs, day + k - j);
        if (std::isnan(x)) {
          ok = false;
          break;
        }
        den += x * m;
      }
      if (!ok || den <= 0) {
        ok = false;
        break;
      }
      acc += mass[static_cast<std::size_t>(k)] * num / den;
    }
    v[static_cast<std::size_t>(t)] =
        ok ? acc : std::numeric_limits<double>::quiet_NaN();
  }
  return detail_ratio::finalize(X.origin, std::move(v));
}

enum class RatioMethod { kLaggedRealtime, kLaggedRetro, kConvRealtime, kConvRetro };

inline const char* ratio_method_name(RatioMethod m) {
  switch (m) {
    case RatioMethod::kLaggedRealtime: return "lagged-rt";
    case RatioMethod::kLaggedRetro: return "lagged-retro";
    case RatioMethod::kConvRealtime: return "conv-rt";
    case RatioMethod::kConvRetro: return "conv-retro";
  }
  return "?";
}

inline RatioResult run_ratio(RatioMethod method, const CountSeries& X,
                             const CountSeries& Y, const DelayDistribution& pi,
                             int W, int ell,
                             const std::vector<std::uint8_t>* y_mask = nullptr) {
  switch (method) {
    case RatioMethod::kLaggedRealtime:
      return lagged_ratio(X, Y, ell, {W, Alignment::kTrailing}, y_mask);
    case RatioMethod::kLaggedRetro:
      return lagged_ratio(X, Y, ell, {W, Alignment::kCentered}, y_mask);
    case RatioMethod::kConvRealtime:
      return conv_ratio_realtime(X, Y, pi, W, y_mask);
    case RatioMethod::kConvRetro:
      return conv_ratio_retrospective(X, Y, pi, W, y_mask);
  }
  throw ParameterError("unknown ratio method");
}

}  // namespace sevrate::ratios

#endif  // SEVRATE_RATIOS_HPP
