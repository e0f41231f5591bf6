#ifndef SEVRATE_CORE_HPP
#define SEVRATE_CORE_HPP

// Core types for severity-rate estimation from aggregate incidence pairs:
// dated count/rate series, discrete delay distributions, difference and
// delay-convolution operators, and the first/second-moment formulas of the
// thinned-counts model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace sevrate {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AlignmentError : Error { using Error::Error; };
struct DimensionError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct ParameterError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct FeasibilityError : Error { using Error::Error; };
struct TuningError : Error { using Error::Error; };

namespace detail {

template <typename E = ValidationError>
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw E(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Calendar dates, stored as days since 1970-01-01 (proleptic Gregorian).

struct Date {
  std::int64_t days = 0;

  static Date from_ymd(int y, int m, int d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned mp = static_cast<unsigned>(m + (m > 2 ? -3 : 9));
    const unsigned doy = (153 * mp + 2) / 5 + static_cast<unsigned>(d) - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return Date{era * 146097LL + static_cast<std::int64_t>(doe) - 719468};
  }

  std::tuple<int, int, int> ymd() const {
    std::int64_t z = days + 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    return {static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
  }

  static Date parse(const std::string& iso) {
    int y = 0, m = 0, d = 0;
    if (std::sscanf(iso.c_str(), "%d-%d-%d", &y, &m, &d) != 3 || m < 1 || m > 12 ||
        d < 1 || d > 31)
      throw ValidationError("bad ISO date: '" + iso + "'");
    return from_ymd(y, m, d);
  }

  std::string str() const {
    auto [y, m, d] = ymd();
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
    return buf;
  }

  friend bool operator==(Date a, Date b) { return a.days == b.days; }
  friend auto operator<=>(Date a, Date b) { return a.days <=> b.days; }
  friend Date operator+(Date a, std::int64_t n) { return Date{a.days + n}; }
  friend Date operator-(Date a, std::int64_t n) { return Date{a.days - n}; }
  friend std::int64_t operator-(Date a, Date b) { return a.days - b.days; }
};

// ---------------------------------------------------------------------------
// Daily series aligned to a start date, one value per consecutive day.

template <typename T>
struct Series {
  Date origin;
  std::vector<T> values;

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
  bool empty() const { return values.empty(); }
  Date date_at(std::int64_t i) const { return origin + i; }
  Date last_date() const { return origin + (size() - 1); }
  bool covers(Date a, Date b) const {
    return !empty() && origin <= a && b <= last_date();
  }
  bool covers(Date t) const { return covers(t, t); }
  std::int64_t index_of(Date t) const { return t - origin; }
  const T& at(Date t) const {
    auto i = index_of(t);
    detail::require<AlignmentError>(i >= 0 && i < size(),
                                    "date " + t.str() + " outside series");
    return values[static_cast<std::size_t>(i)];
  }
  T& at(Date t) { return const_cast<T&>(std::as_const(*this).at(t)); }
};

using CountSeries = Series<std::int64_t>;
using RealSeries = Series<double>;

// Severity-rate curve: one rate per day, each within [0,1].  NaN entries are
// permitted only when explicitly allowed (ratio estimators use NaN to mark
// days with no estimate).
struct SeverityCurve {
  Date origin;
  std::vector<double> p;

  std::int64_t size() const { return static_cast<std::int64_t>(p.size()); }
  Date date_at(std::int64_t i) const { return origin + i; }
  Date last_date() const { return origin + (size() - 1); }
  bool covers(Date a, Date b) const {
    return !p.empty() && origin <= a && b <= last_date();
  }
  bool covers(Date t) const { return covers(t, t); }
  double at(Date t) const {
    auto i = t - origin;
    detail::require<AlignmentError>(i >= 0 && i < size(),
                                    "date " + t.str() + " outside curve");
    return p[static_cast<std::size_t>(i)];
  }

  static SeverityCurve checked(Date origin, std::vector<double> v,
                               bool allow_nan = false) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      double& x = v[i];
      if (std::isnan(x)) {
        detail::require(allow_nan, "NaN rate at index " + std::to_string(i));
        continue;
      }
      detail::require(x > -1e-9 && x < 1 + 1e-9,
                      "rate " + std::to_string(x) + " at index " +
                          std::to_string(i) + " outside [0,1]");
      x = std::clamp(x, 0.0, 1.0);
    }
    return SeverityCurve{origin, std::move(v)};
  }
};

// ---------------------------------------------------------------------------
// Small numeric helpers shared across modules.

inline double mean_of(const std::vector<double>& v) {
  detail::require<DimensionError>(!v.empty(), "mean of empty vector");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v) {
  detail::require<DimensionError>(v.size() >= 2, "variance needs >= 2 values");
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double sample_sd(const std::vector<double>& v) {
  return std::sqrt(sample_variance(v));
}

// Quantile with linear interpolation between order statistics (the common
// "type 7" convention).
inline double quantile(std::vector<double> v, double q) {
  detail::require<DimensionError>(!v.empty(), "quantile of empty vector");
  detail::require<ParameterError>(q >= 0 && q <= 1, "quantile level outside [0,1]");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - std::floor(h)) * (v[hi] - v[lo]);
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  detail::require<DimensionError>(x.size() == y.size() && x.size() >= 3,
                                  "pearson needs equal lengths >= 3");
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  detail::require<NumericError>(sxx > 0 && syy > 0,
                                "pearson undefined for constant series");
  return sxy / std::sqrt(sxx * syy);
}

inline std::vector<double> log_grid(double lo, double hi, int n) {
  detail::require<ParameterError>(lo > 0 && hi > lo && n >= 2, "bad log grid");
  std::vector<double> g(static_cast<std::size_t>(n));
  const double a = std::log(lo), b = std::log(hi);
  for (int i = 0; i < n; ++i)
    g[static_cast<std::size_t>(i)] =
        std::exp(a + (b - a) * i / static_cast<double>(n - 1));
  g.front() = lo;
  g.back() = hi;
  return g;
}

// ---------------------------------------------------------------------------
// Discrete delay distribution on lags 0..d, optionally varying with the
// primary event's day.  A per-day table row applies to primaries occurring on
// table_origin + row; days outside the table reuse the nearest row.

class DelayDistribution {
 public:
  DelayDistribution() = default;

  explicit DelayDistribution(std::vector<double> pmf) : base_(std::move(pmf)) {
    validate_pmf(base_);
  }

  DelayDistribution(Date table_origin, std::vector<std::vector<double>> table)
      : table_origin_(table_origin), table_(std::move(table)) {
    detail::require<DimensionError>(!table_.empty(), "empty delay table");
    base_ = table_.front();
    for (const auto& row : table_) {
      detail::require<DimensionError>(row.size() == base_.size(),
                                      "ragged delay table");
      validate_pmf(row);
    }
  }

  int max_delay() const { return static_cast<int>(base_.size()) - 1; }
  bool time_varying() const { return !table_.empty(); }

  const std::vector<double>& pmf_at(Date primary_day) const {
    if (table_.empty()) return base_;
    auto i = primary_day - table_origin_;
    i = std::clamp<std::int64_t>(i, 0, static_cast<std::int64_t>(table_.size()) - 1);
    return table_[static_cast<std::size_t>(i)];
  }

  const std::vector<double>& base() const { return base_; }

  double mean() const {
    double m = 0;
    for (std::size_t k = 0; k < base_.size(); ++k) m += static_cast<double>(k) * base_[k];
    return m;
  }

  // CDF of the base pmf: F(j) = sum_{k<=j} pi_k, with F(j<0) = 0.
  double cdf(std::int64_t j) const {
    if (j < 0) return 0;
    j = std::min<std::int64_t>(j, max_delay());
    double s = 0;
    for (std::int64_t k = 0; k <= j; ++k) s += base_[static_cast<std::size_t>(k)];
    return s;
  }

  // Generating gamma parameters, set by discretized_gamma; NaN otherwise.
  // They let mean-offset misspecification reproduce the original shape
  // exactly at offset zero instead of re-discretizing the discrete mean.
  bool has_gamma_params() const { return std::isfinite(gamma_mean_); }
  double gamma_mean() const { return gamma_mean_; }
  double gamma_sd() const { return gamma_sd_; }
  void set_gamma_params(double mean, double sd) {
    gamma_mean_ = mean;
    gamma_sd_ = sd;
  }

 private:
  static void validate_pmf(const std::vector<double>& pmf) {
    detail::require<DimensionError>(!pmf.empty(), "empty delay pmf");
    double s = 0;
    for (double x : pmf) {
      detail::require(x >= 0 && x <= 1, "delay mass outside [0,1]");
      s += x;
    }
    detail::require(std::abs(s - 1) <= 1e-6,
                    "delay pmf sums to " + std::to_string(s) + ", not 1");
  }

  std::vector<double> base_;
  Date table_origin_{};
  std::vector<std::vector<double>> table_;
  double gamma_mean_ = std::numeric_limits<double>::quiet_NaN();
  double gamma_sd_ = std::numeric_limits<double>::quiet_NaN();
};

inline std::pair<double, double> gamma_shape_scale(double mean, double sd) {
  detail::require<ParameterError>(mean > 0 && sd > 0, "gamma needs mean, sd > 0");
  const double shape = (mean / sd) * (mean / sd);
  return {shape, sd * sd / mean};
}

// Gamma CDF via the regularized lower incomplete gamma function; declared here
// so discretized_gamma stays self-contained for callers that only include core.
double gamma_cdf(double x, double shape, double scale);

// Discretize a gamma onto integer lags 0..d: mass of bin k is
// F(k+1) - F(k) with F(0) = 0, truncated at d and renormalized.
inline DelayDistribution discretized_gamma(double mean, double sd, int d) {
  detail::require<ParameterError>(d >= 1, "support must have d >= 1");
  auto [shape, scale] = gamma_shape_scale(mean, sd);
  std::vector<double> pmf(static_cast<std::size_t>(d) + 1);
  double prev = 0, total = 0;
  for (int k = 0; k <= d; ++k) {
    const double next = gamma_cdf(static_cast<double>(k) + 1, shape, scale);
    pmf[static_cast<std::size_t>(k)] = next - prev;
    total += next - prev;
    prev = next;
  }
  detail::require<NumericError>(total > 0, "gamma mass vanished on 0..d");
  for (double& x : pmf) x /= total;
  DelayDistribution out(std::move(pmf));
  out.set_gamma_params(mean, sd);
  return out;
}

inline int lag_from_delay(const DelayDistribution& pi) {
  return static_cast<int>(std::llround(pi.mean()));
}

// ---------------------------------------------------------------------------
// Difference operators D^(k): row i of D^(k) x is sum_j c_j x_{i+j} with
// c_j = (-1)^(k-j) binom(k, j), so D^(1) x gives forward differences and
// D^(k+1) = D^(1) D^(k).

inline std::vector<double> diff_coeffs(int k) {
  detail::require<ParameterError>(k >= 1, "difference order must be >= 1");
  std::vector<double> c(static_cast<std::size_t>(k) + 1);
  double binom = 1;
  for (int j = 0; j <= k; ++j) {
    c[static_cast<std::size_t>(j)] = ((k - j) % 2 == 0 ? binom : -binom);
    binom = binom * (k - j) / (j + 1);
  }
  return c;
}

inline std::vector<double> diff_apply(int k, const std::vector<double>& x) {
  const auto n = static_cast<std::int64_t>(x.size());
  detail::require<DimensionError>(k < n, "difference order >= vector length");
  const auto c = diff_coeffs(k);
  std::vector<double> y(static_cast<std::size_t>(n - k));
  for (std::int64_t i = 0; i + k < n; ++i) {
    double s = 0;
    for (int j = 0; j <= k; ++j)
      s += c[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(i + j)];
    y[static_cast<std::size_t>(i)] = s;
  }
  return y;
}

inline Eigen::MatrixXd diff_matrix_dense(int k, std::int64_t n) {
  detail::require<DimensionError>(k < n, "difference order >= dimension");
  const auto c = diff_coeffs(k);
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n - k, n);
  for (std::int64_t i = 0; i < n - k; ++i)
    for (int j = 0; j <= k; ++j) D(i, i + j) = c[static_cast<std::size_t>(j)];
  return D;
}

inline Eigen::SparseMatrix<double> diff_matrix_sparse(int k, std::int64_t n) {
  detail::require<DimensionError>(k < n, "difference order >= dimension");
  const auto c = diff_coeffs(k);
  Eigen::SparseMatrix<double> D(n - k, n);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>((n - k) * (k + 1)));
  for (std::int64_t i = 0; i < n - k; ++i)
    for (int j = 0; j <= k; ++j)
      trip.emplace_back(i, i + j, c[static_cast<std::size_t>(j)]);
  D.setFromTriplets(trip.begin(), trip.end());
  return D;
}

// ---------------------------------------------------------------------------
// Delay-convolution operator A: maps a rate curve p (indexed by primary day,
// spanning [y_origin - d, y_origin + n_y - 1]) to expected secondary counts
// mu_t = sum_k X_{t-k} pi_k^{(t-k)} p_{t-k} for t in [y_origin, y_origin+n_y).

class ConvolutionOperator {
 public:
  ConvolutionOperator(const CountSeries& X, const DelayDistribution& pi,
                      Date y_origin, std::int64_t n_y)
      : d_(pi.max_delay()), n_y_(n_y), y_origin_(y_origin) {
    detail::require<DimensionError>(n_y >= 1, "need at least one secondary day");
    detail::require<AlignmentError>(
        X.covers(y_origin - d_, y_origin + n_y - 1),
        "primary series must cover " + (y_origin - d_).str() + ".." +
            (y_origin + n_y - 1).str());
    band_.resize(static_cast<std::size_t>(n_y) * (d_ + 1));
    for (std::int64_t i = 0; i < n_y; ++i) {
      const Date t = y_origin + i;
      for (int k = 0; k <= d_; ++k) {
        const Date s = t - k;
        band_[static_cast<std::size_t>(i) * (d_ + 1) + static_cast<std::size_t>(k)] =
            static_cast<double>(X.at(s)) * pi.pmf_at(s)[static_cast<std::size_t>(k)];
      }
    }
  }

  std::int64_t rows() const { return n_y_; }
  std::int64_t cols() const { return n_y_ + d_; }
  int max_delay() const { return d_; }
  Date y_origin() const { return y_origin_; }
  Date p_origin() const { return y_origin_ - d_; }

  // A(i, j) is nonzero only for j in [i, i+d]; lag k = i + d - j.
  double entry(std::int64_t i, std::int64_t j) const {
    const std::int64_t k = i + d_ - j;
    if (k < 0 || k > d_) return 0;
    return band_[static_cast<std::size_t>(i) * (d_ + 1) + static_cast<std::size_t>(k)];
  }

  void apply(const double* p, double* mu) const {
    for (std::int64_t i = 0; i < n_y_; ++i) {
      const double* row = band_.data() + static_cast<std::size_t>(i) * (d_ + 1);
      double s = 0;
      for (int k = 0; k <= d_; ++k) s += row[k] * p[i + d_ - k];
      mu[i] = s;
    }
  }

  std::vector<double> apply(const std::vector<double>& p) const {
    detail::require<DimensionError>(static_cast<std::int64_t>(p.size()) == cols(),
                                    "rate vector length mismatch");
    std::vector<double> mu(static_cast<std::size_t>(n_y_));
    apply(p.data(), mu.data());
    return mu;
  }

  void apply_transpose(const double* v, double* out) const {
    std::fill(out, out + cols(), 0.0);
    for (std::int64_t i = 0; i < n_y_; ++i) {
      const double* row = band_.data() + static_cast<std::size_t>(i) * (d_ + 1);
      for (int k = 0; k <= d_; ++k) out[i + d_ - k] += row[k] * v[i];
    }
  }

  double row_total(std::int64_t i) const {
    const double* row = band_.data() + static_cast<std::size_t>(i) * (d_ + 1);
    double s = 0;
    for (int k = 0; k <= d_; ++k) s += row[k];
    return s;
  }

  Eigen::SparseMatrix<double> sparse() const {
    Eigen::SparseMatrix<double> A(n_y_, cols());
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(n_y_) * (d_ + 1));
    for (std::int64_t i = 0; i < n_y_; ++i)
      for (int k = 0; k <= d_; ++k) {
        const double v =
            band_[static_cast<std::size_t>(i) * (d_ + 1) + static_cast<std::size_t>(k)];
        if (v != 0) trip.emplace_back(i, i + d_ - k, v);
      }
    A.setFromTriplets(trip.begin(), trip.end());
    return A;
  }

 private:
  int d_;
  std::int64_t n_y_;
  Date y_origin_;
  std::vector<double> band_;  // row-major, band_[i][k] = X_{t_i - k} pi_k^{(t_i - k)}
};

// ---------------------------------------------------------------------------
// Model moments and dependence bounds.

struct MeanVarSeries {
  RealSeries mean;
  RealSeries variance;
};

// Conditional mean and variance of the secondary count at each day both
// series cover: mu_t = sum_k X_{t-k} pi_k p_{t-k},
// sigma2_t = sum_k X_{t-k} pi_k p_{t-k} (1 - pi_k p_{t-k}).
inline MeanVarSeries expected_secondary(const CountSeries& X,
                                        const DelayDistribution& pi,
                                        const SeverityCurve& p) {
  const int d = pi.max_delay();
  const Date t0 = Date{std::max(X.origin.days, p.origin.days) + d};
  const Date t1 = Date{std::min(X.last_date().days, p.last_date().days)};
  detail::require<AlignmentError>(t0 <= t1, "no day has full delay coverage");
  const auto n = static_cast<std::size_t>(t1 - t0 + 1);
  RealSeries mu{t0, std::vector<double>(n)};
  RealSeries var{t0, std::vector<double>(n)};
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    const Date t = t0 + i;
    double m = 0, v = 0;
    for (int k = 0; k <= d; ++k) {
      const Date s = t - k;
      const double q = pi.pmf_at(s)[static_cast<std::size_t>(k)] * p.at(s);
      const double e = static_cast<double>(X.at(s)) * q;
      m += e;
      v += e * (1 - q);
    }
    mu.values[static_cast<std::size_t>(i)] = m;
    var.values[static_cast<std::size_t>(i)] = v;
  }
  return {std::move(mu), std::move(var)};
}

// Lower end of the conditional lag-one correlation interval [-q/(1-q), 0]
// with q = max_k pi_k^{(t-k)} p_{t-k}.
inline double correlation_bound(const DelayDistribution& pi,
                                const SeverityCurve& p, Date t) {
  const int d = pi.max_delay();
  detail::require<AlignmentError>(p.covers(t - d, t),
                                  "curve must cover the delay window");
  double q = 0;
  for (int k = 0; k <= d; ++k) {
    const Date s = t - k;
    q = std::max(q, pi.pmf_at(s)[static_cast<std::size_t>(k)] * p.at(s));
  }
  detail::require<NumericError>(q < 1, "success probability reaches 1");
  return -q / (1 - q);
}

// Sum of squared success probabilities controlling the total-variation gap
// between the secondary count and its Poisson approximation.
inline double poisson_tv_bound(const DelayDistribution& pi,
                               const SeverityCurve& p, Date t) {
  const int d = pi.max_delay();
  detail::require<AlignmentError>(p.covers(t - d, t),
                                  "curve must cover the delay window");
  double s2 = 0;
  for (int k = 0; k <= d; ++k) {
    const Date s = t - k;
    const double q = pi.pmf_at(s)[static_cast<std::size_t>(k)] * p.at(s);
    s2 += q * q;
  }
  return s2;
}

// Backward severity rate: the probability that a secondary event on day t
// traces to any primary, p~_t = sum_k pi_k^{(t-k)} p_{t-k}.
inline SeverityCurve backward_rate(const DelayDistribution& pi,
                                   const SeverityCurve& p) {
  const int d = pi.max_delay();
  detail::require<DimensionError>(p.size() > d, "curve shorter than delay support");
  const Date t0 = p.origin + d;
  std::vector<double> out(static_cast<std::size_t>(p.size() - d));
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(out.size()); ++i) {
    const Date t = t0 + i;
    double s = 0;
    for (int k = 0; k <= d; ++k) {
      const Date sdy = t - k;
      s += pi.pmf_at(sdy)[static_cast<std::size_t>(k)] * p.at(sdy);
    }
    out[static_cast<std::size_t>(i)] = s;
  }
  return SeverityCurve::checked(t0, std::move(out));
}

}  // namespace sevrate

// gamma_cdf lives here to keep Boost out of every translation unit's hot path
// while still letting core.hpp be used header-only.
#include <boost/math/distributions/gamma.hpp>

namespace sevrate {

inline double gamma_cdf(double x, double shape, double scale) {
  if (x <= 0) return 0;
  boost::math::gamma_distribution<double> g(shape, scale);
  return boost::math::cdf(g, x);
}

}  // namespace sevrate

#endif  // SEVRATE_CORE_HPP
