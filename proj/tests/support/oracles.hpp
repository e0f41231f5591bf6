#ifndef SEVRATE_TESTS_ORACLES_HPP
#define SEVRATE_TESTS_ORACLES_HPP

// Independent re-implementations used to cross-check library results.
// Everything here is deliberately written the slow, obvious way.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include <boost/math/distributions/gamma.hpp>

#include "sevrate/core.hpp"

namespace oracle {

// Discretized gamma pmf via Simpson quadrature of the density over [k, k+1],
// truncated at d and renormalized.  Independent of the CDF-difference route.
// The first bin uses the substitution x = u^5 so the quadrature stays
// accurate despite the power-law behaviour of the density at zero.
inline std::vector<double> gamma_pmf_quadrature(double mean, double sd, int d) {
  const double shape = (mean * mean) / (sd * sd);
  const double scale = (sd * sd) / mean;
  boost::math::gamma_distribution<double> g(shape, scale);
  const int steps = 2000;  // per unit interval
  auto simpson = [&](const std::function<double(double)>& f) {
    const double h = 1.0 / steps;
    double s = f(0.0) + f(1.0);
    for (int i = 1; i < steps; ++i) s += (i % 2 ? 4.0 : 2.0) * f(i * h);
    return s * h / 3.0;
  };
  std::vector<double> pmf(static_cast<std::size_t>(d) + 1);
  pmf[0] = simpson([&](double u) {
    const double x = std::pow(u, 5.0);
    return u > 0 ? 5.0 * std::pow(u, 4.0) * boost::math::pdf(g, x) : 0.0;
  });
  for (int k = 1; k <= d; ++k)
    pmf[static_cast<std::size_t>(k)] =
        simpson([&](double u) { return boost::math::pdf(g, k + u); });
  double total = 0;
  for (double v : pmf) total += v;
  for (double& v : pmf) v /= total;
  return pmf;
}

// Convolution mean mu_t = sum_k pi_k(t-k) * p(t-k) * X(t-k), date arithmetic
// done longhand.
inline std::vector<double> convolve_mu(const sevrate::CountSeries& X,
                                       const sevrate::DelayDistribution& pi,
                                       const std::vector<double>& p,
                                       sevrate::Date p_origin, sevrate::Date y_origin,
                                       std::int64_t n_y) {
  std::vector<double> mu(static_cast<std::size_t>(n_y), 0.0);
  for (std::int64_t t = 0; t < n_y; ++t) {
    const sevrate::Date day = y_origin + t;
    for (int k = 0; k <= pi.max_delay(); ++k) {
      const sevrate::Date src = day - k;
      const std::int64_t ip = src - p_origin;
      if (ip < 0 || ip >= static_cast<std::int64_t>(p.size())) continue;
      const std::int64_t ix = src - X.origin;
      if (ix < 0 || ix >= X.size()) continue;
      mu[static_cast<std::size_t>(t)] +=
          pi.pmf_at(src)[static_cast<std::size_t>(k)] *
          p[static_cast<std::size_t>(ip)] *
          static_cast<double>(X.values[static_cast<std::size_t>(ix)]);
    }
  }
  return mu;
}

// Golden-section search for a 1-d unimodal function on [lo, hi].
inline double golden_min(const std::function<double(double)>& f, double lo,
                         double hi, int iters = 200) {
  const double phi = (std::sqrt(5.0) - 1) / 2;
  double a = lo, b = hi;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iters; ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }
  return (a + b) / 2;
}

// Kolmogorov-Smirnov one-sample statistic scaled by sqrt(n); the 1% critical
// value is 1.628.
inline double ks_stat(std::vector<double> sample,
                      const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double dmax = 0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double F = cdf(sample[i]);
    dmax = std::max(dmax, std::abs(F - static_cast<double>(i) / n));
    dmax = std::max(dmax, std::abs(static_cast<double>(i + 1) / n - F));
  }
  return std::sqrt(n) * dmax;
}

constexpr double kKs01 = 1.628;

// Spectral mass at a given period via a naive DFT of the mean-removed series.
inline double spectral_mass(const std::vector<double>& x, double period) {
  const double n = static_cast<double>(x.size());
  double mean = 0;
  for (double v : x) mean += v;
  mean /= n;
  std::complex<double> acc(0, 0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double ang = -2.0 * M_PI * static_cast<double>(t) / period;
    acc += (x[t] - mean) * std::complex<double>(std::cos(ang), std::sin(ang));
  }
  return std::abs(acc) / n;
}

inline double spectral_mass(const std::vector<std::int64_t>& x, double period) {
  std::vector<double> xd(x.begin(), x.end());
  return spectral_mass(xd, period);
}

// Monte Carlo summaries.
struct McStats {
  double mean = 0;
  double var = 0;
  double se_mean = 0;  // sd / sqrt(n)
  std::size_t n = 0;
};

inline McStats mc_stats(const std::vector<double>& draws) {
  McStats s;
  s.n = draws.size();
  s.mean = sevrate::mean_of(draws);
  s.var = sevrate::sample_variance(draws);
  s.se_mean = std::sqrt(s.var / static_cast<double>(s.n));
  return s;
}

}  // namespace oracle

#endif  // SEVRATE_TESTS_ORACLES_HPP
