#ifndef SEVRATE_SIMULATE_HPP
#define SEVRATE_SIMULATE_HPP

// Ground-truth severity curves and synthetic secondary counts under two
// noise models: the exact Poisson-binomial and an overdispersed
// beta-binomial calibrated to an estimated dispersion multiplier.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sevrate/core.hpp"
#include "sevrate/rng.hpp"
#include "sevrate/smooth.hpp"

namespace sevrate::sim {

// ---------------------------------------------------------------------------
// Variant mixtures: p_t = sum_v c_t^v p^v.

struct VariantProfile {
  std::string name;
  double severity = 0;     // per-variant rate p^v in [0,1]
  RealSeries proportions;  // circulation shares c_t^v on a common axis
};

inline SeverityCurve variant_hfr_curve(const std::vector<VariantProfile>& profiles) {
  detail::require<ParameterError>(!profiles.empty(), "no variant profiles");
  const Date origin = profiles.front().proportions.origin;
  const std::int64_t n = profiles.front().proportions.size();
  for (const auto& v : profiles) {
    detail::require<ValidationError>(v.severity >= 0 && v.severity <= 1,
                                     "variant severity outside [0,1]: " + v.name);
    detail::require<AlignmentError>(
        v.proportions.origin == origin && v.proportions.size() == n,
        "variant proportions not on a common axis: " + v.name);
  }
  std::vector<double> p(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t t = 0; t < n; ++t) {
    double tot = 0;
    for (const auto& v : profiles) {
      const double c = v.proportions.values[static_cast<std::size_t>(t)];
      detail::require<ValidationError>(
          c >= 0 && c <= 1, "variant proportion outside [0,1] at " + (origin + t).str());
      tot += c;
      p[static_cast<std::size_t>(t)] += c * v.severity;
    }
    detail::require<ValidationError>(std::abs(tot - 1) <= 1e-9,
                                     "variant proportions sum to " +
                                         std::to_string(tot) + " at " +
                                         (origin + t).str());
  }
  return SeverityCurve::checked(origin, std::move(p));
}

// ---------------------------------------------------------------------------
// Poisson-binomial sampler.  Day t's count is a sum of independent Bernoulli
// draws with success probability pi_k^{(t-k)} p_{t-k} for each of the
// X_{t-k} primaries at lag k; bucketing by lag gives an exactly equivalent
// sum of d+1 binomial draws.

inline CountSeries sample_poisson_binomial(const CountSeries& X,
                                           const DelayDistribution& pi,
                                           const SeverityCurve& p, Date y_origin,
                                           std::int64_t n_y, std::uint64_t seed) {
  const int d = pi.max_delay();
  detail::require<ParameterError>(n_y >= 1, "need at least one output day");
  detail::require<AlignmentError>(
      X.covers(y_origin - d) && X.covers(y_origin + n_y - 1),
      "primary series does not cover the required history");
  detail::require<AlignmentError>(
      p.covers(y_origin - d) && p.covers(y_origin + n_y - 1),
      "severity curve does not cover the required history");
  Rng rng = make_rng(seed);
  CountSeries Y;
  Y.origin = y_origin;
  Y.values.resize(static_cast<std::size_t>(n_y));
  for (std::int64_t i = 0; i < n_y; ++i) {
    const Date t = y_origin + i;
    std::int64_t y = 0;
    for (int k = 0; k <= d; ++k) {
      const Date s = t - k;
      const std::int64_t x = X.at(s);
      detail::require<ValidationError>(x >= 0, "negative primary count at " + s.str());
      const double prob = pi.pmf_at(s)[static_cast<std::size_t>(k)] * p.at(s);
      detail::require<ParameterError>(prob <= 1 + 1e-9,
                                      "event probability exceeds 1 at " + s.str());
      y += binomial_draw(rng, x, std::min(prob, 1.0));
    }
    Y.values[static_cast<std::size_t>(i)] = y;
  }
  return Y;
}

// ---------------------------------------------------------------------------
// Dispersion: fit a smooth mean curve, then regress squared residuals on the
// fitted values without an intercept.  beta_hat ~ 1 for Poisson-level noise.

struct DispersionFit {
  double beta_hat = 1;
  std::vector<double> fitted;
  std::vector<double> residuals;
  double alpha = 0;  // smoother penalty selected by GCV
};

inline DispersionFit estimate_dispersion(const CountSeries& Y) {
  bool any = false;
  for (auto v : Y.values)
    if (v != 0) any = true;
  detail::require<ValidationError>(any, "dispersion undefined for an all-zero series");
  std::vector<double> yv(Y.values.begin(), Y.values.end());
  auto fit = whittaker_gcv(yv);
  DispersionFit out;
  out.fitted = fit.fitted;
  out.alpha = fit.alpha;
  out.residuals.resize(yv.size());
  double num = 0, den = 0;
  for (std::size_t i = 0; i < yv.size(); ++i) {
    const double e = yv[i] - fit.fitted[i];
    out.residuals[i] = e;
    num += fit.fitted[i] * e * e;
    den += fit.fitted[i] * fit.fitted[i];
  }
  detail::require<NumericError>(den > 0, "degenerate fitted curve");
  out.beta_hat = num / den;
  return out;
}

// ---------------------------------------------------------------------------
// Beta-binomial calibration: with n_t = sum_{k<=d} X_{t-k}, M_t = mu_t/n_t,
// the mean-correlation parameterization matching mean mu_t and variance
// beta*sigma^2_t has  rho_t = (beta sigma^2_t / (n_t M_t (1-M_t)) - 1)/(n_t-1).

struct BetaBinomialParams {
  double M = 0;
  double rho = 0;
  bool clamped = false;  // true when a negative rho was clamped to zero
};

inline BetaBinomialParams beta_binomial_params(double mu, double var,
                                               std::int64_t n, double beta_hat) {
  detail::require<ParameterError>(n >= 2, "beta-binomial needs n >= 2");
  detail::require<ParameterError>(mu > 0 && mu < static_cast<double>(n),
                                  "beta-binomial needs 0 < mean < n");
  detail::require<ParameterError>(var >= 0 && beta_hat > 0,
                                  "need variance >= 0 and dispersion > 0");
  BetaBinomialParams out;
  out.M = mu / static_cast<double>(n);
  const double base = static_cast<double>(n) * out.M * (1 - out.M);
  double rho = (beta_hat * var / base - 1) / static_cast<double>(n - 1);
  if (rho < 0) {
    rho = 0;
    out.clamped = true;
  }
  detail::require<FeasibilityError>(
      rho < 1, "beta-binomial correlation rho = " + std::to_string(rho) +
                   " is not in [0,1)");
  out.rho = rho;
  return out;
}

struct BetaBinomialSample {
  CountSeries Y;
  std::int64_t clamped_days = 0;  // days where rho was clamped to zero
};

inline BetaBinomialSample sample_beta_binomial(const CountSeries& X,
                                               const DelayDistribution& pi,
                                               const SeverityCurve& p,
                                               double beta_hat, Date y_origin,
                                               std::int64_t n_y, std::uint64_t seed) {
  const int d = pi.max_delay();
  detail::require<ParameterError>(n_y >= 1, "need at least one output day");
  detail::require<AlignmentError>(
      X.covers(y_origin - d) && X.covers(y_origin + n_y - 1),
      "primary series does not cover the required history");
  detail::require<AlignmentError>(
      p.covers(y_origin - d) && p.covers(y_origin + n_y - 1),
      "severity curve does not cover the required history");
  detail::require<ParameterError>(beta_hat > 0, "dispersion must be > 0");
  Rng rng = make_rng(seed);
  BetaBinomialSample out;
  out.Y.origin = y_origin;
  out.Y.values.resize(static_cast<std::size_t>(n_y));
  for (std::int64_t i = 0; i < n_y; ++i) {
    const Date t = y_origin + i;
    double mu = 0, var = 0;
    std::int64_t n = 0;
    for (int k = 0; k <= d; ++k) {
      const Date s = t - k;
      const std::int64_t x = X.at(s);
      detail::require<ValidationError>(x >= 0, "negative primary count at " + s.str());
      const double prob = pi.pmf_at(s)[static_cast<std::size_t>(k)] * p.at(s);
      n += x;
      mu += static_cast<double>(x) * prob;
      var += static_cast<double>(x) * prob * (1 - prob);
    }
    std::int64_t y = 0;
    if (n == 0 || mu <= 0) {
      y = 0;
    } else if (mu >= static_cast<double>(n) || n == 1) {
      // saturated or single-trial day: fall back to the binomial mean match
      y = binomial_draw(rng, n, std::min(mu / static_cast<double>(n), 1.0));
    } else {
      BetaBinomialParams bb;
      try {
        bb = beta_binomial_params(mu, var, n, beta_hat);
      } catch (const FeasibilityError& e) {
        throw FeasibilityError(t.str() + ": " + e.what());
      }
      if (bb.clamped) ++out.clamped_days;
      double q = bb.M;
      if (bb.rho > 0) {
        const double s = 1.0 / bb.rho - 1.0;
        q = beta_draw(rng, bb.M * s, (1 - bb.M) * s);
      }
      y = binomial_draw(rng, n, q);
    }
    out.Y.values[static_cast<std::size_t>(i)] = y;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Delay misspecification: shift the generating gamma mean by a whole-day
// offset, keep sd at 90% of the shifted mean and the same support.

inline DelayDistribution misspecify_delay(const DelayDistribution& pi,
                                          double mean_offset) {
  detail::require<ParameterError>(pi.has_gamma_params(),
                                  "delay has no gamma parameterization to shift");
  const double mean = pi.gamma_mean() + mean_offset;
  detail::require<ParameterError>(mean > 0, "shifted delay mean must be > 0");
  return discretized_gamma(mean, 0.9 * mean, pi.max_delay());
}

}  // namespace sevrate::sim

#endif  // SEVRATE_SIMULATE_HPP
