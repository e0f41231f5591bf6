#ifndef SEVRATE_TUNE_HPP
#define SEVRATE_TUNE_HPP

// Hyperparameter selection: structured K-fold cross-validation for lambda
// and smoothing windows, M-step forward validation for the real-time tail
// penalty, order tuning, and the MAE summary used by the experiment tables.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sevrate/core.hpp"
#include "sevrate/ratios.hpp"
#include "sevrate/solver.hpp"

namespace sevrate::tune {

enum class Rule { kMin, kOneSe };

inline const char* rule_name(Rule r) { return r == Rule::kMin ? "min" : "1se"; }

struct ValidationCurve {
  std::vector<double> values;        // candidate hyperparameters, increasing
  std::vector<double> mean_err;      // NaN where the candidate failed
  std::vector<double> se_err;        // NaN when not estimable
  std::vector<std::string> failures; // per-candidate error text, empty = ok
  std::int64_t idx_min = -1;
  std::int64_t idx_1se = -1;

  std::int64_t index(Rule r) const { return r == Rule::kMin ? idx_min : idx_1se; }
  double selected(Rule r) const { return values[static_cast<std::size_t>(index(r))]; }
};

namespace detail_tune {

// Min rule: lowest error, exact ties broken toward the larger (more
// regularized) candidate.  1se rule: largest candidate within one standard
// error of the minimum.
inline void finalize(ValidationCurve& vc) {
  const auto n = static_cast<std::int64_t>(vc.values.size());
  vc.idx_min = -1;
  for (std::int64_t i = 0; i < n; ++i) {
    if (std::isnan(vc.mean_err[static_cast<std::size_t>(i)])) continue;
    if (vc.idx_min < 0 || vc.mean_err[static_cast<std::size_t>(i)] <=
                              vc.mean_err[static_cast<std::size_t>(vc.idx_min)])
      vc.idx_min = i;
  }
  if (vc.idx_min < 0) {
    std::string msg = "all candidates failed:";
    for (std::size_t i = 0; i < vc.values.size(); ++i)
      if (!vc.failures[i].empty()) msg += "\n  [" + std::to_string(i) + "] " + vc.failures[i];
    throw TuningError(msg);
  }
  double se = vc.se_err[static_cast<std::size_t>(vc.idx_min)];
  if (std::isnan(se)) se = 0;
  const double thr = vc.mean_err[static_cast<std::size_t>(vc.idx_min)] + se;
  vc.idx_1se = vc.idx_min;
  for (std::int64_t i = n - 1; i > vc.idx_min; --i) {
    const double e = vc.mean_err[static_cast<std::size_t>(i)];
    if (!std::isnan(e) && e <= thr) {
      vc.idx_1se = i;
      break;
    }
  }
}

}  // namespace detail_tune

// Fold j holds the time indices congruent to j mod K.
inline std::vector<std::vector<std::int64_t>> cv_folds(std::int64_t n, int K) {
  detail::require<ParameterError>(K >= 2, "need at least 2 folds");
  detail::require<ParameterError>(static_cast<std::int64_t>(K) <= n,
                                  "more folds than time steps");
  std::vector<std::vector<std::int64_t>> folds(static_cast<std::size_t>(K));
  for (std::int64_t i = 0; i < n; ++i)
    folds[static_cast<std::size_t>(i % K)].push_back(i);
  return folds;
}

// ---------------------------------------------------------------------------
// Deconvolution lambda by structured K-fold CV: fit with the fold's days
// masked out of the loss, predict them by reconvolution, and average the
// per-fold MAEs.

inline ValidationCurve cv_curve_deconv(const CountSeries& X, const CountSeries& Y,
                                       const DelayDistribution& pi,
                                       const deconv::DeconvSpec& base,
                                       const std::vector<double>& lambdas, int K,
                                       const deconv::FitOptions& opt = {}) {
  detail::require<ParameterError>(!lambdas.empty(), "empty lambda grid");
  const auto folds = cv_folds(Y.size(), K);
  ConvolutionOperator A(X, pi, Y.origin, Y.size());
  ValidationCurve vc;
  vc.values = lambdas;
  vc.failures.assign(lambdas.size(), "");
  // warm-start each fold's solve from its solution at the previous lambda
  std::vector<std::vector<double>> warm(folds.size());
  for (double lam : lambdas) {
    std::vector<double> fold_mae;
    std::string fail;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      const auto& fold = folds[f];
      std::vector<std::uint8_t> mask(static_cast<std::size_t>(Y.size()), 1);
      for (auto i : fold) mask[static_cast<std::size_t>(i)] = 0;
      deconv::FitOptions o = opt;
      o.loss_mask = &mask;
      if (!warm[f].empty()) o.warm = &warm[f];
      deconv::DeconvSpec spec = base;
      spec.lambda = lam;
      try {
        const auto fit = deconv::solve(X, Y, pi, spec, o);
        warm[f] = fit.curve.p;
        std::vector<double> yhat(static_cast<std::size_t>(Y.size()));
        A.apply(fit.curve.p.data(), yhat.data());
        double s = 0;
        for (auto i : fold)
          s += std::abs(static_cast<double>(Y.values[static_cast<std::size_t>(i)]) -
                        yhat[static_cast<std::size_t>(i)]);
        fold_mae.push_back(s / static_cast<double>(fold.size()));
      } catch (const Error& e) {
        fail = e.what();
        break;
      }
    }
    if (!fail.empty()) {
      vc.mean_err.push_back(std::numeric_limits<double>::quiet_NaN());
      vc.se_err.push_back(std::numeric_limits<double>::quiet_NaN());
      vc.failures[vc.mean_err.size() - 1] = fail;
      continue;
    }
    vc.mean_err.push_back(mean_of(fold_mae));
    vc.se_err.push_back(fold_mae.size() > 1
                            ? sample_sd(fold_mae) / std::sqrt(double(fold_mae.size()))
                            : std::numeric_limits<double>::quiet_NaN());
  }
  detail_tune::finalize(vc);
  return vc;
}

// Oracle variant: per candidate, fit on all data and score the true MAE
// against the known severity curve at the evaluation dates.
inline ValidationCurve oracle_curve_deconv(const CountSeries& X, const CountSeries& Y,
                                           const DelayDistribution& pi,
                                           const deconv::DeconvSpec& base,
                                           const std::vector<double>& lambdas,
                                           const SeverityCurve& truth,
                                           const std::vector<Date>& eval_dates,
                                           const deconv::FitOptions& opt = {}) {
  detail::require<ParameterError>(!lambdas.empty(), "empty lambda grid");
  detail::require<ParameterError>(!eval_dates.empty(), "no evaluation dates");
  ValidationCurve vc;
  vc.values = lambdas;
  vc.failures.assign(lambdas.size(), "");
  std::vector<double> warm;
  for (double lam : lambdas) {
    deconv::DeconvSpec spec = base;
    spec.lambda = lam;
    deconv::FitOptions o = opt;
    if (!warm.empty()) o.warm = &warm;
    try {
      const auto fit = deconv::solve(X, Y, pi, spec, o);
      warm = fit.curve.p;
      double s = 0;
      for (Date t : eval_dates) s += std::abs(fit.curve.at(t) - truth.at(t));
      vc.mean_err.push_back(s / static_cast<double>(eval_dates.size()));
    } catch (const Error& e) {
      vc.mean_err.push_back(std::numeric_limits<double>::quiet_NaN());
      vc.failures[vc.mean_err.size() - 1] = e.what();
    }
    vc.se_err.push_back(std::numeric_limits<double>::quiet_NaN());
  }
  detail_tune::finalize(vc);
  return vc;
}

// ---------------------------------------------------------------------------
// Smoothing-window CV for the ratio baselines.  The held-out days are
// excluded from the secondary smoothing; days whose window then has no
// usable value borrow the nearest estimated day, so reconvolution never sees
// the held-out counts.

inline ValidationCurve cv_curve_ratio(const CountSeries& X, const CountSeries& Y,
                                      const DelayDistribution& pi,
                                      ratios::RatioMethod method,
                                      const std::vector<int>& windows, int K,
                                      int ell) {
  detail::require<ParameterError>(!windows.empty(), "empty window grid");
  const auto folds = cv_folds(Y.size(), K);
  ConvolutionOperator A(X, pi, Y.origin, Y.size());
  const int d = pi.max_delay();
  const Date p0 = Y.origin - d;
  const std::int64_t np = Y.size() + d;
  ValidationCurve vc;
  vc.failures.assign(windows.size(), "");
  for (int W : windows) {
    vc.values.push_back(static_cast<double>(W));
    std::vector<double> fold_mae;
    std::string fail;
    for (const auto& fold : folds) {
      std::vector<std::uint8_t> mask(static_cast<std::size_t>(Y.size()), 1);
      for (auto i : fold) mask[static_cast<std::size_t>(i)] = 0;
      try {
        const auto est = ratios::run_ratio(method, X, Y, pi, W, ell, &mask);
        // nearest-fill onto the full rate axis for reconvolution
        std::vector<double> p(static_cast<std::size_t>(np));
        bool any = false;
        for (std::int64_t i = 0; i < np; ++i) {
          const Date day = p0 + i;
          double best = std::numeric_limits<double>::quiet_NaN();
          std::int64_t bdist = -1;
          for (std::int64_t j = 0; j < est.curve.size(); ++j) {
            const double v = est.curve.p[static_cast<std::size_t>(j)];
            if (std::isnan(v)) continue;
            const std::int64_t dist = std::llabs((est.curve.origin + j) - day);
            if (bdist < 0 || dist < bdist) {
              bdist = dist;
              best = v;
            }
          }
          p[static_cast<std::size_t>(i)] = best;
          if (!std::isnan(best)) any = true;
        }
        detail::require<TuningError>(any, "no finite ratio estimates");
        std::vector<double> yhat(static_cast<std::size_t>(Y.size()));
        A.apply(p.data(), yhat.data());
        double s = 0;
        for (auto i : fold)
          s += std::abs(static_cast<double>(Y.values[static_cast<std::size_t>(i)]) -
                        yhat[static_cast<std::size_t>(i)]);
        fold_mae.push_back(s / static_cast<double>(fold.size()));
      } catch (const Error& e) {
        fail = e.what();
        break;
      }
    }
    if (!fail.empty()) {
      vc.mean_err.push_back(std::numeric_limits<double>::quiet_NaN());
      vc.se_err.push_back(std::numeric_limits<double>::quiet_NaN());
      vc.failures[vc.mean_err.size() - 1] = fail;
      continue;
    }
    vc.mean_err.push_back(mean_of(fold_mae));
    vc.se_err.push_back(fold_mae.size() > 1
                            ? sample_sd(fold_mae) / std::sqrt(double(fold_mae.size()))
                            : std::numeric_limits<double>::quiet_NaN());
  }
  detail_tune::finalize(vc);
  return vc;
}

// ---------------------------------------------------------------------------
// Forward validation for the real-time tail penalty: for each s in the last
// M days, fit through s, extrapolate one day linearly, reconvolve to predict
// Y_{s+1}, and score the absolute error.

inline ValidationCurve forward_curve_gamma(const CountSeries& X, const CountSeries& Y,
                                           const DelayDistribution& pi, int m,
                                           double lambda_star,
                                           const std::vector<double>& gammas, int M,
                                           const deconv::FitOptions& opt = {}) {
  detail::require<ParameterError>(!gammas.empty(), "empty gamma grid");
  detail::require<ParameterError>(M >= 1, "need at least one validation step");
  const std::int64_t n = Y.size();
  detail::require<TuningError>(n - M >= m + 3,
                               "series too short for forward validation");
  const int d = pi.max_delay();
  ValidationCurve vc;
  vc.values = gammas;
  vc.failures.assign(gammas.size(), "");
  // warm-start each step's solve from its solution at the previous gamma
  std::vector<std::vector<double>> warm(static_cast<std::size_t>(M));
  for (double gam : gammas) {
    std::vector<double> errs;
    std::string fail;
    for (std::int64_t s_idx = n - 1 - M; s_idx <= n - 2; ++s_idx) {
      const auto wi = static_cast<std::size_t>(s_idx - (n - 1 - M));
      CountSeries Ysub;
      Ysub.origin = Y.origin;
      Ysub.values.assign(Y.values.begin(), Y.values.begin() + (s_idx + 1));
      deconv::FitOptions o = opt;
      if (!warm[wi].empty()) o.warm = &warm[wi];
      try {
        const auto fit =
            deconv::solve_realtime(X, Ysub, pi, m, lambda_star, gam, o);
        warm[wi] = fit.curve.p;
        const Date s = Y.origin + s_idx;
        const double ps = fit.curve.at(s);
        const double ps1 = fit.curve.at(s - 1);
        const double pnext = std::clamp(2 * ps - ps1, 0.0, 1.0);
        const auto& mass = pi.pmf_at(s);
        double yhat = 0;
        for (int k = 0; k <= d; ++k) {
          const Date u = s + 1 - k;
          const double pv = (k == 0) ? pnext : fit.curve.at(u);
          yhat += static_cast<double>(X.at(u)) * mass[static_cast<std::size_t>(k)] * pv;
        }
        errs.push_back(std::abs(
            yhat - static_cast<double>(Y.values[static_cast<std::size_t>(s_idx + 1)])));
      } catch (const Error& e) {
        fail = e.what();
        break;
      }
    }
    if (!fail.empty()) {
      vc.mean_err.push_back(std::numeric_limits<double>::quiet_NaN());
      vc.se_err.push_back(std::numeric_limits<double>::quiet_NaN());
      vc.failures[vc.mean_err.size() - 1] = fail;
      continue;
    }
    vc.mean_err.push_back(mean_of(errs));
    vc.se_err.push_back(errs.size() > 1
                            ? sample_sd(errs) / std::sqrt(double(errs.size()))
                            : std::numeric_limits<double>::quiet_NaN());
  }
  detail_tune::finalize(vc);
  return vc;
}

// Two-stage tuning of (lambda, gamma) for the real-time estimator:
// lambda by structured CV at gamma = 0, then gamma by forward validation.
struct TwoStageResult {
  double lambda_star = 0;
  double gamma_star = 0;
  ValidationCurve lambda_curve;
  ValidationCurve gamma_curve;
};

inline TwoStageResult two_stage_tune(const CountSeries& X, const CountSeries& Y,
                                     const DelayDistribution& pi, int m,
                                     const std::vector<double>& lambdas,
                                     const std::vector<double>& gammas, int K, int M,
                                     Rule rule_lambda, Rule rule_gamma,
                                     const deconv::FitOptions& opt = {}) {
  TwoStageResult out;
  deconv::DeconvSpec base;
  base.m = m;
  base.gamma = 0;
  base.tail_constraint = true;
  out.lambda_curve = cv_curve_deconv(X, Y, pi, base, lambdas, K, opt);
  out.lambda_star = out.lambda_curve.selected(rule_lambda);
  out.gamma_curve =
      forward_curve_gamma(X, Y, pi, m, out.lambda_star, gammas, M, opt);
  out.gamma_star = out.gamma_curve.selected(rule_gamma);
  return out;
}

// ---------------------------------------------------------------------------
// Order tuning: run the lambda CV per order and keep the order whose
// selected candidate has the lowest error; ties go to the smallest order.

struct OrderSelection {
  int m_star = 0;
  double lambda_star = 0;
  std::vector<ValidationCurve> curves;  // one per order, in input order
};

inline OrderSelection tune_order(const CountSeries& X, const CountSeries& Y,
                                 const DelayDistribution& pi,
                                 const std::vector<int>& orders, int K, Rule rule,
                                 const deconv::FitOptions& opt = {},
                                 int n_lambda = 20) {
  detail::require<ParameterError>(!orders.empty(), "no orders to try");
  OrderSelection out;
  double best = std::numeric_limits<double>::infinity();
  for (int m : orders) {
    const double lmax = deconv::lambda_max_bound(X, Y, pi, m);
    const auto grid = log_grid(1e-4 * lmax, lmax, n_lambda);
    deconv::DeconvSpec base;
    base.m = m;
    auto vc = cv_curve_deconv(X, Y, pi, base, grid, K, opt);
    const double err = vc.mean_err[static_cast<std::size_t>(vc.idx_min)];
    if (err < best) {
      best = err;
      out.m_star = m;
      out.lambda_star = vc.selected(rule);
    }
    out.curves.push_back(std::move(vc));
  }
  return out;
}

// ---------------------------------------------------------------------------
// MAE summary across regions and replicates:
//   mean = (1/R) sum_r (1/I) sum_i MAE_{ri}
//   SE   = sqrt( (1/R^2) sum_r var_i(MAE_{ri}) / I )
// with r the region and i the replicate.

struct MaeCell {
  std::string method;
  std::string region;
  int replicate = 0;
  double mae = 0;
};

struct MaeSummaryRow {
  std::string method;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();  // NaN when I == 1
};

inline std::vector<MaeSummaryRow> mae_report(const std::vector<MaeCell>& cells) {
  std::vector<std::string> methods;
  for (const auto& c : cells)
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end())
      methods.push_back(c.method);
  std::vector<MaeSummaryRow> rows;
  for (const auto& method : methods) {
    std::map<std::string, std::vector<double>> by_region;
    for (const auto& c : cells)
      if (c.method == method) by_region[c.region].push_back(c.mae);
    std::size_t I = 0;
    for (const auto& [region, v] : by_region) {
      if (I == 0) I = v.size();
      detail::require<DimensionError>(v.size() == I,
                                      "ragged replicate count for region " + region);
    }
    detail::require<DimensionError>(I > 0, "no cells for method " + method);
    const double R = static_cast<double>(by_region.size());
    MaeSummaryRow row;
    row.method = method;
    double mean = 0, var_acc = 0;
    bool have_se = I > 1;
    for (const auto& [region, v] : by_region) {
      mean += mean_of(v) / R;
      if (have_se) var_acc += sample_variance(v) / static_cast<double>(I);
    }
    row.mean = mean;
    if (have_se) row.se = std::sqrt(var_acc / (R * R));
    rows.push_back(row);
  }
  return rows;
}

inline double pct_improvement(double baseline, double method) {
  detail::require<ParameterError>(baseline > 0, "baseline MAE must be > 0");
  return 100.0 * (baseline - method) / baseline;
}

// Mean absolute error of an estimate against the truth at given dates.
// NaN estimates are skipped but capped: more than 20% missing is an error.
inline double mae_against_truth(const SeverityCurve& est, const SeverityCurve& truth,
                                const std::vector<Date>& eval_dates) {
  detail::require<ParameterError>(!eval_dates.empty(), "no evaluation dates");
  double s = 0;
  std::int64_t used = 0, missing = 0;
  for (Date t : eval_dates) {
    const double e = est.covers(t) ? est.at(t) : std::numeric_limits<double>::quiet_NaN();
    if (std::isnan(e)) {
      ++missing;
      continue;
    }
    s += std::abs(e - truth.at(t));
    ++used;
  }
  detail::require<ValidationError>(
      missing * 5 <= static_cast<std::int64_t>(eval_dates.size()),
      "estimate missing at more than 20% of evaluation dates");
  return s / static_cast<double>(used);
}

}  // namespace sevrate::tune

#endif  // SEVRATE_TUNE_HPP
