#ifndef SEVRATE_EXPERIMENT_HPP
#define SEVRATE_EXPERIMENT_HPP

// Experiment driver: synthetic regions, region x replicate cells, per-cell
// tuning and estimation for the deconvolution and ratio methods, MAE
// summaries, misspecification sweeps, and a reproducibility manifest.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sevrate/clean.hpp"
#include "sevrate/core.hpp"
#include "sevrate/csv.hpp"
#include "sevrate/ratios.hpp"
#include "sevrate/rng.hpp"
#include "sevrate/simulate.hpp"
#include "sevrate/solver.hpp"
#include "sevrate/tune.hpp"

namespace sevrate::exp {

constexpr const char* kVersion = "1.0.0";

struct RegionSpec {
  std::string name;
  double scale = 1000;  // peak primary incidence
  double bb_beta = 4;   // beta-binomial dispersion multiplier
};

struct ExperimentConfig {
  std::string out_dir;
  std::string mode = "retrospective";      // retrospective | realtime
  std::string noise = "poisson-binomial";  // poisson-binomial | beta-binomial
  std::vector<RegionSpec> regions;         // empty -> large/medium/small defaults
  int replicates = 10;
  std::uint64_t seed = 1;
  int days = 720;           // secondary series length
  double delay_mean = 13;   // generating gamma mean; sd = 0.9 * mean
  int d_max = 45;
  int m = 0;                // trend order
  int K = 5;
  int M = 28;
  int cadence = 7;          // days between evaluation dates
  int burn = -1;            // -1 -> d_max + 28
  // per-method selection rules; each method keeps whichever of min/1se
  // validates strongest, and these defaults record that choice
  std::string rule_deconv = "min";
  std::string rule_lambda_rt = "min";
  std::string rule_gamma = "1se";
  std::string rule_ratio = "1se";
  std::string delay_source = "fixed";  // fixed | scan
  bool oracle = false;                 // add an oracle-tuned deconvolution pass
  std::vector<double> offsets;         // delay-mean offsets (sweep-misspec)
  int retune_every = 7;                // realtime: evaluation steps between retunes
  double tune_tol = 1e-5;
  int tune_iters = 4000;
  double fit_tol = 1e-7;
  int fit_iters = 20000;
  int n_lambda = 20;
  int n_gamma = 10;
  std::vector<int> windows = {1, 7, 14, 21, 28};
  std::map<std::string, std::string> manifest_kv;  // effective config as text
};

inline std::vector<RegionSpec> default_regions() {
  return {{"large", 20000, 6.0}, {"medium", 600, 4.0}, {"small", 50, 2.5}};
}

inline tune::Rule parse_rule(const std::string& s) {
  if (s == "min") return tune::Rule::kMin;
  if (s == "1se") return tune::Rule::kOneSe;
  throw ParameterError("unknown rule '" + s + "' (want min or 1se)");
}

// ---------------------------------------------------------------------------
// Synthetic ground truth: a two-wave primary curve and a severity curve from
// four variant eras blended by logistic transitions.

struct SyntheticRegion {
  CountSeries X;
  SeverityCurve truth;
};

inline SyntheticRegion make_region(const RegionSpec& spec, Date y_origin, int days,
                                   int d, int pad) {
  SyntheticRegion out;
  const Date x0 = y_origin - d - pad;
  const std::int64_t n = days + d + pad;
  out.X.origin = x0;
  out.X.values.resize(static_cast<std::size_t>(n));
  // several epidemic waves; the sharp high wave rides on top of the last
  // severity transition, which is where timing bias hurts ratio estimators
  const double centers[5] = {0.12, 0.32, 0.55, 0.74, 0.92};
  const double widths[5] = {0.050, 0.050, 0.045, 0.035, 0.060};
  const double amps[5] = {0.50, 0.35, 0.55, 1.00, 0.45};
  for (std::int64_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i);
    double w = 0.08;
    for (int j = 0; j < 5; ++j) {
      const double c = centers[j] * static_cast<double>(n);
      const double s = widths[j] * static_cast<double>(n);
      w += amps[j] * std::exp(-0.5 * (t - c) * (t - c) / (s * s));
    }
    out.X.values[static_cast<std::size_t>(i)] =
        std::max<std::int64_t>(1, std::llround(spec.scale * w));
  }
  // four variant eras with long plateaus and fairly quick handoffs; logistic
  // transitions telescope so the proportions sum to exactly one
  const double sev[4] = {0.17, 0.18, 0.21, 0.055};
  const double tau[3] = {0.30 * static_cast<double>(n), 0.48 * static_cast<double>(n),
                         0.70 * static_cast<double>(n)};
  const double slope = std::max(4.0, 0.011 * static_cast<double>(n));
  std::vector<sim::VariantProfile> profiles(4);
  for (int v = 0; v < 4; ++v) {
    profiles[static_cast<std::size_t>(v)].name = "v" + std::to_string(v + 1);
    profiles[static_cast<std::size_t>(v)].severity = sev[v];
    profiles[static_cast<std::size_t>(v)].proportions.origin = x0;
    profiles[static_cast<std::size_t>(v)].proportions.values.resize(
        static_cast<std::size_t>(n));
  }
  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  for (std::int64_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i);
    double edge[5];
    edge[0] = 1.0;
    for (int v = 0; v < 3; ++v) edge[v + 1] = sig((t - tau[v]) / slope);
    edge[4] = 0.0;
    for (int v = 0; v < 4; ++v)
      profiles[static_cast<std::size_t>(v)].proportions.values[static_cast<std::size_t>(i)] =
          std::clamp(edge[v] - edge[v + 1], 0.0, 1.0);
    // renormalize away clamp dust so the mixture check holds exactly
    double s = 0;
    for (int v = 0; v < 4; ++v)
      s += profiles[static_cast<std::size_t>(v)].proportions.values[static_cast<std::size_t>(i)];
    for (int v = 0; v < 4; ++v)
      profiles[static_cast<std::size_t>(v)].proportions.values[static_cast<std::size_t>(i)] /= s;
  }
  out.truth = sim::variant_hfr_curve(profiles);
  return out;
}

// ---------------------------------------------------------------------------
// Result containers.

struct MisspecRow {
  double offset = 0;
  std::string method;
  double mean_mae = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
};

struct ExperimentResult {
  std::vector<tune::MaeSummaryRow> summary;
  std::vector<MisspecRow> misspec;
  std::vector<std::string> failures;  // "region,replicate,method: error"
  std::string out_dir;
};

namespace detail_exp {

struct ParamRow {
  std::string region;
  int replicate;
  std::string method;
  std::string param;
  std::string value;
};

struct CellData {
  std::vector<io::EstimateRow> rows;
  std::vector<ParamRow> params;
  std::map<std::string, double> mae;  // per method
  std::vector<std::string> failures;
};

inline std::string dec_name(int m) { return "deconv-" + std::to_string(m); }

// Evaluation dates shared by every method of a mode.
inline std::vector<Date> eval_dates(Date y0, int days, int burn, int cadence,
                                    bool realtime, int M, int d) {
  std::vector<Date> out;
  std::int64_t first = burn;
  if (realtime) first = std::max<std::int64_t>(first, M + d + 10);
  const std::int64_t last = realtime ? days - 1 : days - 1 - burn;
  for (std::int64_t i = first; i <= last; i += cadence) out.push_back(y0 + i);
  detail::require<ParameterError>(!out.empty(),
                                  "no evaluation dates: series too short for burn");
  return out;
}

inline double estimate_at(const ratios::RatioResult& r, Date t, int* clip) {
  if (!r.curve.covers(t)) {
    *clip = 0;
    return std::numeric_limits<double>::quiet_NaN();
  }
  *clip = r.clipped[static_cast<std::size_t>(t - r.curve.origin)];
  return r.curve.at(t);
}

// One retrospective cell: simulate, tune each method by CV, estimate, score.
inline CellData run_retro_cell(const ExperimentConfig& cfg, const RegionSpec& region,
                               int rep, const SyntheticRegion& syn,
                               const DelayDistribution& pi_true,
                               const DelayDistribution& pi_hat,
                               const std::vector<Date>& evals) {
  CellData cell;
  const Date y0 = syn.X.origin + (syn.X.size() - cfg.days);
  const std::uint64_t cell_seed =
      derive_seed(cfg.seed, {hash_tag(region.name), static_cast<std::uint64_t>(rep),
                             hash_tag("sim")});
  CountSeries Y;
  if (cfg.noise == "beta-binomial") {
    auto s = sim::sample_beta_binomial(syn.X, pi_true, syn.truth, region.bb_beta, y0,
                                       cfg.days, cell_seed);
    Y = std::move(s.Y);
  } else {
    Y = sim::sample_poisson_binomial(syn.X, pi_true, syn.truth, y0, cfg.days,
                                     cell_seed);
  }

  deconv::FitOptions tune_opt, fit_opt;
  tune_opt.tol = cfg.tune_tol;
  tune_opt.max_iter = cfg.tune_iters;
  fit_opt.tol = cfg.fit_tol;
  fit_opt.max_iter = cfg.fit_iters;
  const int ell = lag_from_delay(pi_hat);
  const std::string dec = dec_name(cfg.m);

  // deconvolution, CV-tuned
  try {
    const double lmax = deconv::lambda_max_bound(syn.X, Y, pi_hat, cfg.m);
    const auto grid = log_grid(1e-4 * lmax, lmax, cfg.n_lambda);
    deconv::DeconvSpec base;
    base.m = cfg.m;
    const auto vc = tune::cv_curve_deconv(syn.X, Y, pi_hat, base, grid, cfg.K, tune_opt);
    const double lam = vc.selected(parse_rule(cfg.rule_deconv));
    deconv::DeconvSpec spec = base;
    spec.lambda = lam;
    const auto fit = deconv::solve(syn.X, Y, pi_hat, spec, fit_opt);
    for (Date t : evals)
      cell.rows.push_back({t, dec, fit.curve.at(t), 0});
    cell.mae[dec] = tune::mae_against_truth(fit.curve, syn.truth, evals);
    cell.params.push_back({region.name, rep, dec, "lambda", io::fmt_g(lam)});
    cell.params.push_back({region.name, rep, dec, "lambda_max", io::fmt_g(lmax)});
    cell.params.push_back({region.name, rep, dec, "rule", cfg.rule_deconv});
  } catch (const Error& e) {
    cell.failures.push_back(region.name + "," + std::to_string(rep) + "," + dec +
                            ": " + e.what());
  }

  // deconvolution, oracle-tuned (true-MAE minimizing lambda)
  if (cfg.oracle) {
    const std::string name = dec + "-oracle";
    try {
      const double lmax = deconv::lambda_max_bound(syn.X, Y, pi_hat, cfg.m);
      const auto grid = log_grid(1e-4 * lmax, lmax, cfg.n_lambda);
      deconv::DeconvSpec base;
      base.m = cfg.m;
      const auto vc = tune::oracle_curve_deconv(syn.X, Y, pi_hat, base, grid,
                                                syn.truth, evals, fit_opt);
      const double lam = vc.selected(tune::Rule::kMin);
      deconv::DeconvSpec spec = base;
      spec.lambda = lam;
      const auto fit = deconv::solve(syn.X, Y, pi_hat, spec, fit_opt);
      for (Date t : evals)
        cell.rows.push_back({t, name, fit.curve.at(t), 0});
      cell.mae[name] = tune::mae_against_truth(fit.curve, syn.truth, evals);
      cell.params.push_back({region.name, rep, name, "lambda", io::fmt_g(lam)});
      cell.params.push_back({region.name, rep, name, "rule", "oracle-min"});
    } catch (const Error& e) {
      cell.failures.push_back(region.name + "," + std::to_string(rep) + "," + name +
                              ": " + e.what());
    }
  }

  // ratio baselines, window CV-tuned
  const std::pair<ratios::RatioMethod, std::string> ratio_methods[] = {
      {ratios::RatioMethod::kConvRetro, "conv-retro"},
      {ratios::RatioMethod::kLaggedRetro, "lagged-retro"},
  };
  for (const auto& [method, name] : ratio_methods) {
    try {
      const auto vc =
          tune::cv_curve_ratio(syn.X, Y, pi_hat, method, cfg.windows, cfg.K, ell);
      const int W = static_cast<int>(vc.selected(parse_rule(cfg.rule_ratio)));
      const auto est = ratios::run_ratio(method, syn.X, Y, pi_hat, W, ell);
      for (Date t : evals) {
        int clip = 0;
        const double v = estimate_at(est, t, &clip);
        cell.rows.push_back({t, name, v, clip});
      }
      cell.mae[name] = tune::mae_against_truth(est.curve, syn.truth, evals);
      cell.params.push_back({region.name, rep, name, "window", std::to_string(W)});
      cell.params.push_back({region.name, rep, name, "lag", std::to_string(ell)});
      cell.params.push_back({region.name, rep, name, "rule", cfg.rule_ratio});
    } catch (const Error& e) {
      cell.failures.push_back(region.name + "," + std::to_string(rep) + "," + name +
                              ": " + e.what());
    }
  }
  return cell;
}

// One real-time cell: at each evaluation date, fit using only data through
// that date.  The two-stage deconvolution tuning is refreshed every
// retune_every evaluation steps; ratio windows are re-tuned each date.
inline CellData run_rt_cell(const ExperimentConfig& cfg, const RegionSpec& region,
                            int rep, const SyntheticRegion& syn,
                            const DelayDistribution& pi_true,
                            const DelayDistribution& pi_hat,
                            const std::vector<Date>& evals) {
  CellData cell;
  const Date y0 = syn.X.origin + (syn.X.size() - cfg.days);
  const std::uint64_t cell_seed =
      derive_seed(cfg.seed, {hash_tag(region.name), static_cast<std::uint64_t>(rep),
                             hash_tag("sim")});
  CountSeries Y;
  if (cfg.noise == "beta-binomial") {
    auto s = sim::sample_beta_binomial(syn.X, pi_true, syn.truth, region.bb_beta, y0,
                                       cfg.days, cell_seed);
    Y = std::move(s.Y);
  } else {
    Y = sim::sample_poisson_binomial(syn.X, pi_true, syn.truth, y0, cfg.days,
                                     cell_seed);
  }

  deconv::FitOptions tune_opt, fit_opt;
  tune_opt.tol = cfg.tune_tol;
  tune_opt.max_iter = cfg.tune_iters;
  fit_opt.tol = cfg.fit_tol;
  fit_opt.max_iter = cfg.fit_iters;
  const int ell = lag_from_delay(pi_hat);
  const std::string dec = dec_name(cfg.m);
  const auto gamma_grid = log_grid(1e-2, 1e4, cfg.n_gamma);

  bool dec_dead = false, conv_dead = false, lag_dead = false;
  double lam_star = 0, gam_star = 0;
  std::vector<double> dec_err, conv_err, lag_err;
  std::vector<double> truth_at;
  for (std::size_t e = 0; e < evals.size(); ++e) {
    const Date t = evals[e];
    CountSeries Ysub;
    Ysub.origin = y0;
    Ysub.values.assign(Y.values.begin(), Y.values.begin() + ((t - y0) + 1));
    truth_at.push_back(syn.truth.at(t));

    if (!dec_dead) {
      try {
        if (e % static_cast<std::size_t>(cfg.retune_every) == 0) {
          const double lmax = deconv::lambda_max_bound(syn.X, Ysub, pi_hat, cfg.m);
          const auto grid = log_grid(1e-4 * lmax, lmax, cfg.n_lambda);
          const auto ts = tune::two_stage_tune(
              syn.X, Ysub, pi_hat, cfg.m, grid, gamma_grid, cfg.K, cfg.M,
              parse_rule(cfg.rule_lambda_rt), parse_rule(cfg.rule_gamma), tune_opt);
          lam_star = ts.lambda_star;
          gam_star = ts.gamma_star;
          cell.params.push_back({region.name, rep, dec, "lambda@" + t.str(),
                                 io::fmt_g(lam_star)});
          cell.params.push_back({region.name, rep, dec, "gamma@" + t.str(),
                                 io::fmt_g(gam_star)});
        }
        const auto fit =
            deconv::solve_realtime(syn.X, Ysub, pi_hat, cfg.m, lam_star, gam_star, fit_opt);
        const double v = fit.curve.at(t);
        cell.rows.push_back({t, dec, v, 0});
        dec_err.push_back(std::abs(v - truth_at.back()));
      } catch (const Error& e2) {
        cell.failures.push_back(region.name + "," + std::to_string(rep) + "," + dec +
                                ": " + e2.what());
        dec_dead = true;
      }
    }

    const std::pair<ratios::RatioMethod, std::string> ratio_methods[] = {
        {ratios::RatioMethod::kConvRealtime, "conv-rt"},
        {ratios::RatioMethod::kLaggedRealtime, "lagged-rt"},
    };
    for (const auto& [method, name] : ratio_methods) {
      bool& dead = (method == ratios::RatioMethod::kConvRealtime) ? conv_dead : lag_dead;
      if (dead) continue;
      try {
        const auto vc =
            tune::cv_curve_ratio(syn.X, Ysub, pi_hat, method, cfg.windows, cfg.K, ell);
        const int W = static_cast<int>(vc.selected(parse_rule(cfg.rule_ratio)));
        const auto est = ratios::run_ratio(method, syn.X, Ysub, pi_hat, W, ell);
        int clip = 0;
        const double v = estimate_at(est, t, &clip);
        cell.rows.push_back({t, name, v, clip});
        auto& errs = (method == ratios::RatioMethod::kConvRealtime) ? conv_err : lag_err;
        if (!std::isnan(v)) errs.push_back(std::abs(v - truth_at.back()));
        if (e + 1 == evals.size())
          cell.params.push_back({region.name, rep, name, "window@" + t.str(),
                                 std::to_string(W)});
      } catch (const Error& e2) {
        cell.failures.push_back(region.name + "," + std::to_string(rep) + "," + name +
                                ": " + e2.what());
        dead = true;
      }
    }
  }
  const auto finish = [&](bool dead, const std::vector<double>& errs,
                          const std::string& name) {
    if (dead) return;
    if (errs.size() * 5 < evals.size() * 4) {
      cell.failures.push_back(region.name + "," + std::to_string(rep) + "," + name +
                              ": estimates missing at more than 20% of dates");
      return;
    }
    cell.mae[name] = mean_of(errs);
  };
  finish(dec_dead, dec_err, dec);
  finish(conv_dead, conv_err, "conv-rt");
  finish(lag_dead, lag_err, "lagged-rt");
  return cell;
}

inline void write_manifest(const ExperimentConfig& cfg, const std::string& path,
                           std::size_t n_failures) {
  std::ofstream out(path);
  detail::require<ValidationError>(out.good(), "cannot write " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : cfg.manifest_kv) {
    for (unsigned char c : k + "=" + v + "\n") {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  }
  out << "artifact_version=" << kVersion << '\n';
  out << "compiler=" << __VERSION__ << '\n';
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  out << "config_hash=" << hex << '\n';
  out << "failures=" << n_failures << '\n';
  for (const auto& [k, v] : cfg.manifest_kv) out << k << '=' << v << '\n';
}

}  // namespace detail_exp

// ---------------------------------------------------------------------------
// Delay-mean scan: integer lag in [lo, hi] maximizing the Pearson correlation
// between X_t and Y_{t+lag}.

inline int delay_mean_scan(const CountSeries& X, const CountSeries& Y, int lo = 0,
                           int hi = 45) {
  detail::require<ParameterError>(lo >= 0 && hi >= lo, "bad lag range");
  int best_lag = -1;
  double best_corr = -2;
  bool any_pairs = false;
  for (int lag = lo; lag <= hi; ++lag) {
    const Date a = std::max(X.origin, Y.origin - lag);
    const Date b = std::min(X.origin + (X.size() - 1), Y.origin + (Y.size() - 1) - lag);
    if (b - a + 1 < 90) continue;
    any_pairs = true;
    std::vector<double> xs, ys;
    for (Date t = a; t <= b; t = t + 1) {
      xs.push_back(static_cast<double>(X.at(t)));
      ys.push_back(static_cast<double>(Y.at(t + lag)));
    }
    double c;
    try {
      c = pearson(xs, ys);
    } catch (const Error&) {
      continue;  // constant slice at this lag
    }
    if (c > best_corr) {
      best_corr = c;
      best_lag = lag;
    }
  }
  detail::require<ValidationError>(any_pairs, "series overlap below 90 days");
  detail::require<ValidationError>(best_lag >= 0,
                                   "correlation undefined at every lag (constant series)");
  return best_lag;
}

// ---------------------------------------------------------------------------
// Full experiment.

inline ExperimentResult run_experiment(ExperimentConfig cfg) {
  namespace fs = std::filesystem;
  detail::require<ParameterError>(!cfg.out_dir.empty(), "output directory required");
  detail::require<ParameterError>(
      cfg.mode == "retrospective" || cfg.mode == "realtime",
      "mode must be retrospective or realtime");
  detail::require<ParameterError>(
      cfg.noise == "poisson-binomial" || cfg.noise == "beta-binomial",
      "noise must be poisson-binomial or beta-binomial");
  detail::require<ParameterError>(cfg.cadence >= 1, "cadence must be >= 1");
  detail::require<ParameterError>(cfg.replicates >= 1, "need replicates >= 1");
  if (cfg.regions.empty()) cfg.regions = default_regions();
  const int d = cfg.d_max;
  if (cfg.burn < 0) cfg.burn = d + 28;
  const bool realtime = cfg.mode == "realtime";
  const int pad = 28;

  fs::create_directories(cfg.out_dir);
  fs::create_directories(cfg.out_dir + "/estimates");
  fs::create_directories(cfg.out_dir + "/truth");

  const Date y0 = Date::parse("2021-01-01");
  const DelayDistribution pi_true =
      discretized_gamma(cfg.delay_mean, 0.9 * cfg.delay_mean, d);
  const auto evals = detail_exp::eval_dates(y0, cfg.days, cfg.burn, cfg.cadence,
                                            realtime, cfg.M, d);

  // misspecification sweep = the base experiment repeated per offset with a
  // shifted estimation delay; an empty offsets list is the single run at 0
  std::vector<double> offsets = cfg.offsets;
  const bool sweeping = !offsets.empty();
  if (!sweeping) offsets.push_back(0);

  ExperimentResult result;
  result.out_dir = cfg.out_dir;
  std::vector<detail_exp::ParamRow> params;
  std::vector<io::EstimateRow> all_rows;  // only for the non-sweep run

  for (double off : offsets) {
    const DelayDistribution pi_hat =
        (off == 0) ? pi_true : sim::misspecify_delay(pi_true, off);
    std::vector<tune::MaeCell> cells;
    for (const auto& region : cfg.regions) {
      const auto syn = make_region(region, y0, cfg.days, d, pad);
      if (!sweeping)
        io::write_rate_csv(cfg.out_dir + "/truth/" + region.name + ".csv", syn.truth);
      for (int rep = 0; rep < cfg.replicates; ++rep) {
        DelayDistribution pi_cell = pi_hat;
        detail_exp::CellData cell;
        try {
          cell = realtime
                     ? detail_exp::run_rt_cell(cfg, region, rep, syn, pi_true,
                                               pi_cell, evals)
                     : detail_exp::run_retro_cell(cfg, region, rep, syn, pi_true,
                                                  pi_cell, evals);
        } catch (const Error& e) {
          cell.failures.push_back(region.name + "," + std::to_string(rep) +
                                  ",<cell>: " + e.what());
        }
        for (const auto& f : cell.failures) result.failures.push_back(f);
        for (const auto& [method, mae] : cell.mae)
          cells.push_back({method, region.name, rep, mae});
        if (!sweeping) {
          io::write_estimates_csv(cfg.out_dir + "/estimates/" + region.name +
                                      "_rep" + std::to_string(rep) + ".csv",
                                  cell.rows);
          for (auto& pr : cell.params) params.push_back(pr);
        }
      }
    }
    // summarize this offset
    std::vector<std::string> methods;
    for (const auto& c : cells)
      if (std::find(methods.begin(), methods.end(), c.method) == methods.end())
        methods.push_back(c.method);
    std::sort(methods.begin(), methods.end());
    for (const auto& method : methods) {
      std::vector<tune::MaeCell> sub;
      for (const auto& c : cells)
        if (c.method == method) sub.push_back(c);
      tune::MaeSummaryRow row;
      row.method = method;
      try {
        row = tune::mae_report(sub).front();
      } catch (const Error& e) {
        result.failures.push_back("summary," + method + ": " + e.what());
      }
      if (sweeping) {
        result.misspec.push_back({off, method, row.mean, row.se});
      } else {
        result.summary.push_back(row);
      }
    }
  }

  // emit tables
  if (sweeping) {
    std::ofstream out(cfg.out_dir + "/misspec.csv");
    out << "offset,method,mae_x1000,se_x1000\n";
    for (const auto& r : result.misspec)
      out << io::fmt_g(r.offset) << ',' << r.method << ','
          << io::fmt_g(1000 * r.mean_mae) << ',' << io::fmt_g(1000 * r.se) << '\n';
  } else {
    const std::string conv_base = realtime ? "conv-rt" : "conv-retro";
    const std::string lag_base = realtime ? "lagged-rt" : "lagged-retro";
    double conv_mae = std::numeric_limits<double>::quiet_NaN();
    double lag_mae = std::numeric_limits<double>::quiet_NaN();
    for (const auto& r : result.summary) {
      if (r.method == conv_base) conv_mae = r.mean;
      if (r.method == lag_base) lag_mae = r.mean;
    }
    std::ofstream out(cfg.out_dir + "/summary.csv");
    out << "method,mae_x1000,se_x1000,impr_vs_conv_pct,impr_vs_lagged_pct\n";
    for (const auto& r : result.summary) {
      out << r.method << ',' << io::fmt_g(1000 * r.mean) << ','
          << io::fmt_g(1000 * r.se) << ',';
      out << ((!std::isnan(conv_mae) && conv_mae > 0)
                  ? io::fmt_g(tune::pct_improvement(conv_mae, r.mean))
                  : "NA");
      out << ',';
      out << ((!std::isnan(lag_mae) && lag_mae > 0)
                  ? io::fmt_g(tune::pct_improvement(lag_mae, r.mean))
                  : "NA");
      out << '\n';
    }
    std::ofstream pc(cfg.out_dir + "/cells.csv");
    pc << "region,replicate,method,parameter,value\n";
    for (const auto& p : params)
      pc << p.region << ',' << p.replicate << ',' << p.method << ',' << p.param
         << ',' << p.value << '\n';
  }
  {
    std::ofstream fo(cfg.out_dir + "/failures.csv");
    fo << "region,replicate,method,error\n";
    for (const auto& f : result.failures) {
      std::string line = f;
      const auto pos = line.find(": ");
      if (pos != std::string::npos) {
        std::string err = line.substr(pos + 2);
        for (char& c : err)
          if (c == ',' || c == '\n') c = ';';
        line = line.substr(0, pos) + "," + err;
      }
      fo << line << '\n';
    }
  }
  detail_exp::write_manifest(cfg, cfg.out_dir + "/manifest.txt",
                             result.failures.size());
  return result;
}

// Validation-curve CSV used by the tune subcommand.
inline void write_validation_csv(const std::string& path,
                                 const tune::ValidationCurve& vc) {
  std::ofstream out(path);
  detail::require<ValidationError>(out.good(), "cannot write " + path);
  out << "value,mean_err,se_err,selected_min,selected_1se\n";
  for (std::size_t i = 0; i < vc.values.size(); ++i)
    out << io::fmt_g(vc.values[i]) << ',' << io::fmt_g(vc.mean_err[i]) << ','
        << io::fmt_g(vc.se_err[i]) << ','
        << (static_cast<std::int64_t>(i) == vc.idx_min ? 1 : 0) << ','
        << (static_cast<std::int64_t>(i) == vc.idx_1se ? 1 : 0) << '\n';
}

}  // namespace sevrate::exp

#endif  // SEVRATE_EXPERIMENT_HPP
