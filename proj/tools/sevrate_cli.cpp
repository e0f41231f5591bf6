// sevrate: severity-rate estimation from aggregate incidence streams.
//
// Subcommands: simulate, clean, fit, tune, evaluate, sweep-misspec.
// Each is usable standalone; evaluate/sweep-misspec drive full experiments.

#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sevrate/sevrate.hpp"

using namespace sevrate;

namespace {

DelayDistribution make_delay(double mean, double sd, int d_max) {
  if (sd <= 0) sd = 0.9 * mean;
  return discretized_gamma(mean, sd, d_max);
}

std::map<std::string, double> parse_kv_doubles(const std::string& s) {
  std::map<std::string, double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto eq = tok.find('=');
    detail::require<ParameterError>(eq != std::string::npos,
                                    "expected name=value, got '" + tok + "'");
    out[tok.substr(0, eq)] = std::stod(tok.substr(eq + 1));
  }
  return out;
}

std::vector<exp::RegionSpec> parse_regions(const std::string& s) {
  std::vector<exp::RegionSpec> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::stringstream ts(tok);
    std::string name, scale, beta;
    detail::require<ParameterError>(
        std::getline(ts, name, ':') && std::getline(ts, scale, ':'),
        "expected name:scale[:bb_beta], got '" + tok + "'");
    exp::RegionSpec r;
    r.name = name;
    r.scale = std::stod(scale);
    if (std::getline(ts, beta, ':')) r.bb_beta = std::stod(beta);
    out.push_back(r);
  }
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += io::fmt_g(v[i]);
  }
  return s;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string primary, truth, variants, severities, out, truth_out;
  std::string noise = "poisson-binomial";
  double delay_mean = 13, delay_sd = -1, bb_beta = 4;
  int d_max = 45;
  std::uint64_t seed = 1;
};

int cmd_simulate(const SimulateArgs& a) {
  const auto X = io::read_count_csv(a.primary);
  const auto pi = make_delay(a.delay_mean, a.delay_sd, a.d_max);
  SeverityCurve truth;
  if (!a.truth.empty()) {
    const auto r = io::read_rate_csv(a.truth);
    truth = SeverityCurve::checked(r.origin, r.p);  // reject NaN entries
  } else {
    detail::require<ParameterError>(!a.variants.empty(),
                                    "need --truth or --variants");
    const auto tables = io::read_variant_csv(a.variants);
    const auto sev = parse_kv_doubles(a.severities);
    std::vector<sim::VariantProfile> profiles;
    for (const auto& [name, series] : tables) {
      const auto it = sev.find(name);
      detail::require<ParameterError>(it != sev.end(),
                                      "no severity given for variant " + name);
      profiles.push_back({name, it->second, series});
    }
    truth = sim::variant_hfr_curve(profiles);
  }
  const Date y0 = X.origin + a.d_max;
  const std::int64_t n_y = X.size() - a.d_max;
  detail::require<ParameterError>(n_y >= 1, "primary series shorter than d_max");
  CountSeries Y;
  if (a.noise == "beta-binomial") {
    auto s = sim::sample_beta_binomial(X, pi, truth, a.bb_beta, y0, n_y, a.seed);
    if (s.clamped_days > 0)
      std::cerr << "note: rho clamped to 0 on " << s.clamped_days << " day(s)\n";
    Y = std::move(s.Y);
  } else {
    detail::require<ParameterError>(a.noise == "poisson-binomial",
                                    "unknown noise model " + a.noise);
    Y = sim::sample_poisson_binomial(X, pi, truth, y0, n_y, a.seed);
  }
  io::write_count_csv(a.out, Y);
  if (!a.truth_out.empty()) io::write_rate_csv(a.truth_out, truth);
  return 0;
}

// ---------------------------------------------------------------------------

struct CleanArgs {
  std::string in, out;
  std::string op = "pipeline";
  std::uint64_t seed = 1;
  int window = 15;
  double iqr_mult = 3.0;
};

int cmd_clean(const CleanArgs& a) {
  const auto Y = io::read_count_csv(a.in, /*allow_negative=*/true);
  CountSeries out;
  if (a.op == "pipeline") {
    out = clean::clean_pipeline(Y, a.seed, a.window, a.iqr_mult);
  } else if (a.op == "dumps") {
    out = clean::redistribute_dumps(Y, a.seed);
  } else if (a.op == "negatives") {
    out = clean::redistribute_negatives(Y, a.seed);
  } else if (a.op == "truncate") {
    const auto r = clean::outlier_truncate(Y, a.window, a.iqr_mult);
    std::cerr << "note: " << r.n_truncated << " value(s) truncated, total change "
              << r.total_change << "\n";
    out = r.series;
  } else if (a.op == "deweekify") {
    out = clean::deweekify(Y, a.seed, a.window, a.iqr_mult);
  } else if (a.op == "impute") {
    out = clean::impute_daily(Y, a.seed);
  } else {
    throw ParameterError("unknown clean op " + a.op);
  }
  io::write_count_csv(a.out, out);
  return 0;
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string primary, secondary, out;
  std::string method = "deconv";
  double delay_mean = 13, delay_sd = -1;
  bool scan_delay = false;
  int d_max = 45;
  int m = 0;
  double lambda = 1;
  double gamma = 0;
  bool realtime = false;
  bool gaussian = false;
  int window = 21;
  double tol = 1e-7;
  int max_iter = 20000;
};

int cmd_fit(const FitArgs& a) {
  const auto X = io::read_count_csv(a.primary);
  const auto Y = io::read_count_csv(a.secondary);
  double mean = a.delay_mean;
  if (a.scan_delay) {
    mean = exp::delay_mean_scan(X, Y, 0, a.d_max);
    std::cerr << "note: delay mean from cross-correlation scan = " << mean << "\n";
  }
  const auto pi = make_delay(mean, a.delay_sd, a.d_max);
  const int ell = lag_from_delay(pi);
  std::vector<io::EstimateRow> rows;
  if (a.method == "deconv") {
    deconv::FitOptions opt;
    opt.tol = a.tol;
    opt.max_iter = a.max_iter;
    deconv::FitResult fit;
    std::string name = "deconv-" + std::to_string(a.m);
    if (a.gaussian) {
      deconv::DeconvSpec spec;
      spec.m = a.m;
      spec.lambda = a.lambda;
      spec.gamma = a.realtime ? a.gamma : 0.0;
      spec.tail_constraint = a.realtime;
      fit = deconv::solve_gaussian(X, Y, pi, spec, opt);
      name += "-gauss";
    } else if (a.realtime) {
      fit = deconv::solve_realtime(X, Y, pi, a.m, a.lambda, a.gamma, opt);
    } else {
      fit = deconv::solve_retrospective(X, Y, pi, a.m, a.lambda, opt);
    }
    if (!fit.converged)
      std::cerr << "note: solver stopped at iteration cap before tolerance\n";
    for (std::int64_t i = 0; i < fit.curve.size(); ++i)
      rows.push_back({fit.curve.origin + i, name,
                      fit.curve.p[static_cast<std::size_t>(i)], 0});
  } else {
    ratios::RatioMethod method;
    if (a.method == "lagged-rt")
      method = ratios::RatioMethod::kLaggedRealtime;
    else if (a.method == "lagged-retro")
      method = ratios::RatioMethod::kLaggedRetro;
    else if (a.method == "conv-rt")
      method = ratios::RatioMethod::kConvRealtime;
    else if (a.method == "conv-retro")
      method = ratios::RatioMethod::kConvRetro;
    else
      throw ParameterError("unknown method " + a.method);
    const auto est = ratios::run_ratio(method, X, Y, pi, a.window, ell);
    for (std::int64_t i = 0; i < est.curve.size(); ++i)
      rows.push_back({est.curve.origin + i, a.method,
                      est.curve.p[static_cast<std::size_t>(i)],
                      est.clipped[static_cast<std::size_t>(i)]});
  }
  io::write_estimates_csv(a.out, rows);
  return 0;
}

// ---------------------------------------------------------------------------

struct TuneArgs {
  std::string primary, secondary, out;
  std::string method = "deconv";
  std::string rule = "1se";
  double delay_mean = 13, delay_sd = -1;
  int d_max = 45;
  int m = 0;
  bool realtime = false;
  int K = 5, M = 28;
  int n_lambda = 20, n_gamma = 10;
  std::vector<int> windows = {1, 7, 14, 21, 28};
  std::vector<int> orders;
  double tol = 1e-5;
  int max_iter = 4000;
};

int cmd_tune(const TuneArgs& a) {
  const auto X = io::read_count_csv(a.primary);
  const auto Y = io::read_count_csv(a.secondary);
  const auto pi = make_delay(a.delay_mean, a.delay_sd, a.d_max);
  const auto rule = exp::parse_rule(a.rule);
  deconv::FitOptions opt;
  opt.tol = a.tol;
  opt.max_iter = a.max_iter;
  if (!a.orders.empty()) {
    const auto sel =
        tune::tune_order(X, Y, pi, a.orders, a.K, rule, opt, a.n_lambda);
    std::size_t bi = 0;
    for (std::size_t i = 0; i < a.orders.size(); ++i)
      if (a.orders[i] == sel.m_star) bi = i;
    exp::write_validation_csv(a.out, sel.curves[bi]);
    std::cout << "order=" << sel.m_star
              << " lambda=" << io::fmt_g(sel.lambda_star) << "\n";
    return 0;
  }
  if (a.method == "deconv") {
    const double lmax = deconv::lambda_max_bound(X, Y, pi, a.m);
    const auto grid = log_grid(1e-4 * lmax, lmax, a.n_lambda);
    if (a.realtime) {
      const auto gamma_grid = log_grid(1e-2, 1e4, a.n_gamma);
      const auto ts = tune::two_stage_tune(X, Y, pi, a.m, grid, gamma_grid, a.K,
                                           a.M, rule, rule, opt);
      exp::write_validation_csv(a.out, ts.lambda_curve);
      const auto dotpos = a.out.rfind('.');
      const std::string gpath =
          (dotpos == std::string::npos ? a.out : a.out.substr(0, dotpos)) +
          "_gamma.csv";
      exp::write_validation_csv(gpath, ts.gamma_curve);
      std::cout << "lambda=" << io::fmt_g(ts.lambda_star)
                << " gamma=" << io::fmt_g(ts.gamma_star) << "\n";
    } else {
      deconv::DeconvSpec base;
      base.m = a.m;
      const auto vc = tune::cv_curve_deconv(X, Y, pi, base, grid, a.K, opt);
      exp::write_validation_csv(a.out, vc);
      std::cout << "lambda=" << io::fmt_g(vc.selected(rule)) << "\n";
    }
    return 0;
  }
  ratios::RatioMethod method;
  if (a.method == "lagged-rt")
    method = ratios::RatioMethod::kLaggedRealtime;
  else if (a.method == "lagged-retro")
    method = ratios::RatioMethod::kLaggedRetro;
  else if (a.method == "conv-rt")
    method = ratios::RatioMethod::kConvRealtime;
  else if (a.method == "conv-retro")
    method = ratios::RatioMethod::kConvRetro;
  else
    throw ParameterError("unknown method " + a.method);
  const auto vc = tune::cv_curve_ratio(X, Y, pi, method, a.windows, a.K,
                                       lag_from_delay(pi));
  exp::write_validation_csv(a.out, vc);
  std::cout << "window=" << static_cast<int>(vc.selected(rule)) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

void add_experiment_flags(CLI::App* cmd, exp::ExperimentConfig& cfg,
                          std::string& regions_str) {
  cmd->add_option("--out-dir", cfg.out_dir, "output directory")->required();
  cmd->add_option("--mode", cfg.mode, "retrospective | realtime");
  cmd->add_option("--noise", cfg.noise, "poisson-binomial | beta-binomial");
  cmd->add_option("--regions", regions_str,
                  "name:scale[:bb_beta] list, comma separated");
  cmd->add_option("--replicates", cfg.replicates, "replicates per region");
  cmd->add_option("--seed", cfg.seed, "base RNG seed");
  cmd->add_option("--days", cfg.days, "secondary series length");
  cmd->add_option("--delay-mean", cfg.delay_mean, "generating delay mean (days)");
  cmd->add_option("--d-max", cfg.d_max, "delay support cap");
  cmd->add_option("--order", cfg.m, "trend-filtering order m");
  cmd->add_option("--cv-folds", cfg.K, "CV fold count");
  cmd->add_option("--fv-window", cfg.M, "forward-validation window");
  cmd->add_option("--cadence", cfg.cadence, "days between evaluation dates");
  cmd->add_option("--burn", cfg.burn, "burn-in/out length (-1 = d_max+28)");
  cmd->add_option("--rule-deconv", cfg.rule_deconv, "min | 1se");
  cmd->add_option("--rule-lambda-rt", cfg.rule_lambda_rt, "min | 1se");
  cmd->add_option("--rule-gamma", cfg.rule_gamma, "min | 1se");
  cmd->add_option("--rule-ratio", cfg.rule_ratio, "min | 1se");
  cmd->add_option("--delay-source", cfg.delay_source, "fixed | scan");
  cmd->add_flag("--oracle", cfg.oracle, "add an oracle-tuned deconvolution pass");
  cmd->add_option("--retune-every", cfg.retune_every,
                  "realtime: evaluation steps between retunes");
  cmd->add_option("--tune-tol", cfg.tune_tol, "solver tolerance during tuning");
  cmd->add_option("--tune-iters", cfg.tune_iters, "iteration cap during tuning");
  cmd->add_option("--fit-tol", cfg.fit_tol, "solver tolerance for final fits");
  cmd->add_option("--fit-iters", cfg.fit_iters, "iteration cap for final fits");
  cmd->add_option("--n-lambda", cfg.n_lambda, "lambda grid size");
  cmd->add_option("--n-gamma", cfg.n_gamma, "gamma grid size");
  cmd->add_option("--windows", cfg.windows, "ratio smoothing windows")
      ->delimiter(',');
}

void fill_manifest(exp::ExperimentConfig& cfg) {
  auto& kv = cfg.manifest_kv;
  kv["mode"] = cfg.mode;
  kv["noise"] = cfg.noise;
  std::string rs;
  for (const auto& r : cfg.regions) {
    if (!rs.empty()) rs += ",";
    rs += r.name + ":" + io::fmt_g(r.scale) + ":" + io::fmt_g(r.bb_beta);
  }
  kv["regions"] = rs;
  kv["replicates"] = std::to_string(cfg.replicates);
  kv["seed"] = std::to_string(cfg.seed);
  kv["days"] = std::to_string(cfg.days);
  kv["delay_mean"] = io::fmt_g(cfg.delay_mean);
  kv["d_max"] = std::to_string(cfg.d_max);
  kv["order"] = std::to_string(cfg.m);
  kv["cv_folds"] = std::to_string(cfg.K);
  kv["fv_window"] = std::to_string(cfg.M);
  kv["cadence"] = std::to_string(cfg.cadence);
  kv["burn"] = std::to_string(cfg.burn);
  kv["rule_deconv"] = cfg.rule_deconv;
  kv["rule_lambda_rt"] = cfg.rule_lambda_rt;
  kv["rule_gamma"] = cfg.rule_gamma;
  kv["rule_ratio"] = cfg.rule_ratio;
  kv["delay_source"] = cfg.delay_source;
  kv["oracle"] = cfg.oracle ? "1" : "0";
  kv["offsets"] = join_doubles(cfg.offsets);
  kv["retune_every"] = std::to_string(cfg.retune_every);
  kv["tune_tol"] = io::fmt_g(cfg.tune_tol);
  kv["tune_iters"] = std::to_string(cfg.tune_iters);
  kv["fit_tol"] = io::fmt_g(cfg.fit_tol);
  kv["fit_iters"] = std::to_string(cfg.fit_iters);
  kv["n_lambda"] = std::to_string(cfg.n_lambda);
  kv["n_gamma"] = std::to_string(cfg.n_gamma);
  std::string ws;
  for (std::size_t i = 0; i < cfg.windows.size(); ++i)
    ws += (i ? "," : "") + std::to_string(cfg.windows[i]);
  kv["windows"] = ws;
}

int run_config(exp::ExperimentConfig cfg, const std::string& regions_str) {
  if (!regions_str.empty()) cfg.regions = parse_regions(regions_str);
  if (cfg.regions.empty()) cfg.regions = exp::default_regions();
  fill_manifest(cfg);
  const auto result = exp::run_experiment(cfg);
  if (!result.summary.empty()) {
    std::cout << "method,mae_x1000,se_x1000\n";
    for (const auto& r : result.summary)
      std::cout << r.method << ',' << io::fmt_g(1000 * r.mean) << ','
                << io::fmt_g(1000 * r.se) << '\n';
  }
  if (!result.misspec.empty()) {
    std::cout << "offset,method,mae_x1000\n";
    for (const auto& r : result.misspec)
      std::cout << io::fmt_g(r.offset) << ',' << r.method << ','
                << io::fmt_g(1000 * r.mean_mae) << '\n';
  }
  if (!result.failures.empty()) {
    std::cerr << result.failures.size() << " cell failure(s); see "
              << result.out_dir << "/failures.csv\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"severity-rate estimation toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key=value config file");
  app.allow_config_extras(false);

  SimulateArgs sa;
  auto* sim_cmd = app.add_subcommand("simulate", "draw secondary counts");
  sim_cmd->add_option("--primary", sa.primary, "primary counts CSV")->required();
  sim_cmd->add_option("--truth", sa.truth, "severity-rate CSV");
  sim_cmd->add_option("--variants", sa.variants, "variant-proportion CSV");
  sim_cmd->add_option("--severities", sa.severities, "variant=rate list");
  sim_cmd->add_option("--out", sa.out, "output CSV")->required();
  sim_cmd->add_option("--truth-out", sa.truth_out, "write the truth curve here");
  sim_cmd->add_option("--noise", sa.noise, "poisson-binomial | beta-binomial");
  sim_cmd->add_option("--delay-mean", sa.delay_mean, "delay mean (days)");
  sim_cmd->add_option("--delay-sd", sa.delay_sd, "delay sd (default 0.9*mean)");
  sim_cmd->add_option("--bb-beta", sa.bb_beta, "beta-binomial dispersion");
  sim_cmd->add_option("--d-max", sa.d_max, "delay support cap");
  sim_cmd->add_option("--seed", sa.seed, "RNG seed");

  CleanArgs ca;
  auto* clean_cmd = app.add_subcommand("clean", "repair a reported count series");
  clean_cmd->add_option("--in", ca.in, "input CSV")->required();
  clean_cmd->add_option("--out", ca.out, "output CSV")->required();
  clean_cmd->add_option("--op", ca.op,
                        "pipeline | dumps | negatives | truncate | deweekify | impute");
  clean_cmd->add_option("--seed", ca.seed, "RNG seed");
  clean_cmd->add_option("--window", ca.window, "outlier window (odd)");
  clean_cmd->add_option("--iqr-mult", ca.iqr_mult, "outlier band width");

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "fit one estimator at fixed hyperparameters");
  fit_cmd->add_option("--primary", fa.primary, "primary counts CSV")->required();
  fit_cmd->add_option("--secondary", fa.secondary, "secondary counts CSV")->required();
  fit_cmd->add_option("--out", fa.out, "estimates CSV")->required();
  fit_cmd->add_option("--method", fa.method,
                      "deconv | lagged-rt | lagged-retro | conv-rt | conv-retro");
  fit_cmd->add_option("--delay-mean", fa.delay_mean, "delay mean (days)");
  fit_cmd->add_option("--delay-sd", fa.delay_sd, "delay sd (default 0.9*mean)");
  fit_cmd->add_flag("--scan-delay", fa.scan_delay,
                    "estimate delay mean by cross-correlation scan");
  fit_cmd->add_option("--d-max", fa.d_max, "delay support cap");
  fit_cmd->add_option("--order", fa.m, "trend-filtering order m");
  fit_cmd->add_option("--lambda", fa.lambda, "trend penalty weight");
  fit_cmd->add_option("--gamma", fa.gamma, "real-time tail penalty weight");
  fit_cmd->add_flag("--realtime", fa.realtime, "real-time variant");
  fit_cmd->add_flag("--gaussian", fa.gaussian, "Gaussian loss variant");
  fit_cmd->add_option("--window", fa.window, "ratio smoothing window");
  fit_cmd->add_option("--tol", fa.tol, "solver tolerance");
  fit_cmd->add_option("--max-iter", fa.max_iter, "solver iteration cap");

  TuneArgs ta;
  auto* tune_cmd = app.add_subcommand("tune", "cross-validate hyperparameters");
  tune_cmd->add_option("--primary", ta.primary, "primary counts CSV")->required();
  tune_cmd->add_option("--secondary", ta.secondary, "secondary counts CSV")->required();
  tune_cmd->add_option("--out", ta.out, "validation-curve CSV")->required();
  tune_cmd->add_option("--method", ta.method, "deconv | ratio method name");
  tune_cmd->add_option("--rule", ta.rule, "min | 1se");
  tune_cmd->add_option("--delay-mean", ta.delay_mean, "delay mean (days)");
  tune_cmd->add_option("--delay-sd", ta.delay_sd, "delay sd (default 0.9*mean)");
  tune_cmd->add_option("--d-max", ta.d_max, "delay support cap");
  tune_cmd->add_option("--order", ta.m, "trend-filtering order m");
  tune_cmd->add_flag("--realtime", ta.realtime, "two-stage real-time tuning");
  tune_cmd->add_option("--cv-folds", ta.K, "CV fold count");
  tune_cmd->add_option("--fv-window", ta.M, "forward-validation window");
  tune_cmd->add_option("--n-lambda", ta.n_lambda, "lambda grid size");
  tune_cmd->add_option("--n-gamma", ta.n_gamma, "gamma grid size");
  tune_cmd->add_option("--windows", ta.windows, "ratio windows")->delimiter(',');
  tune_cmd->add_option("--orders", ta.orders, "candidate m values")->delimiter(',');
  tune_cmd->add_option("--tol", ta.tol, "solver tolerance");
  tune_cmd->add_option("--max-iter", ta.max_iter, "solver iteration cap");

  exp::ExperimentConfig ec;
  std::string ec_regions;
  auto* eval_cmd = app.add_subcommand("evaluate", "run a full simulation experiment");
  add_experiment_flags(eval_cmd, ec, ec_regions);

  exp::ExperimentConfig mc;
  std::string mc_regions;
  std::vector<double> mc_offsets = {-3, -1, 0, 1, 3};
  auto* mis_cmd = app.add_subcommand("sweep-misspec",
                                     "sweep delay-mean misspecification offsets");
  add_experiment_flags(mis_cmd, mc, mc_regions);
  mis_cmd->add_option("--offsets", mc_offsets, "delay-mean offsets")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim_cmd->parsed()) return cmd_simulate(sa);
    if (clean_cmd->parsed()) return cmd_clean(ca);
    if (fit_cmd->parsed()) return cmd_fit(fa);
    if (tune_cmd->parsed()) return cmd_tune(ta);
    if (eval_cmd->parsed()) return run_config(ec, ec_regions);
    if (mis_cmd->parsed()) {
      mc.offsets = mc_offsets;
      return run_config(mc, mc_regions);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
