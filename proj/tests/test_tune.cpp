#include <catch2/catch_amalgamated.hpp>

#include "sevrate/sevrate.hpp"

#include <cmath>
#include <random>

using namespace sevrate;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct TuneInstance {
  CountSeries X;
  CountSeries Y;
  DelayDistribution pi{std::vector<double>{0.2, 0.5, 0.3}};
  SeverityCurve truth;
};

TuneInstance noisy_instance(std::uint64_t seed, std::int64_t ny) {
  TuneInstance ti;
  const int d = 2;
  const Date y0 = Date::parse("2021-02-01");
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<std::int64_t> U(200, 600);
  ti.X.origin = y0 - d;
  ti.X.values.resize(static_cast<std::size_t>(ny + d));
  for (auto& v : ti.X.values) v = U(gen);
  std::vector<double> p(static_cast<std::size_t>(ny + d));
  for (std::size_t i = 0; i < p.size(); ++i)
    p[i] = 0.2 + 0.1 * std::sin(2 * 3.14159265358979 * static_cast<double>(i) / 24.0);
  ti.truth = SeverityCurve::checked(ti.X.origin, p);
  const auto mv = expected_secondary(ti.X, ti.pi, ti.truth);
  ti.Y.origin = y0;
  ti.Y.values.resize(static_cast<std::size_t>(ny));
  for (std::int64_t i = 0; i < ny; ++i) {
    std::poisson_distribution<std::int64_t> P(mv.mean.at(y0 + i));
    ti.Y.values[static_cast<std::size_t>(i)] = P(gen);
  }
  return ti;
}

tune::ValidationCurve make_curve(std::vector<double> errs, std::vector<double> ses) {
  tune::ValidationCurve vc;
  vc.mean_err = std::move(errs);
  vc.se_err = std::move(ses);
  for (std::size_t i = 0; i < vc.mean_err.size(); ++i)
    vc.values.push_back(static_cast<double>(i + 1));
  vc.failures.assign(vc.mean_err.size(), "");
  return vc;
}

}  // namespace

// ---------------------------------------------------------------------------
// Folds and selection rules

TEST_CASE("structured folds interleave the time axis") {
  const auto folds = tune::cv_folds(10, 3);
  REQUIRE(folds.size() == 3);
  CHECK(folds[0] == std::vector<std::int64_t>{0, 3, 6, 9});
  CHECK(folds[1] == std::vector<std::int64_t>{1, 4, 7});
  CHECK(folds[2] == std::vector<std::int64_t>{2, 5, 8});
  CHECK_THROWS_AS(tune::cv_folds(10, 1), ParameterError);
  CHECK_THROWS_AS(tune::cv_folds(3, 4), ParameterError);
}

TEST_CASE("min and 1se rules select as defined") {
  auto vc = make_curve({5, 3, 4, 3.5, 6}, {0.2, 0.6, 0.2, 0.2, 0.2});
  tune::detail_tune::finalize(vc);
  CHECK(vc.idx_min == 1);
  CHECK(vc.idx_1se == 3);  // 3.5 <= 3 + 0.6, and 6 is out

  // exact ties break toward the more regularized candidate
  auto tie = make_curve({4, 3, 3, 5}, {0.1, 0.1, 0.1, 0.1});
  tune::detail_tune::finalize(tie);
  CHECK(tie.idx_min == 2);

  // failed candidates are skipped by both rules
  auto gaps = make_curve({kNan, 3, kNan, 2.5, kNan}, {kNan, 0.1, kNan, kNan, kNan});
  tune::detail_tune::finalize(gaps);
  CHECK(gaps.idx_min == 3);
  CHECK(gaps.idx_1se == 3);  // missing se counts as zero width

  auto skip = make_curve({3, kNan, 3.2}, {0.3, kNan, 0.1});
  tune::detail_tune::finalize(skip);
  CHECK(skip.idx_min == 0);
  CHECK(skip.idx_1se == 2);

  auto dead = make_curve({kNan, kNan}, {kNan, kNan});
  dead.failures = {"boom", "bust"};
  CHECK_THROWS_AS(tune::detail_tune::finalize(dead), TuningError);
}

// ---------------------------------------------------------------------------
// Deconvolution lambda CV

TEST_CASE("lambda CV curve is reproducible candidate by candidate") {
  const auto ti = noisy_instance(101, 40);
  deconv::DeconvSpec base;
  base.m = 0;
  deconv::FitOptions opt;
  opt.tol = 1e-8;
  const double lmax = deconv::lambda_max_bound(ti.X, ti.Y, ti.pi, 0);
  const auto grid = log_grid(1e-3 * lmax, lmax, 5);
  const auto vc = tune::cv_curve_deconv(ti.X, ti.Y, ti.pi, base, grid, 5, opt);

  REQUIRE(vc.values.size() == 5);
  REQUIRE(vc.mean_err.size() == 5);
  REQUIRE(vc.se_err.size() == 5);
  CHECK(vc.idx_min >= 0);
  CHECK(vc.idx_1se >= vc.idx_min);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(std::isfinite(vc.mean_err[i]));
    CHECK(vc.mean_err[i] >= 0);
    CHECK(std::isfinite(vc.se_err[i]));
    CHECK(vc.failures[i].empty());
  }

  // the warm-started path must agree with a cold single-candidate run
  const std::size_t probe = 2;
  const auto solo =
      tune::cv_curve_deconv(ti.X, ti.Y, ti.pi, base, {grid[probe]}, 5, opt);
  CHECK(solo.mean_err[0] ==
        Catch::Approx(vc.mean_err[probe]).epsilon(1e-4).margin(1e-8));
}

TEST_CASE("oracle lambda curve scores the truth directly") {
  const auto ti = noisy_instance(102, 40);
  deconv::DeconvSpec base;
  base.m = 0;
  std::vector<Date> evals;
  for (std::int64_t i = 4; i < 36; i += 4) evals.push_back(ti.Y.origin + i);
  const double lmax = deconv::lambda_max_bound(ti.X, ti.Y, ti.pi, 0);
  const auto grid = log_grid(1e-3 * lmax, lmax, 4);
  const auto vc =
      tune::oracle_curve_deconv(ti.X, ti.Y, ti.pi, base, grid, ti.truth, evals);
  REQUIRE(vc.mean_err.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::isnan(vc.se_err[i]));  // single score per candidate
    // recompute the truth MAE from a direct solve
    deconv::DeconvSpec spec = base;
    spec.lambda = grid[i];
    const auto fit = deconv::solve(ti.X, ti.Y, ti.pi, spec);
    double s = 0;
    for (Date t : evals) s += std::abs(fit.curve.at(t) - ti.truth.at(t));
    CHECK(vc.mean_err[i] ==
          Catch::Approx(s / static_cast<double>(evals.size())).epsilon(1e-6));
  }
  CHECK_THROWS_AS(tune::oracle_curve_deconv(ti.X, ti.Y, ti.pi, base, grid,
                                            ti.truth, {}),
                  ParameterError);
}

// ---------------------------------------------------------------------------
// Ratio window CV

TEST_CASE("ratio CV is exact on a noiseless constant rate") {
  // Y equals the noiseless convolution at p = 0.5, so any window reconvolves
  // perfectly and every fold error is zero
  const Date y0 = Date::parse("2021-03-01");
  const DelayDistribution pi(std::vector<double>{0.25, 0.5, 0.25});
  CountSeries X{y0 - 2, {80, 160, 240, 320, 80, 480, 160, 640, 240, 320, 80, 160}};
  CountSeries Y{y0, std::vector<std::int64_t>(10)};
  const auto mv = expected_secondary(
      X, pi, SeverityCurve::checked(X.origin, std::vector<double>(12, 0.5)));
  for (std::int64_t i = 0; i < 10; ++i)
    Y.values[static_cast<std::size_t>(i)] =
        std::llround(mv.mean.at(y0 + i));

  const auto vc = tune::cv_curve_ratio(X, Y, pi, ratios::RatioMethod::kConvRealtime,
                                       {1, 3, 5}, 5, 2);
  REQUIRE(vc.values == std::vector<double>{1, 3, 5});
  // W = 1: held-out days go missing and the nearest-fill restores the exact
  // constant, so reconvolution is perfect.  Wider windows mix masked-out
  // secondary means with full primary means and pick up bias.
  CHECK(vc.mean_err[0] < 1e-9);
  CHECK(vc.mean_err[1] > 1e-3);
  CHECK(vc.mean_err[2] > 1e-3);
  CHECK(vc.idx_min == 0);
}

TEST_CASE("ratio CV runs on noisy data for every method") {
  const auto ti = noisy_instance(103, 45);
  for (auto method : {ratios::RatioMethod::kConvRealtime,
                      ratios::RatioMethod::kLaggedRealtime,
                      ratios::RatioMethod::kConvRetro,
                      ratios::RatioMethod::kLaggedRetro}) {
    const auto vc = tune::cv_curve_ratio(ti.X, ti.Y, ti.pi, method, {1, 7, 14}, 5, 1);
    REQUIRE(vc.mean_err.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::isfinite(vc.mean_err[i]));
    CHECK(vc.idx_min >= 0);
  }
  CHECK_THROWS_AS(tune::cv_curve_ratio(ti.X, ti.Y, ti.pi,
                                       ratios::RatioMethod::kConvRealtime, {}, 5, 1),
                  ParameterError);
}

// ---------------------------------------------------------------------------
// Forward validation for gamma

TEST_CASE("forward validation scores one-step-ahead reconvolution") {
  const auto ti = noisy_instance(104, 50);
  const int m = 0;
  const double lam = 0.1 * deconv::lambda_max_bound(ti.X, ti.Y, ti.pi, m);
  const double gam = 5.0;
  const auto vc = tune::forward_curve_gamma(ti.X, ti.Y, ti.pi, m, lam, {gam}, 1);
  REQUIRE(vc.mean_err.size() == 1);

  // recompute the single validation step from its definition
  const std::int64_t n = ti.Y.size();
  CountSeries Ysub;
  Ysub.origin = ti.Y.origin;
  Ysub.values.assign(ti.Y.values.begin(), ti.Y.values.end() - 1);
  const auto fit = deconv::solve_realtime(ti.X, Ysub, ti.pi, m, lam, gam);
  const Date s = ti.Y.origin + (n - 2);
  const double pnext =
      std::clamp(2 * fit.curve.at(s) - fit.curve.at(s - 1), 0.0, 1.0);
  double yhat = 0;
  for (int k = 0; k <= ti.pi.max_delay(); ++k) {
    const Date u = s + 1 - k;
    const double pv = (k == 0) ? pnext : fit.curve.at(u);
    yhat += static_cast<double>(ti.X.at(u)) *
            ti.pi.base()[static_cast<std::size_t>(k)] * pv;
  }
  const double want =
      std::abs(yhat - static_cast<double>(ti.Y.values[static_cast<std::size_t>(n - 1)]));
  CHECK(vc.mean_err[0] == Catch::Approx(want).epsilon(1e-6).margin(1e-9));

  CHECK_THROWS_AS(
      tune::forward_curve_gamma(ti.X, ti.Y, ti.pi, m, lam, {1.0}, 48),
      TuningError);
  CHECK_THROWS_AS(tune::forward_curve_gamma(ti.X, ti.Y, ti.pi, m, lam, {}, 5),
                  ParameterError);
}

TEST_CASE("two-stage tuning selects from both grids") {
  const auto ti = noisy_instance(105, 50);
  const double lmax = deconv::lambda_max_bound(ti.X, ti.Y, ti.pi, 0);
  const auto lgrid = log_grid(1e-2 * lmax, lmax, 4);
  const std::vector<double> ggrid{0.1, 10.0, 1000.0};
  const auto ts = tune::two_stage_tune(ti.X, ti.Y, ti.pi, 0, lgrid, ggrid, 5, 4,
                                       tune::Rule::kMin, tune::Rule::kOneSe);
  CHECK(std::find(lgrid.begin(), lgrid.end(), ts.lambda_star) != lgrid.end());
  CHECK(std::find(ggrid.begin(), ggrid.end(), ts.gamma_star) != ggrid.end());
  CHECK(ts.lambda_star == ts.lambda_curve.selected(tune::Rule::kMin));
  CHECK(ts.gamma_star == ts.gamma_curve.selected(tune::Rule::kOneSe));

  // the lambda stage must run with the real-time tail constraint active
  deconv::DeconvSpec base;
  base.m = 0;
  base.tail_constraint = true;
  const auto direct = tune::cv_curve_deconv(ti.X, ti.Y, ti.pi, base, lgrid, 5);
  REQUIRE(direct.mean_err.size() == ts.lambda_curve.mean_err.size());
  for (std::size_t i = 0; i < direct.mean_err.size(); ++i)
    CHECK(direct.mean_err[i] ==
          Catch::Approx(ts.lambda_curve.mean_err[i]).epsilon(1e-9).margin(1e-12));
}

TEST_CASE("order tuning tries every order and keeps a winner") {
  const auto ti = noisy_instance(106, 40);
  const auto sel = tune::tune_order(ti.X, ti.Y, ti.pi, {0, 1}, 4,
                                    tune::Rule::kOneSe, {}, 5);
  REQUIRE(sel.curves.size() == 2);
  CHECK((sel.m_star == 0 || sel.m_star == 1));
  CHECK(sel.lambda_star > 0);
  CHECK_THROWS_AS(tune::tune_order(ti.X, ti.Y, ti.pi, {}, 4, tune::Rule::kMin),
                  ParameterError);
}

// ---------------------------------------------------------------------------
// Summaries

TEST_CASE("mae report averages regions and pools replicate variance") {
  std::vector<tune::MaeCell> cells;
  // method a: region X {1,2,3}, region Y {2,2,2}
  for (double v : {1.0, 2.0, 3.0}) cells.push_back({"a", "X", int(v), v});
  for (int i = 0; i < 3; ++i) cells.push_back({"a", "Y", i, 2.0});
  // method b: single region, single replicate -> no se
  cells.push_back({"b", "X", 0, 4.0});
  const auto rows = tune::mae_report(cells);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].method == "a");
  CHECK(rows[0].mean == Catch::Approx(2.0));
  // var {1,2,3} = 1, var {2,2,2} = 0; se = sqrt((1/4) * (1/3) * (1 + 0))
  CHECK(rows[0].se == Catch::Approx(std::sqrt(1.0 / 12.0)));
  CHECK(rows[1].method == "b");
  CHECK(rows[1].mean == Catch::Approx(4.0));
  CHECK(std::isnan(rows[1].se));

  std::vector<tune::MaeCell> ragged = cells;
  ragged.push_back({"a", "X", 3, 1.5});  // X now has 4 reps, Y has 3
  CHECK_THROWS_AS(tune::mae_report(ragged), DimensionError);
}

TEST_CASE("percentage improvement and truth MAE behave at the edges") {
  CHECK(tune::pct_improvement(8.0, 6.0) == Catch::Approx(25.0));
  CHECK(tune::pct_improvement(5.0, 7.5) == Catch::Approx(-50.0));
  CHECK_THROWS_AS(tune::pct_improvement(0.0, 1.0), ParameterError);

  const Date o = Date::parse("2021-01-01");
  const auto truth = SeverityCurve::checked(o, std::vector<double>(6, 0.2));
  const auto est = SeverityCurve::checked(
      o, {0.25, kNan, 0.15, 0.2, 0.3, kNan}, /*allow_nan=*/true);
  std::vector<Date> dates;
  for (std::int64_t i = 0; i < 5; ++i) dates.push_back(o + i);
  // one NaN among five dates is within the 20% cap
  CHECK(tune::mae_against_truth(est, truth, dates) ==
        Catch::Approx((0.05 + 0.05 + 0.0 + 0.1) / 4));
  dates.push_back(o + 5);  // second NaN pushes it over
  CHECK_THROWS_AS(tune::mae_against_truth(est, truth, dates), ValidationError);
  // dates outside the estimate's axis count as missing
  std::vector<Date> outside{o + 10, o + 11, o + 12, o + 13, o + 14};
  CHECK_THROWS_AS(tune::mae_against_truth(est, truth, outside), ValidationError);
  CHECK_THROWS_AS(tune::mae_against_truth(est, truth, {}), ParameterError);
}
