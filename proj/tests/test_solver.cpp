#include <catch2/catch_amalgamated.hpp>

#include "sevrate/sevrate.hpp"
#include "support/oracles.hpp"
#include "support/reference_solver.hpp"

#include <random>

using namespace sevrate;

namespace {

struct TinyInstance {
  CountSeries X, Y;
  DelayDistribution pi;
  deconv::DeconvSpec spec;
};

// Small random problem with positive exposure everywhere and counts drawn
// around a smooth severity path, sized so the dense reference solver is fast.
TinyInstance tiny_instance(std::uint64_t seed, std::int64_t ny, int d, int m,
                           double lambda_frac, bool tail, double gamma) {
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<std::int64_t> UX(20, 200);
  std::uniform_real_distribution<double> Up(0.05, 0.5);
  const Date y0 = Date::parse("2021-03-01");
  TinyInstance t;
  t.X.origin = y0 - d;
  t.X.values.resize(static_cast<std::size_t>(ny + d));
  for (auto& v : t.X.values) v = UX(gen);
  if (d == 0) {
    t.pi = DelayDistribution(std::vector<double>{1.0});
  } else {
    std::vector<double> pmf(static_cast<std::size_t>(d) + 1);
    double s = 0;
    for (auto& v : pmf) { v = Up(gen) + 0.1; s += v; }
    for (auto& v : pmf) v /= s;
    t.pi = DelayDistribution(pmf);
  }
  std::vector<double> ptrue(static_cast<std::size_t>(ny + d));
  const double a = Up(gen), b = Up(gen);
  for (std::size_t i = 0; i < ptrue.size(); ++i) {
    const double u = static_cast<double>(i) / static_cast<double>(ptrue.size());
    ptrue[i] = std::clamp(a + (b - a) * u + 0.05 * std::sin(6.28 * u), 0.01, 0.9);
  }
  ConvolutionOperator A(t.X, t.pi, y0, ny);
  const auto mu = A.apply(ptrue);
  t.Y.origin = y0;
  t.Y.values.resize(static_cast<std::size_t>(ny));
  for (std::size_t i = 0; i < mu.size(); ++i) {
    std::poisson_distribution<std::int64_t> P(std::max(mu[i], 0.2));
    t.Y.values[i] = P(gen);
  }
  t.spec.m = m;
  t.spec.lambda = lambda_frac * deconv::lambda_max_bound(t.X, t.Y, t.pi, m);
  t.spec.tail_constraint = tail;
  t.spec.gamma = gamma;
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Objective and gradient

TEST_CASE("poisson objective matches a longhand evaluation") {
  const auto t = tiny_instance(101, 10, 2, 1, 0.3, false, 0.0);
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> U(0.05, 0.7);
  std::vector<double> pv(static_cast<std::size_t>(t.Y.size() + 2));
  for (auto& v : pv) v = U(gen);
  const SeverityCurve p{t.Y.origin - 2, pv};

  const auto mu = oracle::convolve_mu(t.X, t.pi, pv, p.origin, t.Y.origin, t.Y.size());
  double loss = 0;
  for (std::size_t i = 0; i < mu.size(); ++i)
    loss += mu[i] - static_cast<double>(t.Y.values[i]) *
                        std::log(std::max(mu[i], 1e-10));
  loss /= static_cast<double>(t.Y.size());
  const auto dp = diff_apply(t.spec.m + 1, pv);
  double pen = 0;
  for (double v : dp) pen += std::abs(v);
  const double expect =
      loss + t.spec.lambda / static_cast<double>(dp.size()) * pen;

  CHECK(deconv::objective(p, t.X, t.Y, t.pi, t.spec) ==
        Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("objective validates curve alignment") {
  const auto t = tiny_instance(103, 8, 1, 0, 0.3, false, 0.0);
  std::vector<double> pv(static_cast<std::size_t>(t.Y.size() + 1), 0.2);
  CHECK_THROWS_AS(
      deconv::objective(SeverityCurve{t.Y.origin, pv}, t.X, t.Y, t.pi, t.spec),
      AlignmentError);
  pv.push_back(0.2);
  CHECK_THROWS_AS(
      deconv::objective(SeverityCurve{t.Y.origin - 1, pv}, t.X, t.Y, t.pi, t.spec),
      DimensionError);
}

TEST_CASE("smooth gradient matches central finite differences") {
  for (auto [seed, gamma] : {std::pair<std::uint64_t, double>{107, 0.0},
                             {109, 3.0}}) {
    auto t = tiny_instance(seed, 12, 2, 1, 0.0, false, gamma);
    t.spec.lambda = 0;  // smooth part only
    std::mt19937_64 gen(seed + 1);
    std::uniform_real_distribution<double> U(0.1, 0.6);
    std::vector<double> pv(static_cast<std::size_t>(t.Y.size() + 2));
    for (auto& v : pv) v = U(gen);
    const SeverityCurve p{t.Y.origin - 2, pv};
    const auto g = deconv::smooth_gradient(p, t.X, t.Y, t.pi, t.spec);
    REQUIRE(g.size() == pv.size());
    const double h = 1e-6;
    for (std::size_t j = 0; j < pv.size(); ++j) {
      auto lo = pv, hi = pv;
      lo[j] -= h;
      hi[j] += h;
      const double fd =
          (deconv::objective(SeverityCurve{p.origin, hi}, t.X, t.Y, t.pi, t.spec) -
           deconv::objective(SeverityCurve{p.origin, lo}, t.X, t.Y, t.pi, t.spec)) /
          (2 * h);
      CHECK(g[j] == Catch::Approx(fd).margin(1e-5));
    }
  }
}

// ---------------------------------------------------------------------------
// Solver vs dense interior-point reference

TEST_CASE("admm solution matches the dense reference on small problems") {
  int idx = 0;
  for (auto [ny, d, m] : {std::tuple{10, 1, 0}, {12, 2, 1}, {9, 2, 2},
                          {11, 0, 0}, {12, 1, 1}}) {
    const auto t = tiny_instance(200 + static_cast<std::uint64_t>(idx++), ny, d,
                                 m, 0.25, false, 0.0);
    deconv::FitOptions opt;
    opt.tol = 1e-9;
    const auto fit = deconv::solve(t.X, t.Y, t.pi, t.spec, opt);
    REQUIRE(fit.converged);

    auto prob = refsolve::make_ref(t.X, t.Y, t.pi, t.spec);
    const auto ref = refsolve::solve(prob);

    // compare through one objective implementation so the scales agree
    std::vector<double> rp(ref.p.data(), ref.p.data() + ref.p.size());
    const double obj_ref = deconv::objective(
        SeverityCurve::checked(t.Y.origin - d, rp), t.X, t.Y, t.pi, t.spec);
    CHECK(fit.objective <= obj_ref + 1e-5 * std::abs(obj_ref) + 1e-12);
    CHECK(fit.objective == Catch::Approx(obj_ref).epsilon(1e-5));
    for (std::int64_t j = 0; j < ref.p.size(); ++j)
      CHECK(fit.curve.p[static_cast<std::size_t>(j)] ==
            Catch::Approx(ref.p[j]).margin(2e-3));
  }
}

TEST_CASE("real-time variant matches the reference with tail terms") {
  for (auto [seed, gamma] : {std::pair<std::uint64_t, double>{301, 2.0},
                             {302, 25.0}}) {
    const auto t = tiny_instance(seed, 12, 2, 0, 0.2, true, gamma);
    deconv::FitOptions opt;
    opt.tol = 1e-9;
    const auto fit = deconv::solve(t.X, t.Y, t.pi, t.spec, opt);
    REQUIRE(fit.converged);

    auto prob = refsolve::make_ref(t.X, t.Y, t.pi, t.spec);
    const auto ref = refsolve::solve(prob);
    std::vector<double> rp(ref.p.data(), ref.p.data() + ref.p.size());

    // identical smooth + penalty objective, including the tail quadratic
    auto full_obj = [&](const std::vector<double>& pv) {
      const auto w = deconv::tail_weights(t.pi, t.Y.size() + 2, t.Y.origin - 2);
      double quad = 0;
      for (std::size_t i = 0; i + 1 < pv.size(); ++i)
        quad += w[i] * (pv[i + 1] - pv[i]) * (pv[i + 1] - pv[i]);
      deconv::DeconvSpec nogam = t.spec;
      nogam.gamma = 0;
      return deconv::objective(SeverityCurve::checked(t.Y.origin - 2, pv), t.X,
                               t.Y, t.pi, nogam) +
             t.spec.gamma / 3.0 * quad;  // d + 1 = 3
    };
    const double lib = full_obj(fit.curve.p), refv = full_obj(rp);
    CHECK(lib == Catch::Approx(refv).epsilon(1e-5));
    // trailing difference pinned to zero
    const auto dtail = diff_apply(t.spec.m + 1, fit.curve.p);
    CHECK(std::abs(dtail.back()) < 1e-7);
  }
}

TEST_CASE("gaussian variant matches the reference") {
  const auto t = tiny_instance(401, 12, 1, 1, 0.0, false, 0.0);
  deconv::DeconvSpec spec = t.spec;
  spec.lambda = 0.8;
  std::vector<double> mu_hat(static_cast<std::size_t>(t.Y.size()));
  for (std::size_t i = 0; i < mu_hat.size(); ++i)
    mu_hat[i] = std::max<double>(static_cast<double>(t.Y.values[i]), 1.0);

  deconv::FitOptions opt;
  opt.tol = 1e-9;
  const auto fit = deconv::solve_gaussian(t.X, t.Y, t.pi, spec, opt, &mu_hat);
  REQUIRE(fit.converged);

  auto prob = refsolve::make_ref(t.X, t.Y, t.pi, spec);
  prob.gaussian = true;
  prob.mu_hat = Eigen::Map<const Eigen::VectorXd>(mu_hat.data(),
                                                  static_cast<std::int64_t>(mu_hat.size()));
  const auto ref = refsolve::solve(prob);
  std::vector<double> rp(ref.p.data(), ref.p.data() + ref.p.size());
  const double obj_lib =
      deconv::objective_gaussian(fit.curve, t.X, t.Y, t.pi, spec, mu_hat);
  const double obj_ref = deconv::objective_gaussian(
      SeverityCurve::checked(t.Y.origin - 1, rp), t.X, t.Y, t.pi, spec, mu_hat);
  CHECK(obj_lib == Catch::Approx(obj_ref).epsilon(1e-5));
}

TEST_CASE("gaussian objective matches a longhand evaluation") {
  const auto t = tiny_instance(403, 9, 1, 0, 0.0, false, 0.0);
  deconv::DeconvSpec spec = t.spec;
  spec.lambda = 0.4;
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> U(0.1, 0.5);
  std::vector<double> pv(static_cast<std::size_t>(t.Y.size() + 1));
  for (auto& v : pv) v = U(gen);
  std::vector<double> mu_hat(static_cast<std::size_t>(t.Y.size()), 4.0);
  const auto mu =
      oracle::convolve_mu(t.X, t.pi, pv, t.Y.origin - 1, t.Y.origin, t.Y.size());
  double loss = 0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double rres = static_cast<double>(t.Y.values[i]) - mu[i];
    loss += rres * rres / mu_hat[i];
  }
  loss /= static_cast<double>(t.Y.size());
  const auto dp = diff_apply(1, pv);
  double pen = 0;
  for (double v : dp) pen += std::abs(v);
  const double expect = loss + spec.lambda / static_cast<double>(dp.size()) * pen;
  CHECK(deconv::objective_gaussian(SeverityCurve{t.Y.origin - 1, pv}, t.X, t.Y,
                                   t.pi, spec, mu_hat) ==
        Catch::Approx(expect).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// Structural properties of the fits

TEST_CASE("solutions respect the box and the knot report") {
  const auto t = tiny_instance(501, 40, 3, 0, 0.05, false, 0.0);
  const auto fit = deconv::solve(t.X, t.Y, t.pi, t.spec);
  for (double v : fit.curve.p) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  const auto dp = diff_apply(t.spec.m + 1, fit.curve.p);
  std::vector<std::int64_t> knots;
  for (std::size_t i = 0; i < dp.size(); ++i)
    if (std::abs(dp[i]) > 1e-6) knots.push_back(static_cast<std::int64_t>(i));
  CHECK(fit.knots == knots);
}

TEST_CASE("penalty value is nonincreasing in lambda") {
  const auto t = tiny_instance(503, 30, 2, 0, 0.0, false, 0.0);
  const double lmax = deconv::lambda_max_bound(t.X, t.Y, t.pi, 0);
  double prev = std::numeric_limits<double>::infinity();
  for (double frac : {0.01, 0.1, 0.4, 1.0}) {
    deconv::DeconvSpec spec = t.spec;
    spec.lambda = frac * lmax;
    const auto fit = deconv::solve(t.X, t.Y, t.pi, spec);
    const auto dp = diff_apply(1, fit.curve.p);
    double pen = 0;
    for (double v : dp) pen += std::abs(v);
    CHECK(pen <= prev + 1e-7);
    prev = pen;
  }
}

TEST_CASE("at the lambda bound the solution is a global polynomial") {
  for (auto [seed, m] : {std::pair<std::uint64_t, int>{601, 0}, {602, 1}}) {
    const auto t = tiny_instance(seed, 35, 3, m, 0.0, false, 0.0);
    const double lmax = deconv::lambda_max_bound(t.X, t.Y, t.pi, m);
    deconv::DeconvSpec spec = t.spec;
    spec.lambda = lmax;
    const auto fit = deconv::solve(t.X, t.Y, t.pi, spec);
    const auto dp = diff_apply(m + 1, fit.curve.p);
    double pen = 0;
    for (double v : dp) pen += std::abs(v);
    CHECK(pen <= 1e-6);
    CHECK(fit.knots.empty());
  }
}

TEST_CASE("masked days do not influence the fit") {
  const auto t = tiny_instance(701, 25, 2, 0, 0.3, false, 0.0);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(t.Y.size()), 1);
  mask[7] = 0;
  mask[13] = 0;
  deconv::FitOptions opt;
  opt.loss_mask = &mask;
  const auto fit1 = deconv::solve(t.X, t.Y, t.pi, t.spec, opt);
  auto t2 = t;
  t2.Y.values[7] += 1000;
  t2.Y.values[13] = 0;
  const auto fit2 = deconv::solve(t2.X, t2.Y, t2.pi, t2.spec, opt);
  REQUIRE(fit1.curve.p.size() == fit2.curve.p.size());
  for (std::size_t j = 0; j < fit1.curve.p.size(); ++j)
    CHECK(fit1.curve.p[j] == Catch::Approx(fit2.curve.p[j]).margin(1e-12));
}

TEST_CASE("warm starts converge to the same solution") {
  const auto t = tiny_instance(703, 60, 4, 0, 0.15, false, 0.0);
  const auto cold = deconv::solve(t.X, t.Y, t.pi, t.spec);
  REQUIRE(cold.converged);
  // warm start from a nearby lambda's solution
  deconv::DeconvSpec near = t.spec;
  near.lambda *= 1.3;
  const auto other = deconv::solve(t.X, t.Y, t.pi, near);
  deconv::FitOptions opt;
  opt.warm = &other.curve.p;
  const auto warm = deconv::solve(t.X, t.Y, t.pi, t.spec, opt);
  REQUIRE(warm.converged);
  CHECK(warm.objective == Catch::Approx(cold.objective).epsilon(1e-6));
  CHECK(warm.iterations <= cold.iterations);
}

TEST_CASE("zero-exposure days are feasible only with zero counts") {
  auto t = tiny_instance(801, 12, 1, 0, 0.3, false, 0.0);
  // kill all exposure feeding day 5: X on days 4 and 5 (lags 1 and 0)
  const Date bad = t.Y.origin + 5;
  t.X.at(bad) = 0;
  t.X.at(bad - 1) = 0;
  auto ok = t;
  ok.Y.values[5] = 0;
  CHECK_NOTHROW(deconv::solve(ok.X, ok.Y, ok.pi, ok.spec));
  auto infeasible = t;
  infeasible.Y.values[5] = 3;
  CHECK_THROWS_AS(deconv::solve(infeasible.X, infeasible.Y, infeasible.pi,
                                infeasible.spec),
                  FeasibilityError);
}

TEST_CASE("lambda bound rejects unsupported trend orders") {
  const auto t = tiny_instance(803, 10, 1, 0, 0.1, false, 0.0);
  CHECK_THROWS_AS(deconv::lambda_max_bound(t.X, t.Y, t.pi, -1), ParameterError);
  CHECK_THROWS_AS(deconv::lambda_max_bound(t.X, t.Y, t.pi, 4), ParameterError);
}

TEST_CASE("tail weights grow with truncated delay mass") {
  const auto pi = discretized_gamma(8.0, 7.2, 30);
  const Date p0 = Date::parse("2021-01-01");
  const std::int64_t n = 50;
  const auto w = deconv::tail_weights(pi, n, p0);
  REQUIRE(w.size() == static_cast<std::size_t>(n - 1));
  // early rows carry no weight; the last d+1 rows grow as the difference
  // endpoint nears the series end and less delay mass has reported
  const std::size_t first = w.size() - 31;  // d + 1 = 31 weighted rows
  for (std::size_t i = 0; i < first; ++i) CHECK(w[i] == 0.0);
  for (std::size_t i = first; i < w.size(); ++i) {
    CHECK(w[i] > 0.0);
    if (i > first) CHECK(w[i] >= w[i - 1]);
  }
  // j days back from the end the weight is 1 / F(j - 1)
  for (int j = 1; j <= 5; ++j) {
    const std::size_t idx = w.size() - static_cast<std::size_t>(j);
    CHECK(w[idx] == Catch::Approx(1.0 / std::max(pi.cdf(j - 1), 1e-12)));
  }
}
