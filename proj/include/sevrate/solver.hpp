#ifndef SEVRATE_SOLVER_HPP
#define SEVRATE_SOLVER_HPP

// Trend-filtering-regularized Poisson deconvolution.  The retrospective
// problem minimizes, over rate curves p in [0,1]^{n_y + d},
//
//   (1/N) sum_t [ mu_t(p) - Y_t log mu_t(p) ]  +  (lambda/r) ||D^(m+1) p||_1
//
// with mu = A p the delay convolution and r the number of difference rows.
// The real-time variant adds (gamma/(d+1)) ||W D^(1) p||_2^2 with tail
// weights w_t = 1 / F_hat(T - t) on the last d+1 days and pins the trailing
// (m+1)-st difference to zero.  Solved by ADMM on the splitting
// q = [A p; D p; p] with closed-form proximal steps; the test suite checks
// objective agreement against an independent interior-point reference.

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "sevrate/core.hpp"
#include "sevrate/smooth.hpp"

namespace sevrate::deconv {

struct DeconvSpec {
  int m = 0;               // trend order: piecewise polynomial degree of p
  double lambda = 0;       // l1 penalty on D^(m+1) p
  double gamma = 0;        // squared penalty on tail first differences
  bool tail_constraint = false;  // pin trailing (m+1)-st difference to zero
};

struct FitOptions {
  double tol = 1e-7;       // absolute primal/dual residual target (inf norm)
  int max_iter = 20000;
  double rho = 1.0;        // initial ADMM penalty
  bool adapt_rho = true;
  bool polish = true;      // refit the exact polynomial when no knots remain
  const std::vector<std::uint8_t>* loss_mask = nullptr;  // 1 = day in loss
  const std::vector<double>* warm = nullptr;  // primal warm start, length n_p
};

struct FitResult {
  SeverityCurve curve;      // spans [Y.origin - d, Y.last]
  double objective = 0;
  int iterations = 0;
  bool converged = false;
  std::vector<std::int64_t> knots;  // indices i with |(D^(m+1) p)_i| > 1e-6
  int burn = 0;             // entries at each end to exclude from evaluation
  double rho_final = 0;
};

// Tail weights for the real-time difference penalty, aligned to the rows of
// D^(1) on the p axis (row i weights the difference p_{i+1} - p_i): zero
// except on the last d+1 rows, where the difference ending at day t gets
// 1 / F_hat^{(T)}(T - t).
inline std::vector<double> tail_weights(const DelayDistribution& pi,
                                        std::int64_t n_p, Date p_origin) {
  const int d = pi.max_delay();
  detail::require<DimensionError>(n_p >= 2, "need at least two rate days");
  std::vector<double> w(static_cast<std::size_t>(n_p - 1), 0.0);
  const Date T = p_origin + (n_p - 1);
  const auto& pmf = pi.pmf_at(T);
  std::vector<double> cdf(pmf.size());
  double acc = 0;
  for (std::size_t k = 0; k < pmf.size(); ++k) {
    acc += pmf[k];
    cdf[k] = acc;
  }
  for (std::int64_t i = n_p - 2; i >= 0; --i) {
    const std::int64_t t = i + 1;  // day index of the difference's endpoint
    const std::int64_t back = (n_p - 1) - t;
    if (back > d) break;
    const double F = std::max(cdf[static_cast<std::size_t>(back)], 1e-12);
    w[static_cast<std::size_t>(i)] = 1.0 / F;
  }
  return w;
}

namespace detail_solver {

constexpr double kLogGuard = 1e-10;

struct Problem {
  const ConvolutionOperator* A = nullptr;
  std::vector<double> Y;                // secondary counts as doubles
  std::vector<std::uint8_t> mask;       // per Y row, 1 = include in loss
  std::int64_t n_loss = 0;
  int m = 0;
  double lam = 0;                       // raw lambda
  double gam = 0;                       // raw gamma
  std::vector<double> wtail;            // D^(1) row weights, empty if gam == 0
  bool tail_eq = false;
  bool gaussian = false;
  std::vector<double> mu_hat;           // gaussian plug-in variances
  std::int64_t n() const { return A->cols(); }
  std::int64_t r() const { return n() - m - 1; }
  double lam_norm() const { return lam / static_cast<double>(r()); }
  double gam_norm() const { return gam / static_cast<double>(A->max_delay() + 1); }
};

inline double eval_objective(const Problem& P, const Eigen::VectorXd& p) {
  const auto ny = P.A->rows();
  std::vector<double> mu(static_cast<std::size_t>(ny));
  P.A->apply(p.data(), mu.data());
  double loss = 0;
  for (std::int64_t t = 0; t < ny; ++t) {
    if (!P.mask[static_cast<std::size_t>(t)]) continue;
    const double y = P.Y[static_cast<std::size_t>(t)];
    if (P.gaussian) {
      const double dlt = y - mu[static_cast<std::size_t>(t)];
      loss += dlt * dlt / P.mu_hat[static_cast<std::size_t>(t)];
    } else {
      loss += mu[static_cast<std::size_t>(t)];
      if (y > 0)
        loss -= y * std::log(std::max(mu[static_cast<std::size_t>(t)], kLogGuard));
    }
  }
  loss /= static_cast<double>(P.n_loss);
  const auto c = diff_coeffs(P.m + 1);
  double pen1 = 0;
  for (std::int64_t i = 0; i < P.r(); ++i) {
    double s = 0;
    for (int j = 0; j <= P.m + 1; ++j) s += c[static_cast<std::size_t>(j)] * p[i + j];
    pen1 += std::abs(s);
  }
  double pen2 = 0;
  if (P.gam > 0)
    for (std::int64_t i = 0; i + 1 < P.n(); ++i) {
      const double dd = p[i + 1] - p[i];
      pen2 += P.wtail[static_cast<std::size_t>(i)] * dd * dd;
    }
  return loss + P.lam_norm() * pen1 + P.gam_norm() * pen2;
}

// Lower-band symmetric storage: at(j, delta) = H(j, j - delta), delta <= bw.
struct BandMatrix {
  std::int64_t n = 0;
  int bw = 0;
  std::vector<double> v;
  void init(std::int64_t n_, int bw_) {
    n = n_;
    bw = bw_;
    v.assign(static_cast<std::size_t>(n) * (bw + 1), 0.0);
  }
  double& at(std::int64_t j, int delta) {
    return v[static_cast<std::size_t>(j) * (bw + 1) + static_cast<std::size_t>(delta)];
  }
  double at(std::int64_t j, int delta) const {
    return v[static_cast<std::size_t>(j) * (bw + 1) + static_cast<std::size_t>(delta)];
  }
};

inline Eigen::SparseMatrix<double> band_to_sparse(const BandMatrix& B) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(B.n) * (B.bw + 1) * 2);
  for (std::int64_t j = 0; j < B.n; ++j)
    for (int dl = 0; dl <= B.bw && j - dl >= 0; ++dl) {
      const double x = B.at(j, dl);
      if (x == 0 && dl > 0) continue;
      trip.emplace_back(j, j - dl, x);
      if (dl > 0) trip.emplace_back(j - dl, j, x);
    }
  Eigen::SparseMatrix<double> S(B.n, B.n);
  S.setFromTriplets(trip.begin(), trip.end());
  return S;
}

// Projection of v onto {x in [0,1]^s : c' x = 0} via the exact piecewise-
// linear dual: x(nu) = clamp(v - nu c, 0, 1), g(nu) = c' x(nu) nonincreasing
// and continuous, so the root lies on a single linear segment between
// adjacent clamp breakpoints.
inline void project_box_hyperplane(const std::vector<double>& c,
                                   std::vector<double>& v) {
  const std::size_t s = c.size();
  std::vector<double> bk;
  bk.reserve(2 * s);
  for (std::size_t j = 0; j < s; ++j) {
    bk.push_back(v[j] / c[j]);
    bk.push_back((v[j] - 1) / c[j]);
  }
  std::sort(bk.begin(), bk.end());
  auto g = [&](double nu) {
    double t = 0;
    for (std::size_t j = 0; j < s; ++j)
      t += c[j] * std::clamp(v[j] - nu * c[j], 0.0, 1.0);
    return t;
  };
  double lo = bk.front(), hi = bk.back();
  double glo = g(lo), ghi = g(hi);
  double nu;
  if (glo <= 0) {
    nu = lo;
    // root is at or left of the first breakpoint, where g is constant
  } else if (ghi >= 0) {
    nu = hi;
  } else {
    for (std::size_t i = 1; i < bk.size(); ++i) {
      const double gi = g(bk[i]);
      if (gi < 0) {
        hi = bk[i];
        ghi = gi;
        break;
      }
      lo = bk[i];
      glo = gi;
    }
    const double slope = (ghi - glo) / (hi - lo);
    nu = (slope != 0) ? lo - glo / slope : 0.5 * (lo + hi);
  }
  for (std::size_t j = 0; j < s; ++j) v[j] = std::clamp(v[j] - nu * c[j], 0.0, 1.0);
}

inline FitResult admm_solve(const Problem& P, const FitOptions& opt) {
  const ConvolutionOperator& A = *P.A;
  const std::int64_t n = P.n(), ny = A.rows(), r = P.r();
  const int d = A.max_delay();
  const int m1 = P.m + 1;

  // usable loss rows; Poisson rows with zero exposure and zero count drop out
  // (their loss term is identically zero)
  std::vector<std::int64_t> tr;
  tr.reserve(static_cast<std::size_t>(ny));
  for (std::int64_t t = 0; t < ny; ++t) {
    if (!P.mask[static_cast<std::size_t>(t)]) continue;
    if (!P.gaussian && A.row_total(t) <= 0) {
      detail::require<FeasibilityError>(
          P.Y[static_cast<std::size_t>(t)] <= 0,
          "secondary count at " + (A.y_origin() + t).str() +
              " has zero convolved exposure");
      continue;
    }
    tr.push_back(t);
  }
  detail::require<ParameterError>(P.gaussian || !tr.empty(), "no usable loss days");
  const auto n_tr = static_cast<std::int64_t>(tr.size());
  const double N = static_cast<double>(P.n_loss);

  // Scaled band copy of the loss rows: Poisson rows are divided by their
  // total exposure so every split block lives on an O(1) scale.
  std::vector<double> sig(static_cast<std::size_t>(n_tr), 1.0);
  std::vector<double> aband(static_cast<std::size_t>(n_tr) * (d + 1));
  for (std::int64_t a = 0; a < n_tr; ++a) {
    const std::int64_t i = tr[static_cast<std::size_t>(a)];
    if (!P.gaussian)
      sig[static_cast<std::size_t>(a)] = std::max(A.row_total(i), 1e-8);
    const double s = sig[static_cast<std::size_t>(a)];
    for (int k = 0; k <= d; ++k)
      aband[static_cast<std::size_t>(a) * (d + 1) + static_cast<std::size_t>(k)] =
          A.entry(i, i + d - k) / s;
  }

  const auto cdiff = diff_coeffs(m1);
  const double lamn = P.lam_norm(), gamn = P.gam_norm();
  const int bw = std::max(d, m1);

  // rho-scaled part of the quadratic: Ahat'Ahat (poisson) + D'D + I
  BandMatrix Hb;
  Hb.init(n, bw);
  if (!P.gaussian) {
    for (std::int64_t a = 0; a < n_tr; ++a) {
      const std::int64_t i = tr[static_cast<std::size_t>(a)];
      const double* row = aband.data() + static_cast<std::size_t>(a) * (d + 1);
      for (int k1 = 0; k1 <= d; ++k1) {
        if (row[k1] == 0) continue;
        for (int k2 = k1; k2 <= d; ++k2)
          if (row[k2] != 0) Hb.at(i + d - k1, k2 - k1) += row[k1] * row[k2];
      }
    }
  }
  for (std::int64_t i = 0; i < r; ++i)
    for (int a = 0; a <= m1; ++a)
      for (int b2 = 0; b2 <= a; ++b2)
        Hb.at(i + a, a - b2) +=
            cdiff[static_cast<std::size_t>(a)] * cdiff[static_cast<std::size_t>(b2)];
  for (std::int64_t j = 0; j < n; ++j) Hb.at(j, 0) += 1.0;

  // rho-independent part: 2*gamn*D1'W^2 D1 plus the gaussian data term
  BandMatrix Qb;
  Qb.init(n, bw);
  if (P.gam > 0)
    for (std::int64_t i = 0; i + 1 < n; ++i) {
      const double w = 2 * gamn * P.wtail[static_cast<std::size_t>(i)];
      if (w == 0) continue;
      Qb.at(i, 0) += w;
      Qb.at(i + 1, 0) += w;
      Qb.at(i + 1, 1) -= w;
    }
  Eigen::VectorXd q_rhs = Eigen::VectorXd::Zero(n);
  if (P.gaussian) {
    for (std::int64_t a = 0; a < n_tr; ++a) {
      const std::int64_t i = tr[static_cast<std::size_t>(a)];
      const double* row = aband.data() + static_cast<std::size_t>(a) * (d + 1);
      const double v = 2.0 / (N * P.mu_hat[static_cast<std::size_t>(i)]);
      for (int k1 = 0; k1 <= d; ++k1) {
        if (row[k1] == 0) continue;
        q_rhs[i + d - k1] += v * row[k1] * P.Y[static_cast<std::size_t>(i)];
        for (int k2 = k1; k2 <= d; ++k2)
          if (row[k2] != 0) Qb.at(i + d - k1, k2 - k1) += v * row[k1] * row[k2];
      }
    }
  }

  // tail equality c'p = 0 over the last m+2 coordinates
  const std::vector<double>& ctail = cdiff;
  const std::int64_t coff = n - m1 - 1;

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> fact;
  Eigen::VectorXd hc;
  double rho = opt.rho;
  bool pattern_done = false;
  auto refactor = [&]() {
    BandMatrix Hfull = Qb;
    for (std::int64_t j = 0; j < n; ++j)
      for (int dl = 0; dl <= bw; ++dl) Hfull.at(j, dl) += rho * Hb.at(j, dl);
    Eigen::SparseMatrix<double> S = band_to_sparse(Hfull);
    if (!pattern_done) {
      fact.analyzePattern(S);
      pattern_done = true;
    }
    fact.factorize(S);
    detail::require<NumericError>(fact.info() == Eigen::Success,
                                  "ADMM factorization failed");
    if (P.tail_eq) {
      Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
      for (int j = 0; j <= m1; ++j) c[coff + j] = ctail[static_cast<std::size_t>(j)];
      hc = fact.solve(c);
    }
  };
  refactor();

  auto apply_D = [&](const Eigen::VectorXd& x, Eigen::VectorXd& out) {
    for (std::int64_t i = 0; i < r; ++i) {
      double s = 0;
      for (int j = 0; j <= m1; ++j) s += cdiff[static_cast<std::size_t>(j)] * x[i + j];
      out[i] = s;
    }
  };
  auto applyT_D = [&](const Eigen::VectorXd& v, Eigen::VectorXd& out) {
    out.setZero();
    for (std::int64_t i = 0; i < r; ++i)
      for (int j = 0; j <= m1; ++j)
        out[i + j] += cdiff[static_cast<std::size_t>(j)] * v[i];
  };
  auto apply_Ahat = [&](const Eigen::VectorXd& x, Eigen::VectorXd& out) {
    for (std::int64_t a = 0; a < n_tr; ++a) {
      const std::int64_t i = tr[static_cast<std::size_t>(a)];
      const double* row = aband.data() + static_cast<std::size_t>(a) * (d + 1);
      double s = 0;
      for (int k = 0; k <= d; ++k) s += row[k] * x[i + d - k];
      out[a] = s;
    }
  };
  auto applyT_Ahat = [&](const Eigen::VectorXd& v, Eigen::VectorXd& out) {
    out.setZero();
    for (std::int64_t a = 0; a < n_tr; ++a) {
      const std::int64_t i = tr[static_cast<std::size_t>(a)];
      const double* row = aband.data() + static_cast<std::size_t>(a) * (d + 1);
      for (int k = 0; k <= d; ++k) out[i + d - k] += row[k] * v[a];
    }
  };

  // start from the best constant rate
  double c0 = 0.5;
  {
    double sy = 0, se = 0;
    for (std::int64_t a = 0; a < n_tr; ++a) {
      const std::int64_t i = tr[static_cast<std::size_t>(a)];
      sy += P.Y[static_cast<std::size_t>(i)];
      se += A.row_total(i);
    }
    if (se > 0) c0 = std::clamp(sy / se, 0.0, 1.0);
  }
  const bool use_w = !P.gaussian;
  Eigen::VectorXd p = Eigen::VectorXd::Constant(n, c0);
  if (opt.warm && static_cast<std::int64_t>(opt.warm->size()) == n)
    for (std::int64_t j = 0; j < n; ++j)
      p[j] = std::clamp((*opt.warm)[static_cast<std::size_t>(j)], 0.0, 1.0);
  Eigen::VectorXd w(use_w ? n_tr : 0), uw = Eigen::VectorXd::Zero(use_w ? n_tr : 0);
  if (use_w) apply_Ahat(p, w);
  Eigen::VectorXd z(r), uz = Eigen::VectorXd::Zero(r);
  apply_D(p, z);
  Eigen::VectorXd b = p, ub = Eigen::VectorXd::Zero(n);

  Eigen::VectorXd Ap(use_w ? n_tr : 0), Dp(r), rhs(n), tmp_n(n), tn2(n);
  Eigen::VectorXd w_old, z_old, b_old;
  const double relax = 1.7;

  double best_obj = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_b = b;
  int it = 0;
  bool converged = false;

  for (it = 1; it <= opt.max_iter; ++it) {
    rhs = q_rhs;
    if (use_w) {
      Eigen::VectorXd vw = w - uw;
      applyT_Ahat(vw, tmp_n);
      rhs += rho * tmp_n;
    }
    Eigen::VectorXd vz = z - uz;
    applyT_D(vz, tmp_n);
    rhs += rho * tmp_n;
    rhs += rho * (b - ub);
    p = fact.solve(rhs);
    if (P.tail_eq) {
      double cp = 0, chc = 0;
      for (int j = 0; j <= m1; ++j) {
        cp += ctail[static_cast<std::size_t>(j)] * p[coff + j];
        chc += ctail[static_cast<std::size_t>(j)] * hc[coff + j];
      }
      if (chc != 0) p -= (cp / chc) * hc;
    }

    if (use_w) apply_Ahat(p, Ap);
    apply_D(p, Dp);

    w_old = w;
    z_old = z;
    b_old = b;

    if (use_w) {
      for (std::int64_t a = 0; a < n_tr; ++a) {
        const double v = relax * Ap[a] + (1 - relax) * w_old[a] + uw[a];
        const double y = P.Y[static_cast<std::size_t>(tr[static_cast<std::size_t>(a)])];
        const double s = sig[static_cast<std::size_t>(a)];
        if (y > 0) {
          const double bq = rho * v - s / N;
          const double disc = std::sqrt(bq * bq + 4 * rho * y / N);
          w[a] = (bq >= 0) ? (bq + disc) / (2 * rho) : (2 * y / N) / (disc - bq);
        } else {
          w[a] = std::max(v - s / (rho * N), 0.0);
        }
      }
    }
    const double thresh = lamn / rho;
    for (std::int64_t i = 0; i < r; ++i) {
      const double v = relax * Dp[i] + (1 - relax) * z_old[i] + uz[i];
      z[i] = (v > thresh) ? v - thresh : (v < -thresh ? v + thresh : 0.0);
    }
    {
      if (P.tail_eq) {
        std::vector<double> tail(static_cast<std::size_t>(m1) + 1);
        for (std::int64_t j = 0; j < coff; ++j)
          b[j] = std::clamp(relax * p[j] + (1 - relax) * b_old[j] + ub[j], 0.0, 1.0);
        for (int j = 0; j <= m1; ++j)
          tail[static_cast<std::size_t>(j)] =
              relax * p[coff + j] + (1 - relax) * b_old[coff + j] + ub[coff + j];
        project_box_hyperplane(ctail, tail);
        for (int j = 0; j <= m1; ++j) b[coff + j] = tail[static_cast<std::size_t>(j)];
      } else {
        for (std::int64_t j = 0; j < n; ++j)
          b[j] = std::clamp(relax * p[j] + (1 - relax) * b_old[j] + ub[j], 0.0, 1.0);
      }
    }

    double rinf = 0;
    if (use_w)
      for (std::int64_t a = 0; a < n_tr; ++a) {
        uw[a] += relax * Ap[a] + (1 - relax) * w_old[a] - w[a];
        rinf = std::max(rinf, std::abs(Ap[a] - w[a]));
      }
    for (std::int64_t i = 0; i < r; ++i) {
      uz[i] += relax * Dp[i] + (1 - relax) * z_old[i] - z[i];
      rinf = std::max(rinf, std::abs(Dp[i] - z[i]));
    }
    for (std::int64_t j = 0; j < n; ++j) {
      ub[j] += relax * p[j] + (1 - relax) * b_old[j] - b[j];
      rinf = std::max(rinf, std::abs(p[j] - b[j]));
    }

    double sinf = 0;
    {
      if (use_w) {
        Eigen::VectorXd dw = w - w_old;
        applyT_Ahat(dw, tmp_n);
      } else {
        tmp_n.setZero();
      }
      Eigen::VectorXd dz = z - z_old;
      applyT_D(dz, tn2);
      tmp_n += tn2;
      tmp_n += b - b_old;
      sinf = rho * tmp_n.lpNorm<Eigen::Infinity>();
    }

    if (rinf <= opt.tol && sinf <= opt.tol) {
      converged = true;
      break;
    }

    if (opt.adapt_rho && it % 10 == 0) {
      if (rinf > 10 * sinf && rho < 1e8) {
        rho *= 2;
        if (use_w) uw /= 2;
        uz /= 2;
        ub /= 2;
        refactor();
      } else if (sinf > 10 * rinf && rho > 1e-4) {
        rho /= 2;
        if (use_w) uw *= 2;
        uz *= 2;
        ub *= 2;
        refactor();
      }
    }
    if (it % 50 == 0) {
      const double o = eval_objective(P, b);
      if (o < best_obj) {
        best_obj = o;
        best_b = b;
      }
    }
  }

  Eigen::VectorXd sol = b;
  double obj = eval_objective(P, sol);
  if (!converged && best_obj < obj) {
    sol = best_b;
    obj = best_obj;
  }

  // Knot-free polish: when the auxiliary differences all sit at zero the
  // minimizer is a global degree-m polynomial; refit it exactly and keep the
  // refit only if it is feasible and does not raise the objective.
  bool no_knots = true;
  for (std::int64_t i = 0; i < r && no_knots; ++i)
    if (z[i] != 0) no_knots = false;
  if (opt.polish && no_knots) {
    Eigen::MatrixXd B(n, P.m + 1);
    for (std::int64_t i = 0; i < n; ++i) {
      const double t = (n > 1) ? 2.0 * i / static_cast<double>(n - 1) - 1.0 : 0.0;
      double pw = 1;
      for (int j = 0; j <= P.m; ++j) {
        B(i, j) = pw;
        pw *= t;
      }
    }
    Eigen::VectorXd alpha = (B.transpose() * B).ldlt().solve(B.transpose() * sol);
    bool ok = true;
    for (int step = 0; step < 60 && ok; ++step) {
      Eigen::VectorXd g = Eigen::VectorXd::Zero(P.m + 1);
      Eigen::MatrixXd Hm = Eigen::MatrixXd::Zero(P.m + 1, P.m + 1);
      Eigen::VectorXd pfull = B * alpha;
      for (std::int64_t a = 0; a < n_tr; ++a) {
        const std::int64_t i = tr[static_cast<std::size_t>(a)];
        double mu = 0;
        Eigen::VectorXd arow = Eigen::VectorXd::Zero(P.m + 1);
        for (int k = 0; k <= d; ++k) {
          const double e = A.entry(i, i + d - k);
          if (e == 0) continue;
          mu += e * pfull[i + d - k];
          arow += e * B.row(i + d - k).transpose();
        }
        const double y = P.Y[static_cast<std::size_t>(i)];
        if (P.gaussian) {
          const double vwt = 1.0 / (N * P.mu_hat[static_cast<std::size_t>(i)]);
          g += 2 * vwt * (mu - y) * arow;
          Hm += 2 * vwt * arow * arow.transpose();
        } else {
          if (y > 0 && mu <= 0) {
            ok = false;
            break;
          }
          g += (1.0 - (y > 0 ? y / std::max(mu, kLogGuard) : 0.0)) / N * arow;
          if (y > 0)
            Hm += (y / std::max(mu * mu, kLogGuard)) / N * arow * arow.transpose();
        }
      }
      if (!ok) break;
      if (P.gam > 0 && P.m >= 1) {
        for (std::int64_t i = 0; i + 1 < n; ++i) {
          const double wv = P.wtail[static_cast<std::size_t>(i)];
          if (wv == 0) continue;
          Eigen::VectorXd drow = (B.row(i + 1) - B.row(i)).transpose();
          g += 2 * gamn * wv * drow.dot(alpha) * drow;
          Hm += 2 * gamn * wv * drow * drow.transpose();
        }
      }
      for (int j = 0; j <= P.m; ++j) Hm(j, j) += 1e-12;
      Eigen::VectorXd nstep = Hm.ldlt().solve(g);
      if (!nstep.allFinite()) {
        ok = false;
        break;
      }
      const double ninf = nstep.lpNorm<Eigen::Infinity>();
      if (ninf > 1.0) nstep *= 1.0 / ninf;  // rates live in [0,1]
      alpha -= nstep;
      if (ninf < 1e-13) break;
    }
    if (ok) {
      Eigen::VectorXd cand = B * alpha;
      bool feas = true;
      for (std::int64_t i = 0; i < n && feas; ++i) {
        if (cand[i] < -1e-9 || cand[i] > 1 + 1e-9) feas = false;
      }
      if (feas) {
        for (std::int64_t i = 0; i < n; ++i) cand[i] = std::clamp(cand[i], 0.0, 1.0);
        if (P.tail_eq) {
          double cp = 0;
          for (int j = 0; j <= m1; ++j)
            cp += ctail[static_cast<std::size_t>(j)] * cand[coff + j];
          if (std::abs(cp) > 1e-9) feas = false;
        }
      }
      if (feas) {
        const double o = eval_objective(P, cand);
        if (o <= obj) {
          sol = cand;
          obj = o;
        }
      }
    }
  }

  FitResult res;
  res.burn = d;
  res.iterations = std::min(it, opt.max_iter);
  res.converged = converged;
  res.rho_final = rho;
  res.objective = obj;
  std::vector<double> pv(sol.data(), sol.data() + n);
  res.curve = SeverityCurve::checked(A.p_origin(), std::move(pv));
  const auto dif = diff_apply(m1, res.curve.p);
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(dif.size()); ++i)
    if (std::abs(dif[static_cast<std::size_t>(i)]) > 1e-6) res.knots.push_back(i);
  return res;
}

inline Problem make_problem(const ConvolutionOperator& A, const CountSeries& Y,
                            const DeconvSpec& spec, const FitOptions& opt) {
  detail::require<ParameterError>(spec.m >= 0 && spec.m <= 3,
                                  "trend order must be in {0,1,2,3}");
  detail::require<ParameterError>(spec.lambda >= 0 && spec.gamma >= 0,
                                  "penalties must be >= 0");
  detail::require<DimensionError>(A.cols() >= spec.m + 3,
                                  "series too short for this trend order");
  for (std::int64_t t = 0; t < Y.size(); ++t)
    detail::require<ValidationError>(
        Y.values[static_cast<std::size_t>(t)] >= 0,
        "negative secondary count at " + (Y.origin + t).str());
  Problem pr;
  pr.A = &A;
  pr.Y.assign(Y.values.begin(), Y.values.end());
  pr.mask.assign(static_cast<std::size_t>(Y.size()), 1);
  if (opt.loss_mask) {
    detail::require<DimensionError>(
        static_cast<std::int64_t>(opt.loss_mask->size()) == Y.size(),
        "loss mask length mismatch");
    pr.mask = *opt.loss_mask;
  }
  pr.n_loss = std::count(pr.mask.begin(), pr.mask.end(), 1);
  detail::require<ParameterError>(pr.n_loss > 0, "no days left in the loss");
  pr.m = spec.m;
  pr.lam = spec.lambda;
  pr.gam = spec.gamma;
  pr.tail_eq = spec.tail_constraint;
  return pr;
}

}  // namespace detail_solver

// ---------------------------------------------------------------------------
// Public objective, matching what the solvers minimize.

inline double objective(const SeverityCurve& p, const CountSeries& X,
                        const CountSeries& Y, const DelayDistribution& pi,
                        const DeconvSpec& spec,
                        const std::vector<std::uint8_t>* loss_mask = nullptr) {
  const int d = pi.max_delay();
  detail::require<AlignmentError>(p.origin == Y.origin - d,
                                  "curve must start d days before secondaries");
  detail::require<DimensionError>(p.size() == Y.size() + d,
                                  "curve length must be secondaries + d");
  ConvolutionOperator A(X, pi, Y.origin, Y.size());
  detail_solver::Problem pr;
  pr.A = &A;
  pr.Y.assign(Y.values.begin(), Y.values.end());
  pr.mask.assign(static_cast<std::size_t>(Y.size()), 1);
  if (loss_mask) {
    detail::require<DimensionError>(
        static_cast<std::int64_t>(loss_mask->size()) == Y.size(),
        "loss mask length mismatch");
    pr.mask = *loss_mask;
  }
  pr.n_loss = std::count(pr.mask.begin(), pr.mask.end(), 1);
  detail::require<ParameterError>(pr.n_loss > 0, "no days left in the loss");
  pr.m = spec.m;
  pr.lam = spec.lambda;
  pr.gam = spec.gamma;
  if (spec.gamma > 0) pr.wtail = tail_weights(pi, A.cols(), A.p_origin());
  Eigen::VectorXd pv = Eigen::Map<const Eigen::VectorXd>(p.p.data(), p.size());
  const double obj = detail_solver::eval_objective(pr, pv);
  detail::require<NumericError>(std::isfinite(obj), "objective is not finite");
  return obj;
}

inline double objective_gaussian(const SeverityCurve& p, const CountSeries& X,
                                 const CountSeries& Y, const DelayDistribution& pi,
                                 const DeconvSpec& spec,
                                 const std::vector<double>& mu_hat,
                                 const std::vector<std::uint8_t>* loss_mask = nullptr) {
  const int d = pi.max_delay();
  detail::require<AlignmentError>(p.origin == Y.origin - d,
                                  "curve must start d days before secondaries");
  detail::require<DimensionError>(p.size() == Y.size() + d,
                                  "curve length must be secondaries + d");
  detail::require<DimensionError>(
      static_cast<std::int64_t>(mu_hat.size()) == Y.size(),
      "plug-in variance length mismatch");
  for (std::size_t t = 0; t < mu_hat.size(); ++t)
    detail::require<ParameterError>(
        mu_hat[t] > 0, "plug-in variance <= 0 at index " + std::to_string(t));
  ConvolutionOperator A(X, pi, Y.origin, Y.size());
  detail_solver::Problem pr;
  pr.A = &A;
  pr.Y.assign(Y.values.begin(), Y.values.end());
  pr.mask.assign(static_cast<std::size_t>(Y.size()), 1);
  if (loss_mask) pr.mask = *loss_mask;
  pr.n_loss = std::count(pr.mask.begin(), pr.mask.end(), 1);
  detail::require<ParameterError>(pr.n_loss > 0, "no days left in the loss");
  pr.m = spec.m;
  pr.lam = spec.lambda;
  pr.gam = spec.gamma;
  pr.gaussian = true;
  pr.mu_hat = mu_hat;
  if (spec.gamma > 0) pr.wtail = tail_weights(pi, A.cols(), A.p_origin());
  Eigen::VectorXd pv = Eigen::Map<const Eigen::VectorXd>(p.p.data(), p.size());
  const double obj = detail_solver::eval_objective(pr, pv);
  detail::require<NumericError>(std::isfinite(obj), "objective is not finite");
  return obj;
}

// Gradient of the smooth objective part (loss plus tail penalty; the l1
// trend penalty is excluded).  Same alignment contract as objective().
inline std::vector<double> smooth_gradient(const SeverityCurve& p,
                                           const CountSeries& X,
                                           const CountSeries& Y,
                                           const DelayDistribution& pi,
                                           const DeconvSpec& spec) {
  const int d = pi.max_delay();
  detail::require<AlignmentError>(p.origin == Y.origin - d,
                                  "curve must start d days before secondaries");
  detail::require<DimensionError>(p.size() == Y.size() + d,
                                  "curve length must be secondaries + d");
  ConvolutionOperator A(X, pi, Y.origin, Y.size());
  const std::int64_t ny = Y.size(), np = A.cols();
  std::vector<double> mu(static_cast<std::size_t>(ny));
  A.apply(p.p.data(), mu.data());
  std::vector<double> v(static_cast<std::size_t>(ny));
  for (std::int64_t t = 0; t < ny; ++t) {
    const double y = static_cast<double>(Y.values[static_cast<std::size_t>(t)]);
    const double m = std::max(mu[static_cast<std::size_t>(t)],
                              detail_solver::kLogGuard);
    v[static_cast<std::size_t>(t)] =
        (y > 0 ? 1.0 - y / m : 1.0) / static_cast<double>(ny);
  }
  std::vector<double> g(static_cast<std::size_t>(np));
  A.apply_transpose(v.data(), g.data());
  if (spec.gamma > 0) {
    const auto w = tail_weights(pi, np, A.p_origin());
    const double gn = spec.gamma / static_cast<double>(d + 1);
    for (std::int64_t i = 0; i + 1 < np; ++i) {
      const double dd = p.p[static_cast<std::size_t>(i + 1)] -
                        p.p[static_cast<std::size_t>(i)];
      g[static_cast<std::size_t>(i)] -= 2 * gn * w[static_cast<std::size_t>(i)] * dd;
      g[static_cast<std::size_t>(i + 1)] +=
          2 * gn * w[static_cast<std::size_t>(i)] * dd;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Public solvers.

inline FitResult solve(const CountSeries& X, const CountSeries& Y,
                       const DelayDistribution& pi, const DeconvSpec& spec,
                       const FitOptions& opt = {}) {
  ConvolutionOperator A(X, pi, Y.origin, Y.size());
  auto pr = detail_solver::make_problem(A, Y, spec, opt);
  if (spec.gamma > 0) pr.wtail = tail_weights(pi, A.cols(), A.p_origin());
  return detail_solver::admm_solve(pr, opt);
}

inline FitResult solve_retrospective(const CountSeries& X, const CountSeries& Y,
                                     const DelayDistribution& pi, int m,
                                     double lambda, const FitOptions& opt = {}) {
  return solve(X, Y, pi, DeconvSpec{m, lambda, 0.0, false}, opt);
}

// Real-time fit on data through T = Y.last_date(): tail-weighted difference
// penalty plus the trailing difference constraint.
inline FitResult solve_realtime(const CountSeries& X, const CountSeries& Y,
                                const DelayDistribution& pi, int m, double lambda,
                                double gamma, const FitOptions& opt = {}) {
  return solve(X, Y, pi, DeconvSpec{m, lambda, gamma, true}, opt);
}

// Gaussian variant: squared error weighted by plug-in variances mu_hat,
// estimated by the penalized smoother when not supplied (the internal
// estimate is floored at a small positive value; a supplied nonpositive
// variance is an error).
inline FitResult solve_gaussian(const CountSeries& X, const CountSeries& Y,
                                const DelayDistribution& pi, const DeconvSpec& spec,
                                const FitOptions& opt = {},
                                const std::vector<double>* mu_hat = nullptr) {
  ConvolutionOperator A(X, pi, Y.origin, Y.size());
  auto pr = detail_solver::make_problem(A, Y, spec, opt);
  pr.gaussian = true;
  if (spec.gamma > 0) pr.wtail = tail_weights(pi, A.cols(), A.p_origin());
  if (mu_hat) {
    detail::require<DimensionError>(
        static_cast<std::int64_t>(mu_hat->size()) == Y.size(),
        "plug-in variance length mismatch");
    for (std::size_t t = 0; t < mu_hat->size(); ++t)
      detail::require<ParameterError>(
          (*mu_hat)[t] > 0, "plug-in variance <= 0 at " +
                                (Y.origin + static_cast<std::int64_t>(t)).str());
    pr.mu_hat = *mu_hat;
  } else {
    std::vector<double> yv(Y.values.begin(), Y.values.end());
    auto fit = whittaker_gcv(yv);
    pr.mu_hat = fit.fitted;
    for (double& v : pr.mu_hat) v = std::max(v, 0.5);
  }
  return detail_solver::admm_solve(pr, opt);
}

// ---------------------------------------------------------------------------
// Upper bound on the smallest lambda whose solution is a global degree-m
// polynomial.  At the loss-optimal polynomial p* = B alpha* (B spanning
// polynomials, optimum interior to the box) the reduced gradient B'g
// vanishes, so g = grad_loss(p*) lies in the row space of D and
//
//   v = -(D D')^{-1} D g  solves  D' v = -g .
//
// For every lambda >= r * ||v||_inf the vector (r/lambda) v is a valid
// subgradient of ||.||_1 at D p* = 0, making p* optimal.  Stated in the
// solver's normalization (loss / N, penalty lambda / r).

inline double lambda_max_bound(const CountSeries& X, const CountSeries& Y,
                               const DelayDistribution& pi, int m) {
  detail::require<ParameterError>(m >= 0 && m <= 3, "trend order must be in {0,1,2,3}");
  ConvolutionOperator A(X, pi, Y.origin, Y.size());
  const std::int64_t n = A.cols(), ny = A.rows(), r = n - m - 1;
  detail::require<DimensionError>(r >= 1, "series too short for this trend order");
  const double N = static_cast<double>(ny);

  Eigen::SparseMatrix<double> D = diff_matrix_sparse(m + 1, n);
  Eigen::SparseMatrix<double> DDt = D * Eigen::SparseMatrix<double>(D.transpose());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> fd(DDt);
  detail::require<NumericError>(fd.info() == Eigen::Success,
                                "difference Gram factorization failed");

  // orthonormal polynomial basis on a centred grid for conditioning
  Eigen::MatrixXd B(n, m + 1);
  for (std::int64_t i = 0; i < n; ++i) {
    const double t = (n > 1) ? 2.0 * i / static_cast<double>(n - 1) - 1.0 : 0.0;
    double pw = 1;
    for (int j = 0; j <= m; ++j) {
      B(i, j) = pw;
      pw *= t;
    }
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(B);
  B = qr.householderQ() * Eigen::MatrixXd::Identity(n, m + 1);

  Eigen::VectorXd yv(ny);
  double ysum = 0, esum = 0;
  for (std::int64_t t = 0; t < ny; ++t) {
    detail::require<ValidationError>(Y.values[static_cast<std::size_t>(t)] >= 0,
                                     "negative secondary count at " +
                                         (Y.origin + t).str());
    yv[t] = static_cast<double>(Y.values[static_cast<std::size_t>(t)]);
    detail::require<FeasibilityError>(yv[t] <= 0 || A.row_total(t) > 0,
                                      "secondary count at " + (Y.origin + t).str() +
                                          " has zero convolved exposure");
    ysum += yv[t];
    esum += A.row_total(t);
  }

  auto loss_at = [&](const Eigen::VectorXd& alpha, Eigen::VectorXd* mu_out) {
    Eigen::VectorXd pfull = B * alpha;
    Eigen::VectorXd mu(ny);
    A.apply(pfull.data(), mu.data());
    double f = 0;
    for (std::int64_t t = 0; t < ny; ++t) {
      if (yv[t] > 0 && mu[t] <= 0) return std::numeric_limits<double>::infinity();
      f += mu[t];
      if (yv[t] > 0) f -= yv[t] * std::log(mu[t]);
    }
    if (mu_out) *mu_out = mu;
    return f / N;
  };
  auto feasible = [&](const Eigen::VectorXd& alpha) {
    Eigen::VectorXd pf = B * alpha;
    return pf.minCoeff() >= 0 && pf.maxCoeff() <= 1;
  };

  // damped Newton on the restricted loss, starting from the pooled rate
  const double c0 = std::clamp(esum > 0 ? ysum / esum : 0.5, 1e-6, 1.0 - 1e-6);
  Eigen::VectorXd alpha = B.transpose() * Eigen::VectorXd::Constant(n, c0);
  Eigen::VectorXd mu(ny), grad(m + 1);
  double f0 = loss_at(alpha, &mu);
  detail::require<NumericError>(std::isfinite(f0),
                                "infeasible polynomial start for lambda bound");
  int endgame = 0;
  for (int iter = 0; iter < 100; ++iter) {
    // grad = B'A'(1 - y/mu)/N,  hess = B'A' diag(y/mu^2) A B / N
    Eigen::VectorXd v(ny), w(ny);
    for (std::int64_t t = 0; t < ny; ++t) {
      v[t] = (yv[t] > 0) ? 1.0 - yv[t] / mu[t] : 1.0;
      w[t] = (yv[t] > 0) ? yv[t] / (mu[t] * mu[t]) : 0.0;
    }
    Eigen::VectorXd gn(n);
    A.apply_transpose(v.data(), gn.data());
    const double gscale = std::max(1.0, gn.lpNorm<Eigen::Infinity>() / N);
    grad = B.transpose() * gn / N;
    if (grad.lpNorm<Eigen::Infinity>() <= 1e-12 * gscale) break;
    Eigen::MatrixXd AB(ny, m + 1);
    for (int j = 0; j <= m; ++j) {
      Eigen::VectorXd col = B.col(j);
      Eigen::VectorXd out(ny);
      A.apply(col.data(), out.data());
      AB.col(j) = out;
    }
    Eigen::MatrixXd H = AB.transpose() * w.asDiagonal() * AB / N;
    for (int j = 0; j <= m; ++j) H(j, j) += 1e-14;  // all-zero-count guard
    Eigen::VectorXd step = H.ldlt().solve(grad);
    double s = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      Eigen::VectorXd cand = alpha - s * step;
      if (feasible(cand)) {
        const double fc = loss_at(cand, &mu);
        if (fc < f0 - 1e-16) {
          alpha = cand;
          f0 = fc;
          moved = true;
          break;
        }
      }
      s *= 0.5;
    }
    if (!moved) {
      // loss changes are below double resolution here; finish the quadratic
      // endgame with a few full Newton steps judged by the gradient alone
      Eigen::VectorXd cand = alpha - step;
      if (endgame < 6 && grad.lpNorm<Eigen::Infinity>() <= 1e-3 * gscale &&
          feasible(cand)) {
        ++endgame;
        alpha = cand;
        f0 = loss_at(alpha, &mu);
        continue;
      }
      (void)loss_at(alpha, &mu);  // restore mu for the final gradient
      break;
    }
  }

  // the subgradient representation needs the reduced gradient to vanish;
  // a box-pinned polynomial fit cannot certify a bound
  Eigen::VectorXd v(ny);
  for (std::int64_t t = 0; t < ny; ++t)
    v[t] = (yv[t] > 0) ? 1.0 - yv[t] / mu[t] : 1.0;
  Eigen::VectorXd gfull(n);
  A.apply_transpose(v.data(), gfull.data());
  gfull /= N;
  detail::require<NumericError>(
      (B.transpose() * gfull).lpNorm<Eigen::Infinity>() <=
          1e-8 * std::max(1.0, gfull.lpNorm<Eigen::Infinity>()),
      "polynomial loss fit did not reach stationarity");

  const Eigen::VectorXd h = fd.solve(D * gfull);
  const double bound = static_cast<double>(r) * h.lpNorm<Eigen::Infinity>();
  detail::require<NumericError>(std::isfinite(bound), "lambda bound not finite");
  // headroom so the property "polynomial at the bound" survives roundoff
  return std::max(bound * (1 + 1e-6), 1e-12);
}

}  // namespace sevrate::deconv

#endif  // SEVRATE_SOLVER_HPP
