#ifndef SEVRATE_TESTS_REFERENCE_SOLVER_HPP
#define SEVRATE_TESTS_REFERENCE_SOLVER_HPP

// Generic dense log-barrier interior-point solver for the penalized
// deconvolution objective on tiny instances.  Used only as a correctness
// reference: everything is dense, no structure is exploited, and tolerances
// are pushed far beyond what the production solver targets.
//
// minimize  (1/N) sum_t [mu_t - y_t log mu_t]        (or gaussian quadratic)
//         + (lambda/r) ||D^(m+1) p||_1
//         + (gamma/(d+1)) ||W D^(1) p||_2^2          (optional)
// subject to 0 <= p <= 1, optionally c' p = 0 (tail equality).
//
// Splitting: x = [p; s], |D p| <= s elementwise.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "sevrate/core.hpp"
#include "sevrate/solver.hpp"

namespace refsolve {

struct RefProblem {
  Eigen::MatrixXd A;       // n_y x n_p convolution matrix
  Eigen::VectorXd y;       // secondary counts
  int m = 0;               // trend order
  double lambda = 0;
  double gamma = 0;        // tail penalty weight (0 = off)
  Eigen::VectorXd wtail;   // D1-row weights, size n_p - 1 (used when gamma > 0)
  bool tail_eq = false;    // last D^(m+1) row pinned to zero
  bool gaussian = false;
  Eigen::VectorXd mu_hat;  // gaussian plug-in variances
};

struct RefResult {
  Eigen::VectorXd p;
  double objective = 0;
};

inline Eigen::MatrixXd dense_diff(int order, std::int64_t n) {
  const auto c = sevrate::diff_coeffs(order);
  const std::int64_t r = n - order;
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(r, n);
  for (std::int64_t i = 0; i < r; ++i)
    for (int j = 0; j <= order; ++j) D(i, i + j) = c[static_cast<std::size_t>(j)];
  return D;
}

inline RefResult solve(const RefProblem& prob) {
  const std::int64_t np = prob.A.cols();
  const std::int64_t ny = prob.A.rows();
  const Eigen::MatrixXd D = dense_diff(prob.m + 1, np);
  const std::int64_t r = D.rows();
  const double lam_n = prob.lambda / static_cast<double>(r);
  const double gam_n =
      prob.gamma / static_cast<double>(np - ny + 1);  // d + 1 = np - ny + 1
  const std::int64_t nx = np + r;

  Eigen::MatrixXd Qtail = Eigen::MatrixXd::Zero(np, np);  // 2*gam_n*D1'WD1
  if (prob.gamma > 0) {
    for (std::int64_t i = 0; i + 1 < np; ++i) {
      const double w = prob.wtail(i);
      Qtail(i, i) += w;
      Qtail(i + 1, i + 1) += w;
      Qtail(i, i + 1) -= w;
      Qtail(i + 1, i) -= w;
    }
    Qtail *= 2.0 * gam_n;
  }

  Eigen::VectorXd c_eq;
  if (prob.tail_eq) c_eq = D.row(r - 1).transpose();

  // smooth objective F(p) (loss + optional tail quadratic) and derivatives
  const auto smooth = [&](const Eigen::VectorXd& p, Eigen::VectorXd* grad,
                          Eigen::MatrixXd* hess) {
    const Eigen::VectorXd mu = prob.A * p;
    double f = 0;
    Eigen::VectorXd gp = Eigen::VectorXd::Zero(np);
    Eigen::MatrixXd hp;
    if (hess) hp = Eigen::MatrixXd::Zero(np, np);
    if (prob.gaussian) {
      for (std::int64_t t = 0; t < ny; ++t) {
        const double dlt = prob.y(t) - mu(t);
        f += dlt * dlt / prob.mu_hat(t);
        gp += (-2.0 * dlt / prob.mu_hat(t)) * prob.A.row(t).transpose();
        if (hess)
          hp += (2.0 / prob.mu_hat(t)) * prob.A.row(t).transpose() * prob.A.row(t);
      }
    } else {
      for (std::int64_t t = 0; t < ny; ++t) {
        f += mu(t);
        if (prob.y(t) > 0) {
          f -= prob.y(t) * std::log(std::max(mu(t), 1e-300));
          gp += (1.0 - prob.y(t) / mu(t)) * prob.A.row(t).transpose();
          if (hess)
            hp += (prob.y(t) / (mu(t) * mu(t))) * prob.A.row(t).transpose() *
                  prob.A.row(t);
        } else {
          gp += prob.A.row(t).transpose();
        }
      }
    }
    f /= static_cast<double>(ny);
    gp /= static_cast<double>(ny);
    if (hess) hp /= static_cast<double>(ny);
    if (prob.gamma > 0) {
      double q = 0;
      for (std::int64_t i = 0; i + 1 < np; ++i) {
        const double dd = p(i + 1) - p(i);
        q += prob.wtail(i) * dd * dd;
      }
      f += gam_n * q;
      gp += Qtail * p;
      if (hess) hp += Qtail;
    }
    if (grad) *grad = gp;
    if (hess) *hess = hp;
    return f;
  };

  // inequality slacks h - G x > 0 assembled on the fly:
  //   rows 0..r-1:        s - D p >= 0
  //   rows r..2r-1:       s + D p >= 0
  //   rows 2r..2r+np-1:   p >= 0
  //   rows ..+np:         1 - p >= 0
  const auto slacks = [&](const Eigen::VectorXd& x, Eigen::VectorXd& sl) {
    const auto p = x.head(np);
    const auto s = x.tail(r);
    const Eigen::VectorXd Dp = D * p;
    sl.resize(2 * r + 2 * np);
    sl.head(r) = s - Dp;
    sl.segment(r, r) = s + Dp;
    sl.segment(2 * r, np) = p;
    sl.segment(2 * r + np, np) = Eigen::VectorXd::Ones(np) - p;
  };

  Eigen::VectorXd x(nx);
  x.head(np).setConstant(0.5);
  {
    const Eigen::VectorXd Dp = D * x.head(np);
    for (std::int64_t i = 0; i < r; ++i) x(np + i) = std::abs(Dp(i)) + 1.0;
  }

  const double m_ineq = static_cast<double>(2 * r + 2 * np);
  double t_barrier = 1.0;
  Eigen::VectorXd sl;
  for (int outer = 0; outer < 60 && m_ineq / t_barrier > 1e-12; ++outer) {
    for (int it = 0; it < 200; ++it) {
      Eigen::VectorXd gs;
      Eigen::MatrixXd hs;
      smooth(x.head(np), &gs, &hs);
      Eigen::VectorXd g = Eigen::VectorXd::Zero(nx);
      Eigen::MatrixXd H = Eigen::MatrixXd::Zero(nx, nx);
      g.head(np) = t_barrier * gs;
      g.tail(r).setConstant(t_barrier * lam_n);
      H.topLeftCorner(np, np) = t_barrier * hs;
      slacks(x, sl);
      // barrier contributions; G rows are sparse so accumulate directly
      for (std::int64_t i = 0; i < r; ++i) {
        // row i: -(s_i - (Dp)_i): grad adds G_i / sl_i with G = [D, -I]
        const double inv = 1.0 / sl(i);
        const double inv2 = inv * inv;
        for (std::int64_t j = std::max<std::int64_t>(0, i);
             j <= std::min(np - 1, i + prob.m + 1); ++j) {
          g(j) += D(i, j) * inv;
          for (std::int64_t j2 = std::max<std::int64_t>(0, i);
               j2 <= std::min(np - 1, i + prob.m + 1); ++j2)
            H(j, j2) += D(i, j) * D(i, j2) * inv2;
          H(j, np + i) -= D(i, j) * inv2;
          H(np + i, j) -= D(i, j) * inv2;
        }
        g(np + i) -= inv;
        H(np + i, np + i) += inv2;
      }
      for (std::int64_t i = 0; i < r; ++i) {
        const double inv = 1.0 / sl(r + i);
        const double inv2 = inv * inv;
        for (std::int64_t j = std::max<std::int64_t>(0, i);
             j <= std::min(np - 1, i + prob.m + 1); ++j) {
          g(j) -= D(i, j) * inv;
          for (std::int64_t j2 = std::max<std::int64_t>(0, i);
               j2 <= std::min(np - 1, i + prob.m + 1); ++j2)
            H(j, j2) += D(i, j) * D(i, j2) * inv2;
          H(j, np + i) += D(i, j) * inv2;
          H(np + i, j) += D(i, j) * inv2;
        }
        g(np + i) -= inv;
        H(np + i, np + i) += inv2;
      }
      for (std::int64_t j = 0; j < np; ++j) {
        const double inv0 = 1.0 / sl(2 * r + j);
        const double inv1 = 1.0 / sl(2 * r + np + j);
        g(j) += -inv0 + inv1;
        H(j, j) += inv0 * inv0 + inv1 * inv1;
      }
      // Newton step, with the optional equality via KKT
      Eigen::VectorXd dx(nx);
      if (prob.tail_eq) {
        Eigen::MatrixXd K = Eigen::MatrixXd::Zero(nx + 1, nx + 1);
        K.topLeftCorner(nx, nx) = H;
        for (std::int64_t j = 0; j < np; ++j) {
          K(j, nx) = c_eq(j);
          K(nx, j) = c_eq(j);
        }
        Eigen::VectorXd rhs(nx + 1);
        rhs.head(nx) = -g;
        rhs(nx) = -c_eq.dot(x.head(np));
        const Eigen::VectorXd sol = K.fullPivLu().solve(rhs);
        dx = sol.head(nx);
      } else {
        dx = H.ldlt().solve(-g);
      }
      const double decrement = -g.dot(dx);
      if (!(decrement > 2e-13)) break;
      // backtrack to strict feasibility, then Armijo on the barrier value
      const auto barrier_val = [&](const Eigen::VectorXd& xx) {
        Eigen::VectorXd s2;
        slacks(xx, s2);
        if ((s2.array() <= 0).any()) return std::numeric_limits<double>::infinity();
        const double F =
            smooth(xx.head(np), nullptr, nullptr) + lam_n * xx.tail(r).sum();
        return t_barrier * F - s2.array().log().sum();
      };
      const double f0 = barrier_val(x);
      double alpha = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 80; ++ls) {
        const Eigen::VectorXd cand = x + alpha * dx;
        if (barrier_val(cand) <= f0 - 0.25 * alpha * decrement) {
          x = cand;
          moved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!moved) break;
    }
    t_barrier *= 10;
  }

  RefResult out;
  out.p = x.head(np);
  const Eigen::VectorXd Dp = D * out.p;
  out.objective = smooth(out.p, nullptr, nullptr) + lam_n * Dp.lpNorm<1>();
  return out;
}

// Build a RefProblem mirroring the library's operator and normalizations.
inline RefProblem make_ref(const sevrate::CountSeries& X, const sevrate::CountSeries& Y,
                           const sevrate::DelayDistribution& pi,
                           const sevrate::deconv::DeconvSpec& spec) {
  sevrate::ConvolutionOperator A(X, pi, Y.origin, Y.size());
  RefProblem prob;
  prob.A = Eigen::MatrixXd::Zero(A.rows(), A.cols());
  for (std::int64_t i = 0; i < A.rows(); ++i)
    for (std::int64_t j = 0; j < A.cols(); ++j) prob.A(i, j) = A.entry(i, j);
  prob.y.resize(Y.size());
  for (std::int64_t i = 0; i < Y.size(); ++i)
    prob.y(i) = static_cast<double>(Y.values[static_cast<std::size_t>(i)]);
  prob.m = spec.m;
  prob.lambda = spec.lambda;
  prob.gamma = spec.gamma;
  prob.tail_eq = spec.tail_constraint;
  if (spec.gamma > 0) {
    const auto w = sevrate::deconv::tail_weights(pi, A.cols(), A.p_origin());
    prob.wtail.resize(static_cast<std::int64_t>(w.size()));
    for (std::size_t i = 0; i < w.size(); ++i)
      prob.wtail(static_cast<std::int64_t>(i)) = w[i];
  }
  return prob;
}

}  // namespace refsolve

#endif  // SEVRATE_TESTS_REFERENCE_SOLVER_HPP
