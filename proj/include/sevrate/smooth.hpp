#ifndef SEVRATE_SMOOTH_HPP
#define SEVRATE_SMOOTH_HPP

// Whittaker-style penalized smoother: minimize ||y - theta||^2 over theta
// plus alpha * ||D^(2) theta||^2, with alpha picked by generalized
// cross-validation when not supplied.  Serves as the generic nonparametric
// smoother wherever a smooth mean curve is needed.

#include <cmath>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "sevrate/core.hpp"

namespace sevrate {

inline std::vector<double> whittaker_smooth(const std::vector<double>& y,
                                            double alpha) {
  const auto n = static_cast<std::int64_t>(y.size());
  detail::require<DimensionError>(n >= 8, "smoother needs >= 8 points");
  detail::require<ParameterError>(alpha >= 0, "penalty must be >= 0");
  Eigen::SparseMatrix<double> D = diff_matrix_sparse(2, n);
  Eigen::SparseMatrix<double> H =
      Eigen::SparseMatrix<double>(D.transpose()) * D * alpha;
  for (std::int64_t i = 0; i < n; ++i) H.coeffRef(i, i) += 1.0;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> f(H);
  detail::require<NumericError>(f.info() == Eigen::Success,
                                "smoother factorization failed");
  Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  Eigen::VectorXd t = f.solve(b);
  return {t.data(), t.data() + n};
}

struct SmoothFit {
  std::vector<double> fitted;
  double alpha = 0;
  double edf = 0;  // effective degrees of freedom, tr of the smoother matrix
};

// GCV(alpha) = n * RSS / (n - edf)^2 over a fixed log grid.
inline SmoothFit whittaker_gcv(const std::vector<double>& y) {
  const auto n = static_cast<std::int64_t>(y.size());
  detail::require<DimensionError>(n >= 8, "smoother needs >= 8 points");
  Eigen::SparseMatrix<double> D = diff_matrix_sparse(2, n);
  Eigen::SparseMatrix<double> DtD = Eigen::SparseMatrix<double>(D.transpose()) * D;
  Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(y.data(), n);

  SmoothFit best;
  double best_gcv = std::numeric_limits<double>::infinity();
  for (double alpha : log_grid(1e-4, 1e9, 27)) {
    Eigen::SparseMatrix<double> H = DtD * alpha;
    for (std::int64_t i = 0; i < n; ++i) H.coeffRef(i, i) += 1.0;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> f(H);
    if (f.info() != Eigen::Success) continue;
    Eigen::VectorXd t = f.solve(b);
    double rss = (b - t).squaredNorm();
    double edf = 0;
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    for (std::int64_t i = 0; i < n; ++i) {
      e[i] = 1;
      edf += f.solve(e)[i];
      e[i] = 0;
    }
    const double denom = static_cast<double>(n) - edf;
    if (denom <= 0) continue;
    const double gcv = static_cast<double>(n) * rss / (denom * denom);
    if (gcv < best_gcv) {
      best_gcv = gcv;
      best.fitted.assign(t.data(), t.data() + n);
      best.alpha = alpha;
      best.edf = edf;
    }
  }
  detail::require<NumericError>(!best.fitted.empty(), "GCV search failed");
  return best;
}

inline RealSeries whittaker_smooth(const RealSeries& y, double alpha) {
  return {y.origin, whittaker_smooth(y.values, alpha)};
}

inline SmoothFit whittaker_gcv(const RealSeries& y) { return whittaker_gcv(y.values); }

}  // namespace sevrate

#endif  // SEVRATE_SMOOTH_HPP
