#pragma once

#include <cstdint>

#include "jointscen/dataset.hpp"
#include "jointscen/marginals.hpp"

namespace jointscen {

/// Gaussian copula dependence: a d x d correlation matrix.
struct GcmParams {
  Eigen::MatrixXd correlation;

  std::size_t d() const { return static_cast<std::size_t>(correlation.rows()); }
  /// Unit diagonal, symmetric, entries in [-1,1], positive definite.
  void validate() const;
  GcmParams restrict_to(const std::vector<std::size_t>& dims) const;
};

/// Eigenvalues clipped at 1e-8, then rescaled back to unit diagonal.
Eigen::MatrixXd repair_correlation(const Eigen::MatrixXd& r);

/// Correlation of normal scores z = Phi^-1(u).
GcmParams fit_gcm(const UnitDataset& u);

class GaussianCopula {
 public:
  explicit GaussianCopula(const GcmParams& params);

  std::size_t d() const { return static_cast<std::size_t>(precision_minus_identity_.rows()); }
  /// -0.5 log|R| - 0.5 z'(R^-1 - I) z with z = Phi^-1(u).
  double log_density(const Eigen::Ref<const Vector>& u) const;
  double log_density_scores(const Eigen::Ref<const Vector>& z) const;
  const Eigen::MatrixXd& cholesky() const { return chol_; }

 private:
  Eigen::MatrixXd chol_;
  Eigen::MatrixXd precision_minus_identity_;
  double half_log_det_;
};

double gcm_copula_density(const GcmParams& params, const Vector& u);
double gcm_copula_logdensity(const GcmParams& params, const Vector& u);

/// Sum of log marginal densities plus log copula density at F(x).
double gcm_joint_logpdf(const GcmParams& params, const MarginalModel& marginals, const Vector& x);

struct GcmModel {
  GcmParams params;
  MarginalModel marginals;
};

/// z ~ N(0, R), u = Phi(z), x_j = F_j^-1(u_j).
Matrix sample_gcm(const GcmParams& params, const MarginalModel& marginals, std::size_t n, std::uint64_t seed);

}  // namespace jointscen
