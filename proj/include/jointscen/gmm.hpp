#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "jointscen/dataset.hpp"
#include "jointscen/rootfind.hpp"

namespace jointscen {

/// Parameters of a K-component, full-covariance Gaussian mixture in d dims.
struct GmmParams {
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<Eigen::MatrixXd> covariances;

  std::size_t K() const { return weights.size(); }
  std::size_t d() const { return means.empty() ? 0 : static_cast<std::size_t>(means.front().size()); }

  /// Throws InputError unless shapes agree, weights are a probability vector
  /// (to 1e-12) and every covariance is symmetric positive definite.
  void validate() const;

  /// Sub-mixture over a subset of coordinates (weights unchanged).
  GmmParams restrict_to(const std::vector<std::size_t>& dims) const;
};

/// Adds 1e-6 * trace / d to the diagonal (growing tenfold per retry) until the
/// Cholesky factorization succeeds. Returns the total jitter added.
double ensure_positive_definite(Eigen::MatrixXd& cov);

/// Cached Cholesky factors for repeated density evaluation.
class GmmDensity {
 public:
  explicit GmmDensity(const GmmParams& params);

  std::size_t K() const { return log_weights_.size(); }
  std::size_t d() const { return d_; }

  double log_pdf(const Eigen::Ref<const Vector>& x) const;
  double pdf(const Eigen::Ref<const Vector>& x) const { return std::exp(log_pdf(x)); }

  /// out[k] = log(alpha_k) + log N(x; mu_k, Sigma_k).
  void component_log_terms(const Eigen::Ref<const Vector>& x, std::span<double> out) const;

  const Eigen::MatrixXd& cholesky(std::size_t k) const { return chol_[k]; }

 private:
  std::size_t d_;
  std::vector<double> log_weights_;
  std::vector<Vector> means_;
  std::vector<Eigen::MatrixXd> chol_;  // lower factors
  std::vector<double> log_norm_;       // -0.5 log|2 pi Sigma|
};

double gmm_pdf(const GmmParams& params, const Vector& x);
double gmm_log_pdf(const GmmParams& params, const Vector& x);

struct EmOptions {
  std::size_t K = 4;
  std::uint64_t seed = 0;
  int max_iter = 500;
  double rel_tol = 1e-7;
  std::size_t init_subsample = 10000;
};

struct EmResult {
  GmmParams params;
  /// Mean training log-likelihood at each E-step, in order.
  std::vector<double> loglik_trace;
  int iterations = 0;
  bool converged = false;
  int reseeded_components = 0;
};

/// k-means++ seeding on a subsample, then EM on all rows.
EmResult fit_em(const Matrix& data, const EmOptions& opts = {});
EmResult fit_em(const Dataset& ds, const EmOptions& opts = {});

/// Categorical component draw by weight, then mu + L g with g ~ N(0, I).
Matrix sample_gmm(const GmmParams& params, std::size_t n, std::uint64_t seed);

/// One coordinate of a Gaussian mixture: Psi_j and psi_j.
class GmmMarginal1d {
 public:
  GmmMarginal1d(std::vector<double> weights, std::vector<double> means, std::vector<double> sds);
  static GmmMarginal1d from(const GmmParams& params, std::size_t dim);

  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& means() const { return means_; }
  const std::vector<double>& sds() const { return sds_; }

  double cdf(double z) const;
  double pdf(double z) const;
  double log_pdf(double z) const;

  /// Root bracket [min_k(mu - 10 sd), max_k(mu + 10 sd)].
  double bracket_lo() const { return lo_; }
  double bracket_hi() const { return hi_; }

  double quantile(double u, const RootConfig& cfg = quantile_config()) const;

  /// Tighter than RootConfig's defaults; quantile noise feeds MAP gradients.
  static RootConfig quantile_config() { return RootConfig{1e-12, 1e-15, 100}; }

 private:
  std::vector<double> weights_;
  std::vector<double> means_;
  std::vector<double> sds_;
  double lo_;
  double hi_;
};

}  // namespace jointscen
