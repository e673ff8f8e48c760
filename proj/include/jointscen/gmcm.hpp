#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "jointscen/dataset.hpp"
#include "jointscen/error.hpp"
#include "jointscen/gmm.hpp"
#include "jointscen/marginals.hpp"

namespace jointscen {

/// Gaussian mixture copula: the copula of a latent GMM.
struct GmcParams {
  GmmParams base;

  std::size_t K() const { return base.K(); }
  std::size_t d() const { return base.d(); }
};

/// Flat unconstrained coordinates of a GMM, in this order:
///   K weight logits (softmax gives the weights),
///   K*d means, component-major,
///   K lower-triangular Cholesky factors, row-major, log-transformed diagonal.
struct UnconstrainedParams {
  std::size_t K = 0;
  std::size_t d = 0;
  Vector values;

  static std::size_t size_for(std::size_t K, std::size_t d) { return K + K * d + K * d * (d + 1) / 2; }
  std::size_t logit_index(std::size_t k) const { return k; }
  std::size_t mean_index(std::size_t k, std::size_t j) const { return K + k * d + j; }
  std::size_t chol_index(std::size_t k, std::size_t row, std::size_t col) const {
    return K + K * d + k * (d * (d + 1) / 2) + row * (row + 1) / 2 + col;
  }
};

UnconstrainedParams to_unconstrained(const GmmParams& params);
GmmParams to_constrained(const UnconstrainedParams& params);

/// Cached evaluator of the mixture-copula log-density
///   log c(u) = log psi(z) - sum_j log psi_j(z_j),  z_j = Psi_j^-1(u_j).
class MixtureCopula {
 public:
  explicit MixtureCopula(const GmmParams& base);

  std::size_t K() const { return joint_.K(); }
  std::size_t d() const { return joint_.d(); }
  const GmmDensity& joint() const { return joint_; }
  const GmmMarginal1d& marginal(std::size_t j) const { return marginals_[j]; }

  /// z_j = Psi_j^-1(clip(u_j)).
  Vector latent(const Eigen::Ref<const Vector>& u) const;
  double log_density(const Eigen::Ref<const Vector>& u) const;
  double log_density_latent(const Eigen::Ref<const Vector>& z) const;

 private:
  GmmDensity joint_;
  std::vector<GmmMarginal1d> marginals_;
};

double gmc_copula_logdensity(const GmcParams& params, const Vector& u);

struct GmcmFitInfo {
  int epochs = 0;
  std::size_t iterations = 0;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  bool converged = false;
  std::uint64_t seed = 0;
  double prior_sigma = 0.1;
  double learning_rate = 1e-3;
  std::size_t batch_size = 1024;
  std::vector<double> epoch_objectives;
};

struct GmcmModel {
  GmcParams params;
  MarginalModel marginals;
  GmcmFitInfo info;
};

/// Cached joint density of a GMCM.
class GmcmDensity {
 public:
  explicit GmcmDensity(const GmcmModel& model);

  /// Change of variables through the latent space:
  ///   sum log f_j(x_j) + sum log dPsi_j^-1/du (u_j) + log psi(z).
  double log_pdf(const Eigen::Ref<const Vector>& x) const;
  /// Sklar factorization: sum log f_j(x_j) + log c(F(x)).
  double log_pdf_sklar(const Eigen::Ref<const Vector>& x) const;

 private:
  const MarginalModel* marginals_;
  MixtureCopula copula_;
};

double gmcm_joint_logpdf(const GmcmModel& model, const Vector& x);
double gmcm_joint_logpdf_sklar(const GmcmModel& model, const Vector& x);

struct MapEvaluation {
  double value = 0.0;
  Vector gradient;  // empty unless requested
};

/// Mean copula log-density over the selected rows of `u` plus
/// prior_weight * (log N(sum_k a_k mu_jk | 0, sigma) + log N(sum_k a_k (S_kjj + mu_jk^2) | 1, sigma))
/// summed over dimensions. Empty `rows` means all rows.
MapEvaluation evaluate_map(const UnconstrainedParams& params, const Matrix& u, std::span<const std::size_t> rows,
                           double prior_sigma, double prior_weight, bool with_gradient);

/// Full-data objective with prior weight 1/n.
double map_objective(const UnconstrainedParams& params, const UnitDataset& u, double prior_sigma);
Vector map_gradient(const UnconstrainedParams& params, const UnitDataset& u, double prior_sigma);

struct FitOptions {
  std::size_t K = 4;
  double learning_rate = 1e-3;
  std::size_t batch_size = 1024;
  int max_epochs = 200;
  double prior_sigma = 0.1;
  std::uint64_t seed = 0;
  double rel_tol = 1e-6;
  int patience = 5;
  // Called once per epoch with (epoch, epoch-mean objective).
  std::function<void(int, double)> on_epoch;

  void validate() const;
};

class FitDivergedError : public NumericalError {
 public:
  FitDivergedError(const std::string& what, GmmParams last_finite)
      : NumericalError(what), last_finite_(std::move(last_finite)) {}
  const GmmParams& last_finite() const { return last_finite_; }

 private:
  GmmParams last_finite_;
};

struct GmcmFit {
  GmcParams params;
  GmcmFitInfo info;
};

/// Normal scores Phi^-1(U), EM-fitted K-component GMM, unconstrained coordinates.
UnconstrainedParams init_gmcm(const UnitDataset& u, std::size_t K, std::uint64_t seed);

/// Adam ascent of the MAP objective over seeded mini-batches.
GmcmFit fit_gmcm(const UnitDataset& u, const FitOptions& opts = {});

/// z ~ GMM, u_j = Psi_j(z_j), x_j = F_j^-1(u_j).
Matrix sample_gmcm(const GmcmModel& model, std::size_t n, std::uint64_t seed);

}  // namespace jointscen
