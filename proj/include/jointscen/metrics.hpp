#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "jointscen/dataset.hpp"
#include "jointscen/error.hpp"
#include "jointscen/model.hpp"

namespace jointscen {

/// (1/n) sum_i log p(x_i). Throws NumericalError naming the first row whose
/// log-density is not finite.
double mean_loglik(const FittedModel& model, const Dataset& ds);

struct SinkhornConfig {
  /// Entropic regularization; <= 0 selects 0.05 x mean pairwise cost of a
  /// 1000-point probe.
  double epsilon = 0.0;
  int max_iter = 1000;
  /// Stop when the L1 row and column marginal violations drop below this.
  double tol = 1e-9;
  std::size_t subset_size = 5000;
  std::size_t n_subsets = 10;
  std::uint64_t seed = 0;
  /// z-score columns before the squared Euclidean cost.
  bool standardize = true;

  void validate() const;
};

struct SinkhornResult {
  double cost = 0.0;
  double epsilon = 0.0;
  double marginal_violation = 0.0;
  int iterations = 0;
  bool converged = false;
};

class SinkhornConvergenceError : public NumericalError {
 public:
  SinkhornConvergenceError(const std::string& what, double violation)
      : NumericalError(what), violation_(violation) {}
  double violation() const { return violation_; }

 private:
  double violation_;
};

/// Per-column affine map x -> (x - mean) / scale.
struct Standardization {
  Vector mean;
  Vector scale;

  static Standardization identity(std::size_t d);
  static Standardization fit(const Matrix& reference);
  Matrix apply(const Matrix& x) const;
};

Matrix squared_euclidean_cost(const Matrix& a, const Matrix& b);

/// 0.05 x mean squared distance over distinct pairs of the first
/// min(1000, n) rows of `probe`.
double auto_epsilon(const Matrix& probe);

/// Log-stabilized Sinkhorn scaling between uniform empirical measures on the
/// rows of `a` and `b` (already in cost coordinates). Returns <P, C> of the
/// regularized plan. Scalings are over-relaxed; when the cost range would
/// underflow the kernel, potentials are first warm-started by halving epsilon
/// down from the largest cost. `max_iter` and `iterations` refer to the final
/// epsilon; convergence requires both marginals within `tol`.
SinkhornResult sinkhorn_solve(const Matrix& a, const Matrix& b, double epsilon, int max_iter, double tol);

/// Transport cost between two datasets. Standardization (when enabled) uses
/// the pooled rows of both sets, and the automatic epsilon probes the pooled
/// rows, so the result is symmetric in (a, b). Throws
/// SinkhornConvergenceError if max_iter is exhausted.
double sinkhorn_distance(const Dataset& a, const Dataset& b, const SinkhornConfig& cfg);

struct SinkhornProtocolResult {
  double mean = 0.0;
  double std = 0.0;
  double epsilon = 0.0;
  std::size_t subset_size = 0;
  std::vector<double> values;
  /// Largest final marginal violation over the subsets.
  double max_violation = 0.0;
  /// Subsets that hit max_iter before tol; each also has a warning.
  std::size_t unconverged = 0;
  std::vector<std::string> warnings;
};

/// n_subsets independent seeded subsample pairs. Standardization and the
/// automatic epsilon are taken from `reference` alone so that different
/// models are scored on the same scale. A subset that exhausts max_iter is
/// still scored and is reported in `warnings` with its final violation.
SinkhornProtocolResult sinkhorn_protocol(const Dataset& model_samples, const Dataset& reference,
                                         const SinkhornConfig& cfg);

struct ModelReport {
  std::string name;
  bool ok = false;
  std::string error;
  double train_loglik = 0.0;
  double heldout_loglik = 0.0;
  double sinkhorn_mean = 0.0;
  double sinkhorn_std = 0.0;
  std::vector<double> sinkhorn_values;
  double sinkhorn_max_violation = 0.0;
  std::size_t sinkhorn_unconverged = 0;
};

struct ComparisonReport {
  std::vector<ModelReport> models;
  nlohmann::json metadata = nlohmann::json::object();

  nlohmann::json to_json() const;
  static ComparisonReport from_json(const nlohmann::json& j);
  /// Aligned table; '*' marks the best value in each metric column.
  std::string to_table() const;
};

struct CompareOptions {
  KdeOptions kde;
  SinkhornConfig sinkhorn;
  std::uint64_t seed = 0;
  std::function<void(const std::string&)> log;
};

/// Fits each request on `train` (GCM/GMCM share one set of KDE marginals),
/// draws |test| samples per model and scores them against `test`. A failing
/// model is recorded in its row and does not stop the others.
ComparisonReport compare_models(const Dataset& train, const Dataset& test, const std::vector<ModelRequest>& requests,
                                const CompareOptions& opts);

/// Scores already-fitted models; same report layout as compare_models.
ComparisonReport evaluate_models(const std::vector<std::pair<std::string, const FittedModel*>>& models,
                                 const Dataset& train, const Dataset& test, const CompareOptions& opts);

}  // namespace jointscen
