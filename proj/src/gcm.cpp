#include "jointscen/gcm.hpp"

#include <cmath>
#include <random>

#include "jointscen/error.hpp"
#include "jointscen/normal.hpp"

namespace jointscen {

void GcmParams::validate() const {
  const auto d = correlation.rows();
  if (d < 1 || correlation.cols() != d) throw InputError("correlation matrix must be square and nonempty");
  if (!correlation.allFinite()) throw InputError("correlation matrix has non-finite entries");
  for (Eigen::Index i = 0; i < d; ++i) {
    if (std::abs(correlation(i, i) - 1.0) > 1e-12) throw InputError("correlation matrix diagonal must be 1");
    for (Eigen::Index j = 0; j < d; ++j) {
      if (std::abs(correlation(i, j)) > 1.0 + 1e-12) throw InputError("correlation entries must lie in [-1,1]");
      if (std::abs(correlation(i, j) - correlation(j, i)) > 1e-12) throw InputError("correlation matrix not symmetric");
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(correlation);
  if (llt.info() != Eigen::Success) throw InputError("correlation matrix not positive definite");
}

GcmParams GcmParams::restrict_to(const std::vector<std::size_t>& dims) const {
  const auto m = static_cast<Eigen::Index>(dims.size());
  Eigen::MatrixXd r(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) {
      r(a, b) = correlation(static_cast<Eigen::Index>(dims[static_cast<std::size_t>(a)]),
                            static_cast<Eigen::Index>(dims[static_cast<std::size_t>(b)]));
    }
  }
  return GcmParams{r};
}

Eigen::MatrixXd repair_correlation(const Eigen::MatrixXd& r) {
  Eigen::MatrixXd sym = 0.5 * (r + r.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  Eigen::MatrixXd out = sym;
  if (eig.eigenvalues().minCoeff() < 1e-8) {
    const Vector clipped = eig.eigenvalues().cwiseMax(1e-8);
    out = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
  }
  const Vector inv_sd = out.diagonal().cwiseSqrt().cwiseInverse();
  out = inv_sd.asDiagonal() * out * inv_sd.asDiagonal();
  out = 0.5 * (out + out.transpose());
  out.diagonal().setOnes();
  return out;
}

GcmParams fit_gcm(const UnitDataset& u) {
  const auto n = u.values().rows();
  const auto d = u.values().cols();
  if (n < d + 1) throw InputError("GCM fit needs at least d+1 rows");
  Matrix z(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) z(i, j) = normal::quantile(u.values()(i, j));
  }
  const Vector mean = z.colwise().mean().transpose();
  const Matrix centered = z.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  const Vector inv_sd = cov.diagonal().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd r = inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
  r.diagonal().setOnes();
  GcmParams p{repair_correlation(r)};
  p.validate();
  return p;
}

GaussianCopula::GaussianCopula(const GcmParams& params) {
  params.validate();
  Eigen::LLT<Eigen::MatrixXd> llt(params.correlation);
  chol_ = llt.matrixL();
  const auto d = params.correlation.rows();
  precision_minus_identity_ = llt.solve(Eigen::MatrixXd::Identity(d, d)) - Eigen::MatrixXd::Identity(d, d);
  half_log_det_ = chol_.diagonal().array().log().sum();
}

double GaussianCopula::log_density_scores(const Eigen::Ref<const Vector>& z) const {
  return -half_log_det_ - 0.5 * z.dot(precision_minus_identity_ * z);
}

double GaussianCopula::log_density(const Eigen::Ref<const Vector>& u) const {
  if (static_cast<std::size_t>(u.size()) != d()) throw InputError("Gaussian copula: dimension mismatch");
  Vector z(u.size());
  for (Eigen::Index j = 0; j < u.size(); ++j) z(j) = normal::quantile(clip_unit(u(j)));
  return log_density_scores(z);
}

double gcm_copula_logdensity(const GcmParams& params, const Vector& u) {
  return GaussianCopula(params).log_density(u);
}

double gcm_copula_density(const GcmParams& params, const Vector& u) {
  return std::exp(gcm_copula_logdensity(params, u));
}

double gcm_joint_logpdf(const GcmParams& params, const MarginalModel& marginals, const Vector& x) {
  if (params.d() != marginals.d() || static_cast<std::size_t>(x.size()) != marginals.d()) {
    throw InputError("GCM joint density: dimension mismatch");
  }
  const GaussianCopula copula(params);
  Vector u(x.size());
  double log_f = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const KdeMarginal& m = marginals.dim(static_cast<std::size_t>(j));
    log_f += m.log_pdf(x(j));
    u(j) = clip_unit(m.cdf(x(j)));
  }
  return log_f + copula.log_density(u);
}

Matrix sample_gcm(const GcmParams& params, const MarginalModel& marginals, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw InputError("sample_gcm: n must be at least 1");
  if (params.d() != marginals.d()) throw InputError("sample_gcm: dimension mismatch");
  const GaussianCopula copula(params);
  const auto d = static_cast<Eigen::Index>(params.d());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix out(static_cast<Eigen::Index>(n), d);
  Vector g(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) g(j) = gauss(rng);
    const Vector z = copula.cholesky() * g;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double u = clip_unit(normal::cdf(z(j)));
      out(static_cast<Eigen::Index>(i), j) = marginals.dim(static_cast<std::size_t>(j)).quantile(u);
    }
  }
  return out;
}

}  // namespace jointscen
