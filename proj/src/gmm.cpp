#include "jointscen/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "jointscen/error.hpp"
#include "jointscen/normal.hpp"

namespace jointscen {

namespace {

constexpr double kLog2Pi = 1.83787706640934548356;

double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

Eigen::MatrixXd sample_covariance(const Matrix& data, const Vector& mean) {
  const Eigen::MatrixXd centered = data.rowwise() - mean.transpose();
  return (centered.transpose() * centered) / static_cast<double>(data.rows());
}

}  // namespace

void GmmParams::validate() const {
  const std::size_t k = K();
  if (k == 0) throw InputError("GMM needs at least one component");
  if (means.size() != k || covariances.size() != k) throw InputError("GMM component arrays differ in length");
  const std::size_t dim = d();
  if (dim == 0) throw InputError("GMM dimension must be positive");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InputError("GMM weights must be finite and nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw InputError("GMM weights must sum to 1");
  for (std::size_t c = 0; c < k; ++c) {
    if (static_cast<std::size_t>(means[c].size()) != dim || !means[c].allFinite()) {
      throw InputError("GMM mean " + std::to_string(c) + " has wrong size or non-finite entries");
    }
    const auto& cov = covariances[c];
    if (static_cast<std::size_t>(cov.rows()) != dim || static_cast<std::size_t>(cov.cols()) != dim ||
        !cov.allFinite()) {
      throw InputError("GMM covariance " + std::to_string(c) + " has wrong shape or non-finite entries");
    }
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, cov.cwiseAbs().maxCoeff())) {
      throw InputError("GMM covariance " + std::to_string(c) + " is not symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
      throw InputError("GMM covariance " + std::to_string(c) + " is not positive definite");
    }
  }
}

GmmParams GmmParams::restrict_to(const std::vector<std::size_t>& dims) const {
  GmmParams out;
  out.weights = weights;
  const auto m = static_cast<Eigen::Index>(dims.size());
  for (std::size_t c = 0; c < K(); ++c) {
    Vector mu(m);
    Eigen::MatrixXd cov(m, m);
    for (Eigen::Index a = 0; a < m; ++a) {
      mu(a) = means[c](static_cast<Eigen::Index>(dims[static_cast<std::size_t>(a)]));
      for (Eigen::Index b = 0; b < m; ++b) {
        cov(a, b) = covariances[c](static_cast<Eigen::Index>(dims[static_cast<std::size_t>(a)]),
                                   static_cast<Eigen::Index>(dims[static_cast<std::size_t>(b)]));
      }
    }
    out.means.push_back(std::move(mu));
    out.covariances.push_back(std::move(cov));
  }
  return out;
}

double ensure_positive_definite(Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return 0.0;
  const double d = static_cast<double>(cov.rows());
  double base = 1e-6 * cov.trace() / d;
  if (!(base > 0.0)) base = 1e-6;
  double added = 0.0;
  for (int attempt = 0; attempt < 12; ++attempt) {
    cov.diagonal().array() += base;
    added += base;
    llt.compute(cov);
    if (llt.info() == Eigen::Success) return added;
    base *= 10.0;
  }
  throw NumericalError("covariance could not be made positive definite");
}

GmmDensity::GmmDensity(const GmmParams& params) : d_(params.d()) {
  params.validate();
  for (std::size_t k = 0; k < params.K(); ++k) {
    log_weights_.push_back(std::log(params.weights[k]));
    means_.push_back(params.means[k]);
    Eigen::LLT<Eigen::MatrixXd> llt(params.covariances[k]);
    Eigen::MatrixXd l = llt.matrixL();
    log_norm_.push_back(-0.5 * static_cast<double>(d_) * kLog2Pi - l.diagonal().array().log().sum());
    chol_.push_back(std::move(l));
  }
}

void GmmDensity::component_log_terms(const Eigen::Ref<const Vector>& x, std::span<double> out) const {
  if (static_cast<std::size_t>(x.size()) != d_) throw InputError("GMM density: dimension mismatch");
  thread_local std::vector<double> y;
  y.resize(d_);
  for (std::size_t k = 0; k < K(); ++k) {
    const Eigen::MatrixXd& l = chol_[k];
    const Vector& mu = means_[k];
    double q = 0.0;
    for (std::size_t i = 0; i < d_; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      double s = x(ii) - mu(ii);
      for (std::size_t j = 0; j < i; ++j) s -= l(ii, static_cast<Eigen::Index>(j)) * y[j];
      y[i] = s / l(ii, ii);
      q += y[i] * y[i];
    }
    out[k] = log_weights_[k] + log_norm_[k] - 0.5 * q;
  }
}

double GmmDensity::log_pdf(const Eigen::Ref<const Vector>& x) const {
  thread_local std::vector<double> terms;
  terms.resize(K());
  component_log_terms(x, terms);
  return log_sum_exp(terms);
}

double gmm_pdf(const GmmParams& params, const Vector& x) { return GmmDensity(params).pdf(x); }
double gmm_log_pdf(const GmmParams& params, const Vector& x) { return GmmDensity(params).log_pdf(x); }

namespace {

// k-means++ seeds chosen from `data` rows.
std::vector<Vector> kmeanspp(const Matrix& data, std::size_t K, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(data.rows());
  std::vector<Vector> seeds;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  seeds.push_back(data.row(static_cast<Eigen::Index>(pick(rng))).transpose());
  std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  while (seeds.size() < K) {
    const Vector& last = seeds.back();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dd = (data.row(static_cast<Eigen::Index>(i)).transpose() - last).squaredNorm();
      dist2[i] = std::min(dist2[i], dd);
      total += dist2[i];
    }
    std::size_t chosen = pick(rng);
    if (total > 0.0) {
      const double target = unif(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += dist2[i];
        if (acc > target) {
          chosen = i;
          break;
        }
      }
    }
    seeds.push_back(data.row(static_cast<Eigen::Index>(chosen)).transpose());
  }
  return seeds;
}

GmmParams initialize(const Matrix& data, const EmOptions& opts, std::mt19937_64& rng,
                     const Eigen::MatrixXd& global_cov) {
  const auto n = static_cast<std::size_t>(data.rows());
  const auto d = static_cast<Eigen::Index>(data.cols());
  Matrix sub;
  if (n > opts.init_subsample) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    sub.resize(static_cast<Eigen::Index>(opts.init_subsample), d);
    for (std::size_t i = 0; i < opts.init_subsample; ++i) {
      sub.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(idx[i]));
    }
  } else {
    sub = data;
  }
  const std::vector<Vector> seeds = kmeanspp(sub, opts.K, rng);

  // Hard assignment of the subsample to the nearest seed.
  std::vector<std::vector<Eigen::Index>> members(opts.K);
  for (Eigen::Index i = 0; i < sub.rows(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < opts.K; ++k) {
      const double dd = (sub.row(i).transpose() - seeds[k]).squaredNorm();
      if (dd < best_d) {
        best_d = dd;
        best = k;
      }
    }
    members[best].push_back(i);
  }

  GmmParams p;
  for (std::size_t k = 0; k < opts.K; ++k) {
    const auto& m = members[k];
    p.weights.push_back(std::max<double>(1.0, static_cast<double>(m.size())));
    if (m.size() > static_cast<std::size_t>(d) + 1) {
      Matrix pts(static_cast<Eigen::Index>(m.size()), d);
      for (std::size_t r = 0; r < m.size(); ++r) pts.row(static_cast<Eigen::Index>(r)) = sub.row(m[r]);
      const Vector mu = pts.colwise().mean().transpose();
      Eigen::MatrixXd cov = sample_covariance(pts, mu);
      ensure_positive_definite(cov);
      p.means.push_back(mu);
      p.covariances.push_back(std::move(cov));
    } else {
      p.means.push_back(seeds[k]);
      p.covariances.push_back(global_cov);
    }
  }
  const double total = std::accumulate(p.weights.begin(), p.weights.end(), 0.0);
  for (double& w : p.weights) w /= total;
  return p;
}

void normalize_weights(std::vector<double>& w) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= total;
}

}  // namespace

EmResult fit_em(const Matrix& data, const EmOptions& opts) {
  const auto n = static_cast<std::size_t>(data.rows());
  const auto d = static_cast<std::size_t>(data.cols());
  if (opts.K < 1) throw InputError("EM: K must be at least 1");
  if (d < 1 || n < opts.K * (d + 1)) {
    throw InputError("EM: need at least K*(d+1) = " + std::to_string(opts.K * (d + 1)) +
                     " rows, got " + std::to_string(n));
  }
  if (!data.allFinite()) throw InputError("EM: data contains non-finite values");
  if (opts.max_iter < 1 || !(opts.rel_tol > 0.0)) throw InputError("EM: max_iter and rel_tol must be positive");

  std::mt19937_64 rng(opts.seed);
  const Vector global_mean = data.colwise().mean().transpose();
  Eigen::MatrixXd global_cov = sample_covariance(data, global_mean);
  ensure_positive_definite(global_cov);

  EmResult result;
  result.params = initialize(data, opts, rng, global_cov);
  const std::size_t K = opts.K;

  Matrix resp(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(K));
  std::vector<double> terms(K);
  std::uniform_int_distribution<std::size_t> pick_row(0, n - 1);

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    // E-step.
    const GmmDensity density(result.params);
    double total_ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      density.component_log_terms(data.row(ii).transpose(), terms);
      const double lse = log_sum_exp(terms);
      total_ll += lse;
      for (std::size_t k = 0; k < K; ++k) resp(ii, static_cast<Eigen::Index>(k)) = std::exp(terms[k] - lse);
    }
    const double mean_ll = total_ll / static_cast<double>(n);
    result.loglik_trace.push_back(mean_ll);
    result.iterations = iter;
    if (result.loglik_trace.size() >= 2) {
      const double prev = result.loglik_trace[result.loglik_trace.size() - 2];
      if (mean_ll - prev < opts.rel_tol * std::abs(prev)) {
        result.converged = true;
        break;
      }
    }

    // M-step.
    GmmParams next;
    for (std::size_t k = 0; k < K; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const double nk = resp.col(kk).sum();
      if (!(nk >= 1.0)) {
        // Collapsed component: restart it on a random data point.
        ++result.reseeded_components;
        next.weights.push_back(1.0 / static_cast<double>(n));
        next.means.push_back(data.row(static_cast<Eigen::Index>(pick_row(rng))).transpose());
        next.covariances.push_back(global_cov);
        continue;
      }
      const Vector mu = (resp.col(kk).transpose() * data).transpose() / nk;
      const Matrix centered = data.rowwise() - mu.transpose();
      Eigen::MatrixXd cov = (centered.transpose() * resp.col(kk).asDiagonal() * centered) / nk;
      cov = 0.5 * (cov + cov.transpose());
      ensure_positive_definite(cov);
      next.weights.push_back(nk / static_cast<double>(n));
      next.means.push_back(mu);
      next.covariances.push_back(std::move(cov));
    }
    normalize_weights(next.weights);
    result.params = std::move(next);
    result.iterations = iter + 1;
  }
  return result;
}

EmResult fit_em(const Dataset& ds, const EmOptions& opts) { return fit_em(ds.values(), opts); }

Matrix sample_gmm(const GmmParams& params, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw InputError("sample_gmm: n must be at least 1");
  const GmmDensity density(params);
  const std::size_t K = params.K();
  const auto d = static_cast<Eigen::Index>(params.d());
  std::vector<double> cumulative(K);
  std::partial_sum(params.weights.begin(), params.weights.end(), cumulative.begin());
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < K; ++k) {
    if (params.weights[k] > 0.0) last_positive = k;
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix out(static_cast<Eigen::Index>(n), d);
  Vector g(d);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = unif(rng);
    std::size_t k = last_positive;
    for (std::size_t c = 0; c < K; ++c) {
      if (r < cumulative[c]) {
        k = c;
        break;
      }
    }
    for (Eigen::Index j = 0; j < d; ++j) g(j) = gauss(rng);
    out.row(static_cast<Eigen::Index>(i)) = (params.means[k] + density.cholesky(k) * g).transpose();
  }
  return out;
}

GmmMarginal1d::GmmMarginal1d(std::vector<double> weights, std::vector<double> means, std::vector<double> sds)
    : weights_(std::move(weights)), means_(std::move(means)), sds_(std::move(sds)) {
  if (weights_.empty() || weights_.size() != means_.size() || weights_.size() != sds_.size()) {
    throw InputError("1-D GMM marginal: component arrays must be nonempty and equal length");
  }
  lo_ = std::numeric_limits<double>::infinity();
  hi_ = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < sds_.size(); ++k) {
    if (!(sds_[k] > 0.0) || !std::isfinite(sds_[k])) throw InputError("1-D GMM marginal: sd must be positive");
    lo_ = std::min(lo_, means_[k] - 10.0 * sds_[k]);
    hi_ = std::max(hi_, means_[k] + 10.0 * sds_[k]);
  }
}

GmmMarginal1d GmmMarginal1d::from(const GmmParams& params, std::size_t dim) {
  std::vector<double> mu;
  std::vector<double> sd;
  const auto j = static_cast<Eigen::Index>(dim);
  for (std::size_t k = 0; k < params.K(); ++k) {
    mu.push_back(params.means[k](j));
    sd.push_back(std::sqrt(params.covariances[k](j, j)));
  }
  return GmmMarginal1d(params.weights, std::move(mu), std::move(sd));
}

double GmmMarginal1d::cdf(double z) const {
  double s = 0.0;
  for (std::size_t k = 0; k < weights_.size(); ++k) s += weights_[k] * normal::cdf((z - means_[k]) / sds_[k]);
  return s;
}

double GmmMarginal1d::log_pdf(double z) const {
  thread_local std::vector<double> terms;
  terms.resize(weights_.size());
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    const double t = (z - means_[k]) / sds_[k];
    terms[k] = std::log(weights_[k]) - std::log(sds_[k]) + normal::log_pdf(t);
  }
  return log_sum_exp(terms);
}

double GmmMarginal1d::pdf(double z) const { return std::exp(log_pdf(z)); }

double GmmMarginal1d::quantile(double u, const RootConfig& cfg) const {
  if (!(u > 0.0 && u < 1.0)) throw InputError("GMM marginal quantile: probability must lie in (0,1)");
  return find_root([this, u](double z) { return cdf(z) - u; }, lo_, hi_, cfg);
}

}  // namespace jointscen
