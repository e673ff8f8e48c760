#include "jointscen/gmcm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "jointscen/normal.hpp"

namespace jointscen {

namespace {

double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

UnconstrainedParams to_unconstrained(const GmmParams& params) {
  params.validate();
  UnconstrainedParams out;
  out.K = params.K();
  out.d = params.d();
  out.values = Vector::Zero(static_cast<Eigen::Index>(UnconstrainedParams::size_for(out.K, out.d)));

  std::vector<double> logs(out.K);
  for (std::size_t k = 0; k < out.K; ++k) logs[k] = std::log(std::max(params.weights[k], 1e-300));
  const double mean_log = std::accumulate(logs.begin(), logs.end(), 0.0) / static_cast<double>(out.K);
  for (std::size_t k = 0; k < out.K; ++k) {
    out.values(static_cast<Eigen::Index>(out.logit_index(k))) = logs[k] - mean_log;
    for (std::size_t j = 0; j < out.d; ++j) {
      out.values(static_cast<Eigen::Index>(out.mean_index(k, j))) = params.means[k](static_cast<Eigen::Index>(j));
    }
    Eigen::LLT<Eigen::MatrixXd> llt(params.covariances[k]);
    const Eigen::MatrixXd l = llt.matrixL();
    for (std::size_t r = 0; r < out.d; ++r) {
      for (std::size_t c = 0; c <= r; ++c) {
        const double v = l(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        out.values(static_cast<Eigen::Index>(out.chol_index(k, r, c))) = r == c ? std::log(v) : v;
      }
    }
  }
  return out;
}

GmmParams to_constrained(const UnconstrainedParams& p) {
  if (p.K == 0 || p.d == 0 || static_cast<std::size_t>(p.values.size()) != UnconstrainedParams::size_for(p.K, p.d)) {
    throw InputError("unconstrained parameter vector has the wrong size");
  }
  if (!p.values.allFinite()) throw NumericalError("unconstrained parameters are not finite");
  GmmParams out;
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < p.K; ++k) max_logit = std::max(max_logit, p.values(static_cast<Eigen::Index>(k)));
  double total = 0.0;
  for (std::size_t k = 0; k < p.K; ++k) {
    out.weights.push_back(std::exp(p.values(static_cast<Eigen::Index>(k)) - max_logit));
    total += out.weights.back();
  }
  for (double& w : out.weights) w /= total;

  const auto d = static_cast<Eigen::Index>(p.d);
  for (std::size_t k = 0; k < p.K; ++k) {
    Vector mu(d);
    for (std::size_t j = 0; j < p.d; ++j) mu(static_cast<Eigen::Index>(j)) = p.values(static_cast<Eigen::Index>(p.mean_index(k, j)));
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t r = 0; r < p.d; ++r) {
      for (std::size_t c = 0; c <= r; ++c) {
        const double v = p.values(static_cast<Eigen::Index>(p.chol_index(k, r, c)));
        l(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = r == c ? std::exp(v) : v;
      }
    }
    Eigen::MatrixXd cov = l * l.transpose();
    cov = 0.5 * (cov + cov.transpose());
    out.means.push_back(std::move(mu));
    out.covariances.push_back(std::move(cov));
  }
  return out;
}

MixtureCopula::MixtureCopula(const GmmParams& base) : joint_(base) {
  for (std::size_t j = 0; j < base.d(); ++j) marginals_.push_back(GmmMarginal1d::from(base, j));
}

Vector MixtureCopula::latent(const Eigen::Ref<const Vector>& u) const {
  if (static_cast<std::size_t>(u.size()) != d()) throw InputError("mixture copula: dimension mismatch");
  Vector z(u.size());
  for (std::size_t j = 0; j < d(); ++j) {
    z(static_cast<Eigen::Index>(j)) = marginals_[j].quantile(clip_unit(u(static_cast<Eigen::Index>(j))));
  }
  return z;
}

double MixtureCopula::log_density_latent(const Eigen::Ref<const Vector>& z) const {
  double value = joint_.log_pdf(z);
  for (std::size_t j = 0; j < d(); ++j) value -= marginals_[j].log_pdf(z(static_cast<Eigen::Index>(j)));
  return value;
}

double MixtureCopula::log_density(const Eigen::Ref<const Vector>& u) const {
  return log_density_latent(latent(u));
}

double gmc_copula_logdensity(const GmcParams& params, const Vector& u) {
  return MixtureCopula(params.base).log_density(u);
}

GmcmDensity::GmcmDensity(const GmcmModel& model) : marginals_(&model.marginals), copula_(model.params.base) {
  if (model.params.d() != model.marginals.d()) throw InputError("GMCM: copula and marginal dimensions differ");
}

double GmcmDensity::log_pdf(const Eigen::Ref<const Vector>& x) const {
  const std::size_t d = copula_.d();
  if (static_cast<std::size_t>(x.size()) != d) throw InputError("GMCM density: dimension mismatch");
  Vector z(x.size());
  double log_f = 0.0;
  double log_jacobian = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const KdeMarginal& m = marginals_->dim(j);
    log_f += m.log_pdf(x(jj));
    const double u = clip_unit(m.cdf(x(jj)));
    const GmmMarginal1d& psi = copula_.marginal(j);
    z(jj) = psi.quantile(u);
    // d Psi^-1 / du = 1 / psi_j(z_j)
    log_jacobian -= psi.log_pdf(z(jj));
  }
  return log_f + log_jacobian + copula_.joint().log_pdf(z);
}

double GmcmDensity::log_pdf_sklar(const Eigen::Ref<const Vector>& x) const {
  const std::size_t d = copula_.d();
  if (static_cast<std::size_t>(x.size()) != d) throw InputError("GMCM density: dimension mismatch");
  Vector u(x.size());
  double log_f = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    log_f += marginals_->dim(j).log_pdf(x(jj));
    u(jj) = clip_unit(marginals_->dim(j).cdf(x(jj)));
  }
  return log_f + copula_.log_density(u);
}

double gmcm_joint_logpdf(const GmcmModel& model, const Vector& x) { return GmcmDensity(model).log_pdf(x); }
double gmcm_joint_logpdf_sklar(const GmcmModel& model, const Vector& x) {
  return GmcmDensity(model).log_pdf_sklar(x);
}

namespace {

// Gradient of the MAP objective with respect to (alpha, mu, Sigma), the
// weights treated as free coordinates; chained to logits/Cholesky at the end.
struct ConstrainedGradient {
  std::vector<double> alpha;
  Matrix mu;                          // K x d
  std::vector<Eigen::MatrixXd> sigma;  // d x d each, entrywise convention

  ConstrainedGradient(std::size_t K, std::size_t d)
      : alpha(K, 0.0),
        mu(Matrix::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(d))),
        sigma(K, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))) {}
};

struct RowScratch {
  Vector z;
  std::vector<double> joint_terms;
  std::vector<Vector> y;  // Sigma_k^-1 (z - mu_k)
  Vector dlogpsi_dz;
  std::vector<double> t, log_n, q, n_over_psi, phi_over_psi, marg_terms;
};

class MapEvaluator {
 public:
  explicit MapEvaluator(const GmmParams& params) : params_(params), copula_(params) {
    K_ = params.K();
    d_ = params.d();
    for (std::size_t k = 0; k < K_; ++k) {
      const Eigen::MatrixXd& l = copula_.joint().cholesky(k);
      const Eigen::MatrixXd inv_l = l.triangularView<Eigen::Lower>().solve(
          Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d_), static_cast<Eigen::Index>(d_)));
      precision_.push_back(inv_l.transpose() * inv_l);
      log_alpha_.push_back(std::log(params.weights[k]));
    }
    scratch_.z.resize(static_cast<Eigen::Index>(d_));
    scratch_.joint_terms.resize(K_);
    scratch_.y.assign(K_, Vector(static_cast<Eigen::Index>(d_)));
    scratch_.dlogpsi_dz.resize(static_cast<Eigen::Index>(d_));
    for (auto* v : {&scratch_.t, &scratch_.log_n, &scratch_.q, &scratch_.n_over_psi, &scratch_.phi_over_psi,
                    &scratch_.marg_terms}) {
      v->resize(K_);
    }
  }

  // Returns log c(u); adds its gradient into `grad` when non-null.
  double row(const Eigen::Ref<const Vector>& u, ConstrainedGradient* grad) {
    RowScratch& s = scratch_;
    for (std::size_t j = 0; j < d_; ++j) {
      s.z(static_cast<Eigen::Index>(j)) = copula_.marginal(j).quantile(clip_unit(u(static_cast<Eigen::Index>(j))));
    }
    copula_.joint().component_log_terms(s.z, s.joint_terms);
    const double log_psi = log_sum_exp(s.joint_terms);
    double value = log_psi;

    if (grad) {
      s.dlogpsi_dz.setZero();
      for (std::size_t k = 0; k < K_; ++k) {
        const double r = std::exp(s.joint_terms[k] - log_psi);
        s.y[k].noalias() = precision_[k] * (s.z - params_.means[k]);
        grad->alpha[k] += std::exp(s.joint_terms[k] - log_alpha_[k] - log_psi);
        grad->mu.row(static_cast<Eigen::Index>(k)) += r * s.y[k].transpose();
        grad->sigma[k].noalias() += 0.5 * r * (s.y[k] * s.y[k].transpose() - precision_[k]);
        s.dlogpsi_dz.noalias() -= r * s.y[k];
      }
    }

    for (std::size_t j = 0; j < d_; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const GmmMarginal1d& m = copula_.marginal(j);
      const double zj = s.z(jj);
      for (std::size_t k = 0; k < K_; ++k) {
        s.t[k] = (zj - m.means()[k]) / m.sds()[k];
        s.log_n[k] = normal::log_pdf(s.t[k]) - std::log(m.sds()[k]);
        s.marg_terms[k] = log_alpha_[k] + s.log_n[k];
      }
      const double log_psi_j = log_sum_exp(s.marg_terms);
      value -= log_psi_j;
      if (!grad) continue;

      double dlogpsij_dz = 0.0;
      for (std::size_t k = 0; k < K_; ++k) {
        s.q[k] = std::exp(s.marg_terms[k] - log_psi_j);
        s.n_over_psi[k] = std::exp(s.log_n[k] - log_psi_j);
        s.phi_over_psi[k] = normal::cdf(s.t[k]) * std::exp(-log_psi_j);
        dlogpsij_dz -= s.q[k] * s.t[k] / m.sds()[k];
      }
      // d log c / d z_j, propagated through z_j = Psi_j^-1(u_j; theta) with
      // dz/dtheta = -(dPsi_j/dtheta) / psi_j.
      const double w = s.dlogpsi_dz(jj) - dlogpsij_dz;
      for (std::size_t k = 0; k < K_; ++k) {
        const double sd = m.sds()[k];
        const double t = s.t[k];
        const double q = s.q[k];
        // Explicit dependence of -log psi_j at fixed z.
        grad->alpha[k] -= s.n_over_psi[k];
        grad->mu(static_cast<Eigen::Index>(k), jj) -= q * t / sd;
        double g_sd = -q * (t * t - 1.0) / sd;
        // Implicit dependence through z_j.
        grad->alpha[k] -= w * s.phi_over_psi[k];
        grad->mu(static_cast<Eigen::Index>(k), jj) += w * q;
        g_sd += w * q * t;
        grad->sigma[k](jj, jj) += g_sd / (2.0 * sd);
      }
    }
    return value;
  }

  // Prior log-density (without weight); adds weight * gradient into `grad`.
  double prior(double sigma, double weight, ConstrainedGradient* grad) const {
    const double inv_var = 1.0 / (sigma * sigma);
    const double log_norm = -std::log(sigma) - normal::kLogSqrt2Pi;
    double total = 0.0;
    for (std::size_t j = 0; j < d_; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      double mean = 0.0;
      double second = 0.0;
      for (std::size_t k = 0; k < K_; ++k) {
        const double mu = params_.means[k](jj);
        mean += params_.weights[k] * mu;
        second += params_.weights[k] * (params_.covariances[k](jj, jj) + mu * mu);
      }
      total += -0.5 * mean * mean * inv_var + log_norm;
      total += -0.5 * (second - 1.0) * (second - 1.0) * inv_var + log_norm;
      if (!grad) continue;
      const double dm = -mean * inv_var * weight;
      const double ds = -(second - 1.0) * inv_var * weight;
      for (std::size_t k = 0; k < K_; ++k) {
        const double mu = params_.means[k](jj);
        const double a = params_.weights[k];
        grad->alpha[k] += dm * mu + ds * (params_.covariances[k](jj, jj) + mu * mu);
        grad->mu(static_cast<Eigen::Index>(k), jj) += dm * a + ds * 2.0 * a * mu;
        grad->sigma[k](jj, jj) += ds * a;
      }
    }
    return total;
  }

  Vector to_unconstrained_gradient(const ConstrainedGradient& g, const UnconstrainedParams& layout) const {
    Vector out = Vector::Zero(layout.values.size());
    double weighted = 0.0;
    for (std::size_t k = 0; k < K_; ++k) weighted += params_.weights[k] * g.alpha[k];
    for (std::size_t k = 0; k < K_; ++k) {
      out(static_cast<Eigen::Index>(layout.logit_index(k))) = params_.weights[k] * (g.alpha[k] - weighted);
      for (std::size_t j = 0; j < d_; ++j) {
        out(static_cast<Eigen::Index>(layout.mean_index(k, j))) = g.mu(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j));
      }
      const Eigen::MatrixXd& l = copula_.joint().cholesky(k);
      const Eigen::MatrixXd dl = (g.sigma[k] + g.sigma[k].transpose()) * l;
      for (std::size_t r = 0; r < d_; ++r) {
        for (std::size_t c = 0; c <= r; ++c) {
          const auto rr = static_cast<Eigen::Index>(r);
          const auto cc = static_cast<Eigen::Index>(c);
          out(static_cast<Eigen::Index>(layout.chol_index(k, r, c))) = r == c ? dl(rr, cc) * l(rr, cc) : dl(rr, cc);
        }
      }
    }
    return out;
  }

  std::size_t K() const { return K_; }
  std::size_t d() const { return d_; }

 private:
  GmmParams params_;
  MixtureCopula copula_;
  std::size_t K_ = 0;
  std::size_t d_ = 0;
  std::vector<Eigen::MatrixXd> precision_;
  std::vector<double> log_alpha_;
  RowScratch scratch_;
};

}  // namespace

MapEvaluation evaluate_map(const UnconstrainedParams& params, const Matrix& u, std::span<const std::size_t> rows,
                           double prior_sigma, double prior_weight, bool with_gradient) {
  if (!(prior_sigma > 0.0)) throw InputError("MAP objective: prior sigma must be positive");
  if (static_cast<std::size_t>(u.cols()) != params.d) throw InputError("MAP objective: dimension mismatch");
  MapEvaluator eval(to_constrained(params));
  ConstrainedGradient grad(params.K, params.d);
  ConstrainedGradient* gp = with_gradient ? &grad : nullptr;

  const std::size_t count = rows.empty() ? static_cast<std::size_t>(u.rows()) : rows.size();
  if (count == 0) throw InputError("MAP objective: no rows");
  double data_sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t r = rows.empty() ? i : rows[i];
    data_sum += eval.row(u.row(static_cast<Eigen::Index>(r)).transpose(), gp);
  }
  const double inv_count = 1.0 / static_cast<double>(count);
  if (with_gradient) {
    for (double& a : grad.alpha) a *= inv_count;
    grad.mu *= inv_count;
    for (auto& s : grad.sigma) s *= inv_count;
  }
  const double prior = eval.prior(prior_sigma, prior_weight, gp);

  MapEvaluation out;
  out.value = data_sum * inv_count + prior_weight * prior;
  if (!std::isfinite(out.value)) {
    std::ostringstream msg;
    msg << "MAP objective is not finite (data term " << data_sum * inv_count << ", prior " << prior << ")";
    throw NumericalError(msg.str());
  }
  if (with_gradient) {
    out.gradient = eval.to_unconstrained_gradient(grad, params);
    if (!out.gradient.allFinite()) throw NumericalError("MAP gradient is not finite");
  }
  return out;
}

double map_objective(const UnconstrainedParams& params, const UnitDataset& u, double prior_sigma) {
  return evaluate_map(params, u.values(), {}, prior_sigma, 1.0 / static_cast<double>(u.n()), false).value;
}

Vector map_gradient(const UnconstrainedParams& params, const UnitDataset& u, double prior_sigma) {
  return evaluate_map(params, u.values(), {}, prior_sigma, 1.0 / static_cast<double>(u.n()), true).gradient;
}

void FitOptions::validate() const {
  if (K < 1) throw InputError("GMCM fit: K must be at least 1");
  if (!(learning_rate > 0.0)) throw InputError("GMCM fit: learning rate must be positive");
  if (batch_size < 1) throw InputError("GMCM fit: batch size must be positive");
  if (max_epochs < 0) throw InputError("GMCM fit: max_epochs must be nonnegative");
  if (!(prior_sigma > 0.0)) throw InputError("GMCM fit: prior sigma must be positive");
  if (!(rel_tol > 0.0)) throw InputError("GMCM fit: rel_tol must be positive");
  if (patience < 1) throw InputError("GMCM fit: patience must be positive");
}

UnconstrainedParams init_gmcm(const UnitDataset& u, std::size_t K, std::uint64_t seed) {
  Matrix scores(u.values().rows(), u.values().cols());
  for (Eigen::Index i = 0; i < scores.size(); ++i) scores.data()[i] = normal::quantile(u.values().data()[i]);
  EmOptions em;
  em.K = K;
  em.seed = seed;
  return to_unconstrained(fit_em(scores, em).params);
}

GmcmFit fit_gmcm(const UnitDataset& u, const FitOptions& opts) {
  opts.validate();
  const std::size_t n = u.n();
  const std::size_t d = u.d();
  if (n < opts.K * (d + 1)) {
    throw InputError("GMCM fit: need at least K*(d+1) = " + std::to_string(opts.K * (d + 1)) + " rows");
  }

  UnconstrainedParams theta = init_gmcm(u, opts.K, opts.seed);
  const double prior_weight = 1.0 / static_cast<double>(n);

  GmcmFit fit;
  fit.info.seed = opts.seed;
  fit.info.prior_sigma = opts.prior_sigma;
  fit.info.learning_rate = opts.learning_rate;
  fit.info.batch_size = opts.batch_size;
  fit.info.initial_objective = evaluate_map(theta, u.values(), {}, opts.prior_sigma, prior_weight, false).value;

  // Adam, ascending.
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double adam_eps = 1e-8;
  Vector m1 = Vector::Zero(theta.values.size());
  Vector m2 = Vector::Zero(theta.values.size());
  std::size_t step = 0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ull);

  int stalled = 0;
  double previous = std::numeric_limits<double>::quiet_NaN();
  for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < n; start += opts.batch_size) {
      const std::size_t len = std::min(opts.batch_size, n - start);
      const std::span<const std::size_t> batch(order.data() + start, len);
      MapEvaluation ev;
      try {
        ev = evaluate_map(theta, u.values(), batch, opts.prior_sigma, prior_weight, true);
      } catch (const NumericalError& e) {
        throw FitDivergedError(std::string("GMCM fit diverged at epoch ") + std::to_string(epoch) + ": " + e.what(),
                               to_constrained(theta));
      }
      epoch_sum += ev.value * static_cast<double>(len);

      ++step;
      m1 = beta1 * m1 + (1.0 - beta1) * ev.gradient;
      m2 = beta2 * m2 + (1.0 - beta2) * ev.gradient.cwiseProduct(ev.gradient);
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      UnconstrainedParams next = theta;
      next.values.array() += opts.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + adam_eps);
      if (!next.values.allFinite()) {
        throw FitDivergedError("GMCM fit diverged: non-finite parameters at epoch " + std::to_string(epoch),
                               to_constrained(theta));
      }
      theta = std::move(next);
    }
    const double epoch_mean = epoch_sum / static_cast<double>(n);
    fit.info.epoch_objectives.push_back(epoch_mean);
    fit.info.epochs = epoch + 1;
    if (opts.on_epoch) opts.on_epoch(epoch, epoch_mean);

    if (std::isfinite(previous)) {
      const double improvement = (epoch_mean - previous) / std::max(std::abs(previous), 1.0);
      stalled = improvement < opts.rel_tol ? stalled + 1 : 0;
      if (stalled >= opts.patience) {
        fit.info.converged = true;
        previous = epoch_mean;
        break;
      }
    }
    previous = epoch_mean;
  }
  fit.info.iterations = step;
  fit.params.base = to_constrained(theta);
  fit.info.final_objective = evaluate_map(theta, u.values(), {}, opts.prior_sigma, prior_weight, false).value;
  return fit;
}

Matrix sample_gmcm(const GmcmModel& model, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw InputError("sample_gmcm: n must be at least 1");
  const std::size_t d = model.params.d();
  if (d != model.marginals.d()) throw InputError("sample_gmcm: dimension mismatch");
  Matrix x = sample_gmm(model.params.base, n, seed);
  std::vector<GmmMarginal1d> psi;
  for (std::size_t j = 0; j < d; ++j) psi.push_back(GmmMarginal1d::from(model.params.base, j));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const double u = clip_unit(psi[j].cdf(x(i, jj)));
      x(i, jj) = model.marginals.dim(j).quantile(u);
    }
  }
  return x;
}

}  // namespace jointscen
