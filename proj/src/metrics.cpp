#include "jointscen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace jointscen {

using nlohmann::json;

double mean_loglik(const FittedModel& model, const Dataset& ds) {
  if (ds.d() != model.d()) {
    throw InputError("mean_loglik: model has " + std::to_string(model.d()) + " dimensions, data has " +
                     std::to_string(ds.d()));
  }
  const std::vector<double> lp = model.log_pdf(ds.values());
  double total = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (!std::isfinite(lp[i])) {
      throw NumericalError("log-density is not finite at row " + std::to_string(i));
    }
    total += lp[i];
  }
  return total / static_cast<double>(lp.size());
}

void SinkhornConfig::validate() const {
  if (max_iter < 1 || !(tol > 0.0)) throw InputError("Sinkhorn: max_iter and tol must be positive");
  if (subset_size < 1 || n_subsets < 1) throw InputError("Sinkhorn: subset size and count must be positive");
  if (!std::isfinite(epsilon)) throw InputError("Sinkhorn: epsilon must be finite");
}

Standardization Standardization::identity(std::size_t d) {
  return {Vector::Zero(static_cast<Eigen::Index>(d)), Vector::Ones(static_cast<Eigen::Index>(d))};
}

Standardization Standardization::fit(const Matrix& reference) {
  Standardization s;
  s.mean = reference.colwise().mean().transpose();
  s.scale.resize(reference.cols());
  for (Eigen::Index j = 0; j < reference.cols(); ++j) {
    const double var = (reference.col(j).array() - s.mean(j)).square().mean();
    s.scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

Matrix Standardization::apply(const Matrix& x) const {
  Matrix out = x.rowwise() - mean.transpose();
  return out.array().rowwise() / scale.transpose().array();
}

Matrix squared_euclidean_cost(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw InputError("cost matrix: dimension mismatch");
  const Vector na = a.rowwise().squaredNorm();
  const Vector nb = b.rowwise().squaredNorm();
  Matrix c = -2.0 * (a * b.transpose());
  c.colwise() += na;
  c.rowwise() += nb.transpose();
  // Clamp rounding noise; exact zeros matter for coincident points.
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      if (c(i, j) < 1e-12 * (na(i) + nb(j))) c(i, j) = (a.row(i) - b.row(j)).squaredNorm();
    }
  }
  return c;
}

double auto_epsilon(const Matrix& probe) {
  const Eigen::Index m = std::min<Eigen::Index>(probe.rows(), 1000);
  if (m < 2) return 1.0;
  const Matrix p = probe.topRows(m);
  const Matrix c = squared_euclidean_cost(p, p);
  const double mean = c.sum() / static_cast<double>(m * (m - 1));
  return mean > 0.0 ? 0.05 * mean : 1.0;
}

namespace {

constexpr int kStageIterations = 100;
constexpr double kStageTol = 1e-3;
constexpr double kUnderflowRatio = 700.0;
constexpr double kOverRelaxation = 1.8;
constexpr int kPlainIterations = 10;
constexpr double kRelaxBlowUp = 100.0;

using ColMatrix = Eigen::MatrixXd;

double log_sum_exp_row(const ColMatrix& c, Eigen::Index i, const Vector& g, double eps) {
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < c.cols(); ++j) m = std::max(m, (g(j) - c(i, j)) / eps);
  double s = 0.0;
  for (Eigen::Index j = 0; j < c.cols(); ++j) s += std::exp((g(j) - c(i, j)) / eps - m);
  return m + std::log(s);
}

double log_sum_exp_col(const ColMatrix& c, Eigen::Index j, const Vector& f, double eps) {
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < c.rows(); ++i) m = std::max(m, (f(i) - c(i, j)) / eps);
  double s = 0.0;
  for (Eigen::Index i = 0; i < c.rows(); ++i) s += std::exp((f(i) - c(i, j)) / eps - m);
  return m + std::log(s);
}

}  // namespace

SinkhornResult sinkhorn_solve(const Matrix& a, const Matrix& b, double epsilon, int max_iter, double tol) {
  if (a.rows() < 1 || b.rows() < 1) throw InputError("Sinkhorn: empty point set");
  if (a.cols() != b.cols()) throw InputError("Sinkhorn: dimension mismatch");
  if (!(epsilon > 0.0)) throw InputError("Sinkhorn: epsilon must be positive");
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.rows();
  const ColMatrix cost = squared_euclidean_cost(a, b);
  const double log_mu = -std::log(static_cast<double>(n));
  const double log_nu = -std::log(static_cast<double>(m));
  const double mu = 1.0 / static_cast<double>(n);
  const double nu = 1.0 / static_cast<double>(m);

  // Potentials f, g carry the large part of the scaling; sa, sb stay near 1
  // and are folded back into f, g whenever they grow.
  Vector f = Vector::Zero(n);
  Vector g = Vector::Zero(m);
  Vector sa = Vector::Ones(n);
  Vector sb = Vector::Ones(m);
  ColMatrix kernel(n, m);
  double eps = epsilon;

  auto absorb = [&]() {
    f.array() += eps * sa.array().log();
    g.array() += eps * sb.array().log();
    sa.setOnes();
    sb.setOnes();
  };
  auto log_domain_step = [&]() {
    for (Eigen::Index i = 0; i < n; ++i) f(i) = eps * (log_mu - log_sum_exp_row(cost, i, g, eps));
    for (Eigen::Index j = 0; j < m; ++j) g(j) = eps * (log_nu - log_sum_exp_col(cost, j, f, eps));
  };
  auto rebuild_kernel = [&]() {
    for (Eigen::Index j = 0; j < m; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) kernel(i, j) = std::exp((f(i) + g(j) - cost(i, j)) / eps);
    }
  };
  auto reset = [&]() {
    absorb();
    log_domain_step();
    rebuild_kernel();
  };

  constexpr double kAbsorb = 1e30;
  // Over-relaxed scaling, a <- a^(1-w) (mu / Kb)^w, starting after a few
  // plain steps and dropped if the violation blows up. The rows are checked
  // every iteration; the columns only once the rows pass, since they are
  // exact when w = 1. Returns the iterations used; `violation` holds the
  // last measured value.
  double violation = std::numeric_limits<double>::infinity();
  auto relax = [](Vector& s, const Vector& target, double w) {
    if (w == 1.0) {
      s = target;
    } else {
      s = s.array().pow(1.0 - w) * target.array().pow(w);
    }
  };
  auto iterate = [&](int limit, double stop) {
    double best = std::numeric_limits<double>::infinity();
    bool relaxed = true;
    int iter = 0;
    while (iter < limit) {
      ++iter;
      Vector kb = kernel * sb;
      if (!(kb.minCoeff() > 0.0) || !kb.allFinite()) {
        reset();
        kb = kernel * sb;
      }
      violation = (sa.cwiseProduct(kb).array() - mu).abs().sum();
      if (violation < stop) {
        const Vector kta = kernel.transpose() * sa;
        violation = std::max(violation, (sb.cwiseProduct(kta).array() - nu).abs().sum());
        if (violation < stop) break;
      }
      if (!(violation < kRelaxBlowUp * best)) relaxed = false;
      best = std::min(best, violation);
      const double w = relaxed && iter > kPlainIterations ? kOverRelaxation : 1.0;
      relax(sa, (1.0 / kb.array()) * mu, w);
      Vector kta = kernel.transpose() * sa;
      if (!(kta.minCoeff() > 0.0) || !kta.allFinite()) {
        reset();
        kta = kernel.transpose() * sa;
      }
      relax(sb, (1.0 / kta.array()) * nu, w);
      const double big = std::max({sa.maxCoeff(), sb.maxCoeff(), 1.0 / sa.minCoeff(), 1.0 / sb.minCoeff()});
      if (big > kAbsorb) {
        absorb();
        rebuild_kernel();
      }
    }
    return iter;
  };

  // When the cost range spans more than the double exponent range of the
  // kernel, plain scaling crawls; warm-start the potentials by halving
  // epsilon down from the range.
  const double range = cost.maxCoeff();
  std::vector<double> schedule;
  if (range / epsilon > kUnderflowRatio) {
    for (double e = epsilon * 2.0; e < range; e *= 2.0) schedule.push_back(e);
    std::reverse(schedule.begin(), schedule.end());
  }
  schedule.push_back(epsilon);

  SinkhornResult res;
  res.epsilon = epsilon;
  for (std::size_t s = 0; s < schedule.size(); ++s) {
    if (s > 0) absorb();
    eps = schedule[s];
    log_domain_step();
    rebuild_kernel();
    if (s + 1 == schedule.size()) {
      res.iterations = iterate(max_iter, tol);
    } else {
      iterate(kStageIterations, kStageTol);
    }
  }
  res.marginal_violation = violation;
  res.converged = violation < tol;

  double total = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    double col = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) col += sa(i) * kernel(i, j) * cost(i, j);
    total += col * sb(j);
  }
  res.cost = std::max(0.0, total);
  return res;
}

namespace {

bool precedes(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) return x.rows() < y.rows();
  return std::lexicographical_compare(x.data(), x.data() + x.size(), y.data(), y.data() + y.size());
}

}  // namespace

double sinkhorn_distance(const Dataset& a, const Dataset& b, const SinkhornConfig& cfg) {
  cfg.validate();
  if (a.d() != b.d()) throw InputError("Sinkhorn: datasets differ in dimension");
  if (a.n() == 0 || b.n() == 0) throw InputError("Sinkhorn: empty dataset");
  // Solve in a canonical argument order so that swapping inputs is exact.
  if (precedes(b.values(), a.values())) return sinkhorn_distance(b, a, cfg);
  Matrix xa = a.values();
  Matrix xb = b.values();
  if (cfg.standardize) {
    Matrix pooled(xa.rows() + xb.rows(), xa.cols());
    pooled << xa, xb;
    const Standardization s = Standardization::fit(pooled);
    xa = s.apply(xa);
    xb = s.apply(xb);
  }
  double eps = cfg.epsilon;
  if (!(eps > 0.0)) {
    Matrix probe(std::min<Eigen::Index>(xa.rows(), 500) + std::min<Eigen::Index>(xb.rows(), 500), xa.cols());
    probe << xa.topRows(std::min<Eigen::Index>(xa.rows(), 500)), xb.topRows(std::min<Eigen::Index>(xb.rows(), 500));
    eps = auto_epsilon(probe);
  }
  const SinkhornResult r = sinkhorn_solve(xa, xb, eps, cfg.max_iter, cfg.tol);
  if (!r.converged) {
    std::ostringstream msg;
    msg << "Sinkhorn did not converge in " << r.iterations << " iterations (marginal violation "
        << r.marginal_violation << ")";
    throw SinkhornConvergenceError(msg.str(), r.marginal_violation);
  }
  return r.cost;
}

namespace {

Matrix sample_rows(const Matrix& x, std::size_t count, std::mt19937_64& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  Matrix out(static_cast<Eigen::Index>(count), x.cols());
  for (std::size_t i = 0; i < count; ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

}  // namespace

SinkhornProtocolResult sinkhorn_protocol(const Dataset& model_samples, const Dataset& reference,
                                         const SinkhornConfig& cfg) {
  cfg.validate();
  if (model_samples.d() != reference.d()) throw InputError("Sinkhorn protocol: datasets differ in dimension");
  if (model_samples.n() == 0 || reference.n() == 0) throw InputError("Sinkhorn protocol: empty dataset");
  SinkhornProtocolResult out;
  out.subset_size = std::min({cfg.subset_size, model_samples.n(), reference.n()});
  if (out.subset_size < cfg.subset_size) {
    out.warnings.push_back("subset size reduced from " + std::to_string(cfg.subset_size) + " to " +
                           std::to_string(out.subset_size));
  }

  const Standardization scale = cfg.standardize ? Standardization::fit(reference.values())
                                                : Standardization::identity(reference.d());
  const Matrix xm = scale.apply(model_samples.values());
  const Matrix xr = scale.apply(reference.values());

  out.epsilon = cfg.epsilon;
  if (!(out.epsilon > 0.0)) {
    std::mt19937_64 probe_rng(cfg.seed ^ 0x5851f42d4c957f2dull);
    out.epsilon = auto_epsilon(sample_rows(xr, std::min<std::size_t>(1000, reference.n()), probe_rng));
  }

  for (std::size_t s = 0; s < cfg.n_subsets; ++s) {
    std::mt19937_64 rng(cfg.seed + 7919 * (s + 1));
    const Matrix a = sample_rows(xm, out.subset_size, rng);
    const Matrix b = sample_rows(xr, out.subset_size, rng);
    const SinkhornResult r = sinkhorn_solve(a, b, out.epsilon, cfg.max_iter, cfg.tol);
    out.max_violation = std::max(out.max_violation, r.marginal_violation);
    if (!r.converged) {
      // Isolated tail points make the last digits of the plan converge very
      // slowly; the cost has long settled, so report it and flag the subset.
      std::ostringstream msg;
      msg << "subset " << s << ": Sinkhorn stopped after " << r.iterations << " iterations with marginal violation "
          << r.marginal_violation;
      out.warnings.push_back(msg.str());
      ++out.unconverged;
    }
    out.values.push_back(r.cost);
  }
  const double k = static_cast<double>(out.values.size());
  out.mean = std::accumulate(out.values.begin(), out.values.end(), 0.0) / k;
  if (out.values.size() > 1) {
    double ss = 0.0;
    for (double v : out.values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / (k - 1.0));
  }
  return out;
}

json ComparisonReport::to_json() const {
  json rows = json::array();
  for (const auto& m : models) {
    json row{{"name", m.name}, {"ok", m.ok}};
    if (m.ok) {
      row["train_mean_loglik"] = m.train_loglik;
      row["heldout_mean_loglik"] = m.heldout_loglik;
      row["sinkhorn_mean"] = m.sinkhorn_mean;
      row["sinkhorn_std"] = m.sinkhorn_std;
      row["sinkhorn_values"] = m.sinkhorn_values;
      row["sinkhorn_max_violation"] = m.sinkhorn_max_violation;
      row["sinkhorn_unconverged_subsets"] = m.sinkhorn_unconverged;
    } else {
      row["error"] = m.error;
    }
    rows.push_back(std::move(row));
  }
  return json{{"schema_version", 1}, {"models", rows}, {"metadata", metadata}};
}

ComparisonReport ComparisonReport::from_json(const json& j) {
  ComparisonReport r;
  for (const auto& row : j.at("models")) {
    ModelReport m;
    m.name = row.at("name").get<std::string>();
    m.ok = row.at("ok").get<bool>();
    if (m.ok) {
      m.train_loglik = row.at("train_mean_loglik").get<double>();
      m.heldout_loglik = row.at("heldout_mean_loglik").get<double>();
      m.sinkhorn_mean = row.at("sinkhorn_mean").get<double>();
      m.sinkhorn_std = row.at("sinkhorn_std").get<double>();
      m.sinkhorn_values = row.at("sinkhorn_values").get<std::vector<double>>();
      m.sinkhorn_max_violation = row.at("sinkhorn_max_violation").get<double>();
      m.sinkhorn_unconverged = row.at("sinkhorn_unconverged_subsets").get<std::size_t>();
    } else {
      m.error = row.value("error", std::string());
    }
    r.models.push_back(std::move(m));
  }
  r.metadata = j.value("metadata", json::object());
  return r;
}

std::string ComparisonReport::to_table() const {
  int best_train = -1;
  int best_heldout = -1;
  int best_sinkhorn = -1;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& m = models[i];
    if (!m.ok) continue;
    const int ii = static_cast<int>(i);
    if (best_train < 0 || m.train_loglik > models[static_cast<std::size_t>(best_train)].train_loglik) best_train = ii;
    if (best_heldout < 0 || m.heldout_loglik > models[static_cast<std::size_t>(best_heldout)].heldout_loglik) best_heldout = ii;
    if (best_sinkhorn < 0 || m.sinkhorn_mean < models[static_cast<std::size_t>(best_sinkhorn)].sinkhorn_mean) best_sinkhorn = ii;
  }
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-8s %16s %16s %26s\n", "Model", "Train LL", "Held-out LL", "Sinkhorn (mean +- std)");
  out << line;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& m = models[i];
    if (!m.ok) {
      std::snprintf(line, sizeof(line), "%-8s failed: ", m.name.c_str());
      out << line << m.error << '\n';
      continue;
    }
    const int ii = static_cast<int>(i);
    char train[32];
    char heldout[32];
    char sink[48];
    std::snprintf(train, sizeof(train), "%.4f%s", m.train_loglik, ii == best_train ? "*" : " ");
    std::snprintf(heldout, sizeof(heldout), "%.4f%s", m.heldout_loglik, ii == best_heldout ? "*" : " ");
    std::snprintf(sink, sizeof(sink), "%.4f +- %.4f%s", m.sinkhorn_mean, m.sinkhorn_std, ii == best_sinkhorn ? "*" : " ");
    std::snprintf(line, sizeof(line), "%-8s %16s %16s %26s\n", m.name.c_str(), train, heldout, sink);
    out << line;
  }
  out << "(* best in column)\n";
  return out.str();
}

ComparisonReport evaluate_models(const std::vector<std::pair<std::string, const FittedModel*>>& models,
                                 const Dataset& train, const Dataset& test, const CompareOptions& opts) {
  ComparisonReport report;
  for (std::size_t i = 0; i < models.size(); ++i) {
    ModelReport row;
    row.name = models[i].first;
    try {
      const FittedModel& model = *models[i].second;
      if (opts.log) opts.log("evaluating " + row.name);
      row.train_loglik = mean_loglik(model, train);
      row.heldout_loglik = mean_loglik(model, test);
      const Dataset samples = model.sample(test.n(), opts.seed + 1000 + i);
      SinkhornConfig cfg = opts.sinkhorn;
      cfg.seed = opts.seed;
      const SinkhornProtocolResult s = sinkhorn_protocol(samples, test, cfg);
      row.sinkhorn_mean = s.mean;
      row.sinkhorn_std = s.std;
      row.sinkhorn_values = s.values;
      row.sinkhorn_max_violation = s.max_violation;
      row.sinkhorn_unconverged = s.unconverged;
      report.metadata["sinkhorn_epsilon"] = s.epsilon;
      report.metadata["sinkhorn_subset_size"] = s.subset_size;
      for (const auto& w : s.warnings) {
        if (opts.log) opts.log("warning: " + row.name + ": " + w);
      }
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    report.models.push_back(std::move(row));
  }
  report.metadata["loglik"] = "per-sample mean";
  report.metadata["sinkhorn_cost"] = "squared euclidean";
  report.metadata["sinkhorn_standardization"] = opts.sinkhorn.standardize ? "reference z-score" : "none";
  report.metadata["sinkhorn_n_subsets"] = opts.sinkhorn.n_subsets;
  report.metadata["sinkhorn_requested_subset_size"] = opts.sinkhorn.subset_size;
  report.metadata["sinkhorn_tol"] = opts.sinkhorn.tol;
  report.metadata["sinkhorn_max_iter"] = opts.sinkhorn.max_iter;
  report.metadata["seed"] = opts.seed;
  report.metadata["n_train"] = train.n();
  report.metadata["n_test"] = test.n();
  return report;
}

ComparisonReport compare_models(const Dataset& train, const Dataset& test, const std::vector<ModelRequest>& requests,
                                const CompareOptions& opts) {
  if (train.d() != test.d()) throw InputError("compare: train and test differ in dimension");
  std::optional<MarginalModel> marginals;
  std::string marginal_error;
  const bool needs_marginals = std::any_of(requests.begin(), requests.end(),
                                           [](const ModelRequest& r) { return r.kind != ModelKind::Gmm; });
  if (needs_marginals) {
    try {
      KdeOptions kde = opts.kde;
      kde.seed = opts.seed;
      marginals = fit_marginals(train, kde);
    } catch (const std::exception& e) {
      marginal_error = e.what();
    }
  }

  std::vector<std::optional<FittedModel>> fitted;
  std::vector<std::string> fit_errors;
  for (const auto& req : requests) {
    ModelRequest r = req;
    r.em.seed = opts.seed;
    r.gmcm.seed = opts.seed;
    try {
      if (opts.log) opts.log("fitting " + to_string(r.kind));
      if (r.kind != ModelKind::Gmm && !marginals) throw InputError("marginal fit failed: " + marginal_error);
      fitted.emplace_back(r.kind == ModelKind::Gmm ? fit_model(train, r) : fit_model(train, r, *marginals));
      fit_errors.emplace_back();
    } catch (const std::exception& e) {
      fitted.emplace_back(std::nullopt);
      fit_errors.emplace_back(e.what());
    }
  }

  std::vector<std::pair<std::string, const FittedModel*>> ok;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (fitted[i]) ok.emplace_back(to_string(requests[i].kind), &*fitted[i]);
  }
  ComparisonReport scored = evaluate_models(ok, train, test, opts);

  ComparisonReport report;
  report.metadata = scored.metadata;
  report.metadata["kde_max_centers"] = opts.kde.max_centers;
  std::size_t next = 0;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (fitted[i]) {
      report.models.push_back(scored.models[next++]);
    } else {
      ModelReport row;
      row.name = to_string(requests[i].kind);
      row.error = fit_errors[i];
      report.models.push_back(std::move(row));
    }
  }
  return report;
}

}  // namespace jointscen
