// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Optional arguments select criteria by number.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "jointscen/cli.hpp"
#include "jointscen/gcm.hpp"
#include "jointscen/gmcm.hpp"
#include "jointscen/metrics.hpp"
#include "jointscen/model.hpp"
#include "support.hpp"

using namespace jointscen;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<std::string> names(std::size_t d, const std::string& stem = "x") {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < d; ++j) out.push_back(stem + std::to_string(j));
  return out;
}

Matrix copula_sample(const GmmParams& p, std::size_t n, std::uint64_t seed) {
  const Matrix z = sample_gmm(p, n, seed);
  Matrix u(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const GmmMarginal1d m = GmmMarginal1d::from(p, static_cast<std::size_t>(j));
    for (Eigen::Index i = 0; i < z.rows(); ++i) u(i, j) = clip_unit(m.cdf(z(i, j)));
  }
  return u;
}

// --- 1: synthetic model comparison ------------------------------------------

constexpr std::size_t kTrainRows = 50000;
constexpr std::size_t kTestRows = 10000;
constexpr std::size_t kKdeCap = 5000;

GmmParams truth_base() {
  std::mt19937_64 rng(20240501);
  std::normal_distribution<double> n01;
  GmmParams p;
  p.weights = {0.45, 0.35, 0.20};
  const double means[3][4] = {{-1.0, -0.6, 0.9, 0.0}, {1.2, 0.9, -0.7, 0.8}, {0.1, -1.5, 0.4, -1.3}};
  for (int k = 0; k < 3; ++k) {
    p.means.push_back(Eigen::Map<const Vector>(means[k], 4));
    Eigen::MatrixXd a(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) a(i, j) = 0.5 * n01(rng);
    p.covariances.push_back(a * a.transpose() + 0.08 * Eigen::MatrixXd::Identity(4, 4));
  }
  return p;
}

// KDE marginals fitted to transformed normal draws: lognormal, bimodal and
// two skewed shapes.
MarginalModel truth_marginals() {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n01;
  std::bernoulli_distribution coin(0.4);
  std::vector<std::vector<double>> draws(4, std::vector<double>(kKdeCap));
  for (std::size_t i = 0; i < kKdeCap; ++i) {
    draws[0][i] = 20.0 * std::exp(0.5 * n01(rng));
    draws[1][i] = (coin(rng) ? 3.0 : -2.0) + 0.7 * n01(rng);
    draws[2][i] = std::sinh(std::asinh(n01(rng)) + 0.9);
    draws[3][i] = -5.0 * std::sinh(0.8 * std::asinh(n01(rng)) - 0.6);
  }
  std::vector<KdeMarginal> dims;
  for (const auto& v : draws) dims.push_back(fit_kde(v));
  return MarginalModel({"speed", "gap", "ttc", "decel"}, std::move(dims));
}

Outcome synthetic_comparison() {
  const auto start = std::chrono::steady_clock::now();
  const GmcmModel truth{GmcParams{truth_base()}, truth_marginals(), {}};
  const Matrix all = sample_gmcm(truth, kTrainRows + kTestRows, 101);
  const auto cols = truth.marginals.columns();
  const Dataset train(cols, all.topRows(kTrainRows));
  const Dataset test(cols, all.bottomRows(kTestRows));

  ModelRequest gmm;
  gmm.kind = ModelKind::Gmm;
  gmm.K = 4;
  ModelRequest gcm;
  gcm.kind = ModelKind::Gcm;
  ModelRequest gmcm;
  gmcm.kind = ModelKind::Gmcm;
  gmcm.K = 4;
  gmcm.gmcm.on_epoch = [](int epoch, double objective) {
    if (epoch % 10 == 0) std::fprintf(stderr, "  gmcm epoch %d objective %.6f\n", epoch, objective);
  };

  CompareOptions opts;
  opts.kde.max_centers = kKdeCap;
  opts.seed = 3;
  opts.sinkhorn.n_subsets = 10;
  opts.sinkhorn.subset_size = 5000;
  opts.log = [](const std::string& line) { std::fprintf(stderr, "  %s\n", line.c_str()); };
  const ComparisonReport report = compare_models(train, test, {gmm, gcm, gmcm}, opts);
  std::printf("%s", report.to_table().c_str());

  // Ground-truth samples against the same test set: the floor the fitted
  // models are approaching.
  SinkhornConfig cfg = opts.sinkhorn;
  cfg.seed = opts.seed;
  const Dataset truth_draw(cols, sample_gmcm(truth, kTestRows, 202));
  const SinkhornProtocolResult floor = sinkhorn_protocol(truth_draw, test, cfg);
  std::printf("ground-truth baseline: sinkhorn %.4f +- %.4f\n", floor.mean, floor.std);

  for (const auto& m : report.models) {
    if (!m.ok) return {false, m.name + " failed: " + m.error};
  }
  const ModelReport& a = report.models[0];
  const ModelReport& b = report.models[1];
  const ModelReport& c = report.models[2];
  const bool ll_best = c.heldout_loglik > a.heldout_loglik && c.heldout_loglik > b.heldout_loglik;
  const bool sk_best = c.sinkhorn_mean < a.sinkhorn_mean && c.sinkhorn_mean < b.sinkhorn_mean;
  const ModelReport& worst = a.sinkhorn_mean > b.sinkhorn_mean ? a : b;
  const bool separated = c.sinkhorn_mean + c.sinkhorn_std < worst.sinkhorn_mean - worst.sinkhorn_std;
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  return {ll_best && sk_best && separated,
          fmt("held-out LL gmm %.4f gcm %.4f gmcm %.4f; sinkhorn gmm %.4f+-%.4f gcm %.4f+-%.4f gmcm %.4f+-%.4f; "
              "%.1f min",
              a.heldout_loglik, b.heldout_loglik, c.heldout_loglik, a.sinkhorn_mean, a.sinkhorn_std,
              b.sinkhorn_mean, b.sinkhorn_std, c.sinkhorn_mean, c.sinkhorn_std, minutes)};
}

// --- 2: MAP gradient against central differences ----------------------------

constexpr double kFdStep = 1e-5;
constexpr double kGradientTol = 1e-4;

Outcome gradient_check() {
  double worst = 0.0;
  for (std::size_t K = 1; K <= 3; ++K) {
    const GmmParams truth = testing::random_gmm(K, 2, 10 + K);
    const UnitDataset u(copula_sample(truth, 64, 20 + K));
    UnconstrainedParams theta = to_unconstrained(testing::random_gmm(K, 2, 30 + K));
    const Vector g = map_gradient(theta, u, 0.1);
    for (Eigen::Index i = 0; i < theta.values.size(); ++i) {
      UnconstrainedParams hi = theta;
      UnconstrainedParams lo = theta;
      hi.values(i) += kFdStep;
      lo.values(i) -= kFdStep;
      const double fd = (map_objective(hi, u, 0.1) - map_objective(lo, u, 0.1)) / (2.0 * kFdStep);
      // Floored at 1e-3 of the gradient scale so that vanishing entries are
      // compared absolutely.
      const double scale = std::max(std::abs(fd), 1e-3 * g.cwiseAbs().maxCoeff());
      worst = std::max(worst, std::abs(g(i) - fd) / scale);
    }
  }
  return {worst < kGradientTol, fmt("max relative error %.3g over K=1..3", worst)};
}

// --- 3: quantile roundtrips --------------------------------------------------

constexpr double kGmmRoundtripTol = 1e-10;
constexpr double kKdeRoundtripTol = 1e-6;

Outcome quantile_roundtrips() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> n01;
  double gmm_worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t K = 1 + static_cast<std::size_t>(t % 4);
    std::vector<double> w, m, s;
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      w.push_back(0.1 + unif(rng));
      total += w.back();
      m.push_back(3.0 * n01(rng));
      s.push_back(0.1 + 2.0 * unif(rng));
    }
    for (double& v : w) v /= total;
    const GmmMarginal1d psi(w, m, s);
    const double u = clip_unit(unif(rng));
    gmm_worst = std::max(gmm_worst, std::abs(psi.cdf(psi.quantile(u)) - u));
  }

  std::vector<double> x(4000);
  for (double& v : x) v = std::exp(0.7 * n01(rng));
  const KdeMarginal kde = fit_kde(x);
  double kde_worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const double u = clip_unit(unif(rng));
    kde_worst = std::max(kde_worst, std::abs(kde.cdf(kde.quantile(u)) - u));
  }
  double kde_x_worst = 0.0;
  std::uniform_real_distribution<double> in_range(kde.centers().front(), kde.centers().back());
  for (int t = 0; t < 1000; ++t) {
    const double v = in_range(rng);
    // The inverse is unique only where the density is not negligible.
    if (kde.pdf(v) < 1e-3) continue;
    kde_x_worst = std::max(kde_x_worst, std::abs(kde.quantile(kde.cdf(v)) - v));
  }
  return {gmm_worst <= kGmmRoundtripTol && kde_worst <= kKdeRoundtripTol && kde_x_worst <= kKdeRoundtripTol,
          fmt("gmm |Psi(Psi^-1(u))-u| %.3g; kde |F(F^-1(u))-u| %.3g, |F^-1(F(x))-x| %.3g", gmm_worst, kde_worst,
              kde_x_worst)};
}

// --- 4: normalization --------------------------------------------------------

constexpr int kGrid = 300;
constexpr double kMassTol = 2e-2;

Dataset curved_pairs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Matrix v(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double a = n01(rng);
    v(i, 0) = std::exp(0.4 * a);
    v(i, 1) = a * a * 0.5 + 0.5 * n01(rng);
  }
  return Dataset({"a", "b"}, v);
}

struct Fitted2d {
  MarginalModel marginals;
  GmcmModel gmcm;
  GcmModel gcm;
};

const Fitted2d& fitted_2d() {
  static const Fitted2d fits = [] {
    const Dataset train = curved_pairs(4000, 41);
    MarginalModel marginals = fit_marginals(train);
    const UnitDataset u = to_unit(train, marginals);
    FitOptions opts;
    opts.K = 3;
    opts.max_epochs = 30;
    opts.batch_size = 256;
    opts.learning_rate = 1e-2;
    GmcmFit fit = fit_gmcm(u, opts);
    return Fitted2d{marginals, GmcmModel{fit.params, marginals, fit.info}, GcmModel{fit_gcm(u), marginals}};
  }();
  return fits;
}

double grid_mass(double lo0, double hi0, double lo1, double hi1, const std::function<double(const Vector&)>& log_f) {
  const double h0 = (hi0 - lo0) / kGrid;
  const double h1 = (hi1 - lo1) / kGrid;
  double mass = 0.0;
  Vector p(2);
  for (int i = 0; i < kGrid; ++i) {
    for (int j = 0; j < kGrid; ++j) {
      p << lo0 + (i + 0.5) * h0, lo1 + (j + 0.5) * h1;
      mass += std::exp(log_f(p));
    }
  }
  return mass * h0 * h1;
}

Outcome normalization() {
  const Fitted2d& f = fitted_2d();
  const auto& m0 = f.marginals.dim(0);
  const auto& m1 = f.marginals.dim(1);
  const GmcmDensity joint(f.gmcm);
  const double gmcm_mass = grid_mass(m0.support_lo(), m0.support_hi(), m1.support_lo(), m1.support_hi(),
                                     [&](const Vector& x) { return joint.log_pdf(x); });
  const double gcm_mass = grid_mass(m0.support_lo(), m0.support_hi(), m1.support_lo(), m1.support_hi(),
                                    [&](const Vector& x) { return gcm_joint_logpdf(f.gcm.params, f.marginals, x); });
  const MixtureCopula copula(f.gmcm.params.base);
  const double copula_mass = grid_mass(0.0, 1.0, 0.0, 1.0, [&](const Vector& u) { return copula.log_density(u); });
  auto ok = [](double v) { return std::abs(v - 1.0) <= kMassTol; };
  return {ok(gmcm_mass) && ok(gcm_mass) && ok(copula_mass),
          fmt("gmcm %.5f, gcm %.5f, copula %.5f", gmcm_mass, gcm_mass, copula_mass)};
}

// --- 5: reductions -----------------------------------------------------------

constexpr double kGaussianReductionTol = 1e-8;
constexpr double kIndependenceTol = 1e-9;

Outcome reductions() {
  const GmmParams one = testing::random_gmm(1, 3, 55);
  const Eigen::VectorXd sd = one.covariances[0].diagonal().cwiseSqrt();
  const GcmParams gauss{sd.cwiseInverse().asDiagonal() * one.covariances[0] * sd.cwiseInverse().asDiagonal()};
  GmmParams diagonal = one;
  diagonal.covariances[0] = one.covariances[0].diagonal().asDiagonal();
  const MixtureCopula gmc(one);
  const MixtureCopula ind(diagonal);
  const GaussianCopula gc(gauss);
  const Matrix u = testing::random_unit(1000, 3, 56);
  double gauss_worst = 0.0;
  double ind_worst = 0.0;
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const Vector ui = u.row(i).transpose();
    gauss_worst = std::max(gauss_worst, std::abs(gmc.log_density(ui) - gc.log_density(ui)));
    ind_worst = std::max(ind_worst, std::abs(ind.log_density(ui)));
  }
  return {gauss_worst <= kGaussianReductionTol && ind_worst <= kIndependenceTol,
          fmt("K=1 vs Gaussian copula %.3g; diagonal K=1 |log c| %.3g", gauss_worst, ind_worst)};
}

// --- 6: affine invariance ----------------------------------------------------

constexpr double kAffineTol = 1e-8;

Outcome affine_invariance() {
  const GmmParams p = testing::random_gmm(3, 3, 61);
  Vector scale(3), shift(3);
  scale << 0.3, 4.0, 1.7;
  shift << -2.0, 5.0, 0.25;
  GmmParams q = p;
  for (std::size_t k = 0; k < q.K(); ++k) {
    q.means[k] = scale.cwiseProduct(p.means[k]) + shift;
    q.covariances[k] = scale.asDiagonal() * p.covariances[k] * scale.asDiagonal();
  }
  const Matrix u = testing::random_unit(1000, 3, 62);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const Vector ui = u.row(i).transpose();
    worst = std::max(worst, std::abs(gmc_copula_logdensity({p}, ui) - gmc_copula_logdensity({q}, ui)));
  }
  return {worst <= kAffineTol, fmt("max |delta log c| %.3g", worst)};
}

// --- 7: Sinkhorn against exact transport -------------------------------------

constexpr double kOtRelTol = 0.01;
constexpr double kSymmetryTol = 1e-8;
constexpr double kSingletonTol = 1e-12;

Outcome sinkhorn_exact() {
  SinkhornConfig cfg;
  cfg.epsilon = 1e-3;
  cfg.standardize = false;
  cfg.max_iter = 100000;
  std::mt19937_64 rng(71);
  std::normal_distribution<double> n01;
  auto cloud = [&](std::size_t n, double shift) {
    Matrix m(static_cast<Eigen::Index>(n), 2);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < 2; ++j) m(i, j) = n01(rng) + shift;
    return m;
  };
  double rel_worst = 0.0;
  double sym_worst = 0.0;
  for (int t = 0; t < 40; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(t % 4);
    const Matrix a = cloud(n, 0.0);
    const Matrix b = cloud(n, 0.7);
    const double exact = testing::exact_ot(a, b);
    const Dataset da(names(2), a);
    const Dataset db(names(2), b);
    const double ab = sinkhorn_distance(da, db, cfg);
    const double ba = sinkhorn_distance(db, da, cfg);
    rel_worst = std::max(rel_worst, std::abs(ab - exact) / exact);
    sym_worst = std::max(sym_worst, std::abs(ab - ba));
  }
  const Matrix p = cloud(1, 0.0);
  const Matrix q = cloud(1, 1.0);
  const double single = sinkhorn_distance(Dataset(names(2), p), Dataset(names(2), q), cfg);
  const double identical = sinkhorn_distance(Dataset(names(2), p), Dataset(names(2), p), cfg);
  const double single_err = std::max(std::abs(single - (p - q).squaredNorm()), std::abs(identical));
  return {rel_worst <= kOtRelTol && sym_worst <= kSymmetryTol && single_err <= kSingletonTol,
          fmt("max relative gap %.3g, asymmetry %.3g, singleton error %.3g", rel_worst, sym_worst, single_err)};
}

// --- 8: EM monotonicity ------------------------------------------------------

constexpr double kEmSlack = 1e-10;

Outcome em_monotone() {
  std::mt19937_64 rng(81);
  std::normal_distribution<double> n01;
  Matrix separated(2000, 2);
  for (Eigen::Index i = 0; i < separated.rows(); ++i) {
    const double centre = i < 1000 ? -5.0 : 5.0;
    separated(i, 0) = centre + n01(rng);
    separated(i, 1) = centre + n01(rng);
  }
  // Overlapping components make EM take many small steps.
  const Matrix overlapping = sample_gmm(testing::random_gmm(3, 2, 82), 2000, 83);

  double worst_drop = 0.0;
  int steps = 0;
  for (const auto& [x, K] : {std::pair{separated, std::size_t{2}}, std::pair{overlapping, std::size_t{4}}}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      EmOptions opts;
      opts.K = K;
      opts.seed = seed;
      const EmResult r = fit_em(x, opts);
      for (std::size_t i = 1; i < r.loglik_trace.size(); ++i) {
        worst_drop = std::max(worst_drop, r.loglik_trace[i - 1] - r.loglik_trace[i]);
        ++steps;
      }
    }
  }
  return {worst_drop <= kEmSlack, fmt("largest decrease %.3g over %d steps", worst_drop, steps)};
}

// --- 9: sampling faithfulness ------------------------------------------------

constexpr double kKsTol = 0.01;

Outcome sampling_ks() {
  const Fitted2d& f = fitted_2d();
  const Matrix draws = sample_gmcm(f.gmcm, 100000, 91);
  double worst = 0.0;
  for (std::size_t j = 0; j < 2; ++j) {
    const auto& m = f.marginals.dim(j);
    worst = std::max(worst, testing::ks_statistic(testing::column(draws, static_cast<Eigen::Index>(j)),
                                                  [&](double v) { return m.cdf(v); }));
  }
  return {worst < kKsTol, fmt("max KS %.4f", worst)};
}

// --- 10: two density formulas ------------------------------------------------

constexpr double kDualTol = 1e-10;

Outcome dual_formula() {
  const Fitted2d& f = fitted_2d();
  const GmcmDensity joint(f.gmcm);
  const Matrix inside = sample_gmcm(f.gmcm, 500, 101);
  std::mt19937_64 rng(102);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Vector x(2);
    if (i < 500) {
      x = inside.row(i).transpose();
    } else {
      for (std::size_t j = 0; j < 2; ++j) {
        const auto& m = f.marginals.dim(j);
        std::uniform_real_distribution<double> span(m.centers().front(), m.centers().back());
        x(static_cast<Eigen::Index>(j)) = span(rng);
      }
    }
    worst = std::max(worst, std::abs(joint.log_pdf(x) - joint.log_pdf_sklar(x)));
  }
  return {worst <= kDualTol, fmt("max |delta log f| %.3g", worst)};
}

// --- 11: CLI determinism -----------------------------------------------------

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "jointscen");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome cli_determinism() {
  testing::TempDir dir;
  save_csv(curved_pairs(1500, 111), dir / "data.csv");
  std::string reports[2];
  for (int run = 0; run < 2; ++run) {
    const std::string tag = std::to_string(run);
    const std::string model = (dir / ("model" + tag + ".json")).string();
    const std::string samples = (dir / ("samples" + tag + ".csv")).string();
    const std::string report = (dir / ("report" + tag + ".json")).string();
    const int codes[] = {
        cli({"fit", "--input", (dir / "data.csv").string(), "--model", "gmcm", "--components", "2", "--epochs", "5",
             "--seed", "7", "--output", model}),
        cli({"sample", "--model", model, "-n", "1500", "--seed", "8", "--output", samples}),
        cli({"compare", "--input", samples, "--models", "gmm,gcm,gmcm", "--components", "2", "--epochs", "5",
             "--sinkhorn-subsets", "3", "--sinkhorn-size", "200", "--seed", "9", "--output", report})};
    for (int c : codes) {
      if (c != 0) return {false, fmt("run %d: a command exited with %d", run, c)};
    }
    reports[run] = slurp(report);
  }
  const bool same = !reports[0].empty() && reports[0] == reports[1];
  return {same, fmt("report bytes %zu, identical %s", reports[0].size(), same ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"synthetic comparison", synthetic_comparison},
      {"gradient vs finite differences", gradient_check},
      {"quantile roundtrips", quantile_roundtrips},
      {"density normalization", normalization},
      {"reduction identities", reductions},
      {"affine invariance", affine_invariance},
      {"sinkhorn vs exact transport", sinkhorn_exact},
      {"EM monotonicity", em_monotone},
      {"sampling faithfulness", sampling_ks},
      {"dual density formulas", dual_formula},
      {"CLI determinism", cli_determinism},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
