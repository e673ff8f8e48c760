#include "jointscen/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jointscen/error.hpp"
#include "jointscen/metrics.hpp"
#include "jointscen/model.hpp"

namespace jointscen {
namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct FitArgs {
  std::string input;
  std::string model = "gmcm";
  std::size_t components = 4;
  std::uint64_t seed = 0;
  std::string output;
  double learning_rate = 1e-3;
  double prior_sigma = 0.1;
  int epochs = 200;
  std::size_t batch_size = 1024;
  std::size_t kde_cap = 50000;
};

struct SampleArgs {
  std::string model;
  long long n = 0;
  std::uint64_t seed = 0;
  std::string output;
};

struct DensityArgs {
  std::string model;
  std::string input;
  std::string output;
};

struct CompareArgs {
  std::string input;
  std::vector<std::string> models{"gmm", "gcm", "gmcm"};
  double holdout = 0.2;
  std::size_t subsets = 10;
  std::size_t subset_size = 5000;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  std::string output;
  std::size_t components = 4;
  std::size_t kde_cap = 50000;
  double learning_rate = 1e-3;
  double prior_sigma = 0.1;
  int epochs = 200;
  std::size_t batch_size = 1024;
};

struct HeatmapArgs {
  std::string model;
  std::vector<std::string> dims;
  std::size_t grid = 100;
  std::vector<double> x_range;
  std::vector<double> y_range;
  std::string output;
};

const std::vector<std::string> kKinds{"gmm", "gcm", "gmcm"};

ModelRequest make_request(ModelKind kind, std::size_t K, std::uint64_t seed, double lr, double prior_sigma,
                          int epochs, std::size_t batch, std::ostream* log) {
  ModelRequest r;
  r.kind = kind;
  r.K = K;
  r.em.K = K;
  r.em.seed = seed;
  r.gmcm.K = K;
  r.gmcm.seed = seed;
  r.gmcm.learning_rate = lr;
  r.gmcm.prior_sigma = prior_sigma;
  r.gmcm.max_epochs = epochs;
  r.gmcm.batch_size = batch;
  if (log != nullptr) {
    r.gmcm.on_epoch = [log](int epoch, double objective) {
      char line[96];
      std::snprintf(line, sizeof(line), "epoch %d objective %.10g\n", epoch, objective);
      *log << line << std::flush;
    };
  }
  return r;
}

void cmd_fit(const FitArgs& a, std::ostream& err) {
  const Dataset train = load_csv(a.input);
  const ModelKind kind = parse_model_kind(a.model);
  ModelRequest req = make_request(kind, a.components, a.seed, a.learning_rate, a.prior_sigma, a.epochs,
                                  a.batch_size, &err);
  req.gmcm.validate();
  KdeOptions kde;
  kde.max_centers = a.kde_cap;
  kde.seed = a.seed;
  const FittedModel model = fit_model(train, req, kde);
  save_model(model, a.output);
  err << "wrote " << to_string(kind) << " model to " << a.output << '\n';
}

void cmd_sample(const SampleArgs& a) {
  if (a.n < 1) throw UsageError("-n must be at least 1");
  const FittedModel model = load_model(a.model);
  save_csv(model.sample(static_cast<std::size_t>(a.n), a.seed), a.output);
}

void cmd_density(const DensityArgs& a) {
  const FittedModel model = load_model(a.model);
  const Dataset ds = load_csv(a.input);
  if (ds.columns() != model.columns()) {
    std::string want;
    for (const auto& c : model.columns()) want += (want.empty() ? "" : ",") + c;
    throw InputError("input columns do not match the model columns (" + want + ")");
  }
  const std::vector<double> lp = model.log_pdf(ds.values());
  std::vector<std::string> cols = ds.columns();
  if (std::find(cols.begin(), cols.end(), "log_density") != cols.end()) {
    throw InputError("input already has a log_density column");
  }
  cols.push_back("log_density");
  Matrix out(ds.values().rows(), ds.values().cols() + 1);
  out.leftCols(ds.values().cols()) = ds.values();
  for (std::size_t i = 0; i < lp.size(); ++i) out(static_cast<Eigen::Index>(i), ds.values().cols()) = lp[i];
  // Dataset rejects non-finite values; format by hand so -inf densities survive.
  std::ostringstream text;
  for (std::size_t j = 0; j < cols.size(); ++j) text << (j ? "," : "") << cols[j];
  text << '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", out(i, j));
      text << (j ? "," : "") << buf;
    }
    text << '\n';
  }
  write_file_atomic(a.output, text.str());
}

int cmd_compare(const CompareArgs& a, std::ostream& out, std::ostream& err) {
  if (!(a.holdout > 0.0 && a.holdout < 1.0)) throw UsageError("--holdout must lie in (0, 1)");
  std::vector<ModelRequest> requests;
  for (const auto& name : a.models) {
    ModelKind kind;
    try {
      kind = parse_model_kind(name);
    } catch (const InputError& e) {
      throw UsageError(e.what());
    }
    requests.push_back(make_request(kind, a.components, a.seed, a.learning_rate, a.prior_sigma, a.epochs,
                                    a.batch_size, nullptr));
  }
  const Dataset all = load_csv(a.input);
  auto [train, test] = split(all, a.holdout, a.seed);
  CompareOptions opts;
  opts.seed = a.seed;
  opts.kde.max_centers = a.kde_cap;
  opts.sinkhorn.n_subsets = a.subsets;
  opts.sinkhorn.subset_size = a.subset_size;
  opts.sinkhorn.epsilon = a.epsilon;
  opts.sinkhorn.validate();
  opts.log = [&err](const std::string& msg) { err << msg << '\n'; };
  ComparisonReport report = compare_models(train, test, requests, opts);
  report.metadata["holdout"] = a.holdout;
  report.metadata["input_fingerprint"] = all.fingerprint();
  write_file_atomic(a.output, report.to_json().dump(2) + "\n");
  out << report.to_table();
  const bool any_ok = std::any_of(report.models.begin(), report.models.end(), [](const ModelReport& m) { return m.ok; });
  return any_ok ? 0 : kExitRuntime;
}

std::size_t resolve_dim(const std::string& token, const std::vector<std::string>& columns) {
  const auto it = std::find(columns.begin(), columns.end(), token);
  if (it != columns.end()) return static_cast<std::size_t>(it - columns.begin());
  std::size_t pos = 0;
  long long v = -1;
  try {
    v = std::stoll(token, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != token.size() || v < 0 || static_cast<std::size_t>(v) >= columns.size()) {
    throw InputError("--dims: '" + token + "' is neither a column name nor an index below " +
                     std::to_string(columns.size()));
  }
  return static_cast<std::size_t>(v);
}

std::pair<double, double> default_bounds(const FittedModel& model, std::size_t j) {
  const auto* marginals = std::visit(
      [](const auto& m) -> const MarginalModel* {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, GmmModel>) {
          return nullptr;
        } else {
          return &m.marginals;
        }
      },
      model.get());
  if (marginals != nullptr) {
    const KdeMarginal& k = marginals->dim(j);
    return {k.centers().front() - 3.0 * k.bandwidth(), k.centers().back() + 3.0 * k.bandwidth()};
  }
  // A GMM file carries no data range; span the components instead.
  const GmmMarginal1d m = GmmMarginal1d::from(std::get<GmmModel>(model.get()).params, j);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t k = 0; k < m.means().size(); ++k) {
    lo = std::min(lo, m.means()[k] - 4.0 * m.sds()[k]);
    hi = std::max(hi, m.means()[k] + 4.0 * m.sds()[k]);
  }
  return {lo, hi};
}

void cmd_heatmap(const HeatmapArgs& a) {
  if (a.grid < 1) throw UsageError("--grid must be at least 1");
  if (a.dims.size() != 2) throw UsageError("--dims takes exactly two entries");
  const FittedModel model = load_model(a.model);
  const std::size_t j1 = resolve_dim(a.dims[0], model.columns());
  const std::size_t j2 = resolve_dim(a.dims[1], model.columns());
  if (j1 == j2) throw InputError("--dims must name two different dimensions");
  auto [x_lo, x_hi] = default_bounds(model, j1);
  auto [y_lo, y_hi] = default_bounds(model, j2);
  if (!a.x_range.empty()) std::tie(x_lo, x_hi) = std::pair{a.x_range[0], a.x_range[1]};
  if (!a.y_range.empty()) std::tie(y_lo, y_hi) = std::pair{a.y_range[0], a.y_range[1]};
  if (!(x_lo < x_hi) || !(y_lo < y_hi)) throw InputError("heatmap bounds must satisfy lo < hi");

  const FittedModel sub = model.restrict_to(j1, j2);
  const auto g = static_cast<Eigen::Index>(a.grid);
  Matrix cells(g * g, 2);
  const double dx = (x_hi - x_lo) / static_cast<double>(g);
  const double dy = (y_hi - y_lo) / static_cast<double>(g);
  for (Eigen::Index i = 0; i < g; ++i) {
    for (Eigen::Index k = 0; k < g; ++k) {
      cells(i * g + k, 0) = x_lo + (static_cast<double>(i) + 0.5) * dx;
      cells(i * g + k, 1) = y_lo + (static_cast<double>(k) + 0.5) * dy;
    }
  }
  const std::vector<double> lp = sub.log_pdf(cells);
  std::ostringstream text;
  text << "x1,x2,density\n";
  char buf[96];
  for (Eigen::Index r = 0; r < cells.rows(); ++r) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", cells(r, 0), cells(r, 1),
                  std::exp(lp[static_cast<std::size_t>(r)]));
    text << buf;
  }
  write_file_atomic(a.output, text.str());
}

}  // namespace

int run_cli(int argc, char** argv) { return run_cli(argc, argv, std::cout, std::cerr); }

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint density models for scenario parameters"};
  app.require_subcommand(1);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model to a CSV file");
  fit_cmd->add_option("--input", fit.input, "Training CSV")->required();
  fit_cmd->add_option("--model", fit.model, "Model family")->required()->check(CLI::IsMember(kKinds));
  fit_cmd->add_option("--components", fit.components, "Mixture components")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--seed", fit.seed, "Random seed");
  fit_cmd->add_option("--output", fit.output, "Model JSON")->required();
  fit_cmd->add_option("--learning-rate", fit.learning_rate, "Adam step size")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--prior-sigma", fit.prior_sigma, "Prior scale")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--epochs", fit.epochs, "Maximum epochs")->check(CLI::NonNegativeNumber);
  fit_cmd->add_option("--batch-size", fit.batch_size, "Mini-batch size")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--kde-cap", fit.kde_cap, "Maximum KDE centers per dimension")->check(CLI::PositiveNumber);

  SampleArgs sample;
  auto* sample_cmd = app.add_subcommand("sample", "Draw samples from a model");
  sample_cmd->add_option("--model", sample.model, "Model JSON")->required()->check(CLI::ExistingFile);
  sample_cmd->add_option("-n", sample.n, "Number of rows")->required();
  sample_cmd->add_option("--seed", sample.seed, "Random seed");
  sample_cmd->add_option("--output", sample.output, "Output CSV")->required();

  DensityArgs density;
  auto* density_cmd = app.add_subcommand("density", "Append log-density to each row");
  density_cmd->add_option("--model", density.model, "Model JSON")->required()->check(CLI::ExistingFile);
  density_cmd->add_option("--input", density.input, "Input CSV")->required();
  density_cmd->add_option("--output", density.output, "Output CSV")->required();

  CompareArgs compare;
  auto* compare_cmd = app.add_subcommand("compare", "Fit and score several models");
  compare_cmd->add_option("--input", compare.input, "Data CSV")->required();
  compare_cmd->add_option("--models", compare.models, "Model families")->delimiter(',')->check(CLI::IsMember(kKinds));
  compare_cmd->add_option("--holdout", compare.holdout, "Held-out fraction");
  compare_cmd->add_option("--sinkhorn-subsets", compare.subsets, "Number of subsets")->check(CLI::PositiveNumber);
  compare_cmd->add_option("--sinkhorn-size", compare.subset_size, "Rows per subset")->check(CLI::PositiveNumber);
  compare_cmd->add_option("--sinkhorn-epsilon", compare.epsilon, "Regularization (0 = automatic)")
      ->check(CLI::NonNegativeNumber);
  compare_cmd->add_option("--seed", compare.seed, "Random seed");
  compare_cmd->add_option("--output", compare.output, "Report JSON")->required();
  compare_cmd->add_option("--components", compare.components, "Mixture components")->check(CLI::PositiveNumber);
  compare_cmd->add_option("--kde-cap", compare.kde_cap, "Maximum KDE centers per dimension")
      ->check(CLI::PositiveNumber);
  compare_cmd->add_option("--learning-rate", compare.learning_rate, "Adam step size")->check(CLI::PositiveNumber);
  compare_cmd->add_option("--prior-sigma", compare.prior_sigma, "Prior scale")->check(CLI::PositiveNumber);
  compare_cmd->add_option("--epochs", compare.epochs, "Maximum epochs")->check(CLI::NonNegativeNumber);
  compare_cmd->add_option("--batch-size", compare.batch_size, "Mini-batch size")->check(CLI::PositiveNumber);

  HeatmapArgs heat;
  auto* heat_cmd = app.add_subcommand("heatmap", "Grid of a bivariate marginal density");
  heat_cmd->add_option("--model", heat.model, "Model JSON")->required()->check(CLI::ExistingFile);
  heat_cmd->add_option("--dims", heat.dims, "Two column names or 0-based indices")->required()->delimiter(',');
  heat_cmd->add_option("--grid", heat.grid, "Cells per axis")->check(CLI::PositiveNumber);
  heat_cmd->add_option("--x-range", heat.x_range, "lo,hi for the first dimension")->delimiter(',')->expected(2);
  heat_cmd->add_option("--y-range", heat.y_range, "lo,hi for the second dimension")->delimiter(',')->expected(2);
  heat_cmd->add_option("--output", heat.output, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    if (app.get_subcommands().size() == 1) {
      err << "run '" << app.get_subcommands().front()->get_name() << " --help' for usage\n";
    }
    return kExitUsage;
  }

  try {
    if (*fit_cmd) cmd_fit(fit, err);
    if (*sample_cmd) cmd_sample(sample);
    if (*density_cmd) cmd_density(density);
    if (*compare_cmd) return cmd_compare(compare, out, err);
    if (*heat_cmd) cmd_heatmap(heat);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}

}  // namespace jointscen
