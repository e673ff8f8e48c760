#include "jointscen/model.hpp"

#include <fstream>
#include <sstream>

#include "jointscen/error.hpp"

namespace jointscen {

using nlohmann::json;

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Gmm: return "gmm";
    case ModelKind::Gcm: return "gcm";
    case ModelKind::Gmcm: return "gmcm";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "gmm") return ModelKind::Gmm;
  if (name == "gcm") return ModelKind::Gcm;
  if (name == "gmcm") return ModelKind::Gmcm;
  throw InputError("unknown model kind '" + name + "' (expected gmm, gcm or gmcm)");
}

FittedModel::FittedModel(Variant model, json metadata) : model_(std::move(model)), metadata_(std::move(metadata)) {
  std::visit(
      [](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, GmmModel>) {
          m.params.validate();
          if (m.columns.size() != m.params.d()) throw InputError("GMM model: column count differs from dimension");
        } else if constexpr (std::is_same_v<T, GcmModel>) {
          m.params.validate();
          if (m.params.d() != m.marginals.d()) throw InputError("GCM model: copula and marginal dimensions differ");
        } else {
          m.params.base.validate();
          if (m.params.d() != m.marginals.d()) throw InputError("GMCM model: copula and marginal dimensions differ");
        }
      },
      model_);
}

ModelKind FittedModel::kind() const {
  switch (model_.index()) {
    case 0: return ModelKind::Gmm;
    case 1: return ModelKind::Gcm;
    default: return ModelKind::Gmcm;
  }
}

const std::vector<std::string>& FittedModel::columns() const {
  return std::visit(
      [](const auto& m) -> const std::vector<std::string>& {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, GmmModel>) {
          return m.columns;
        } else {
          return m.marginals.columns();
        }
      },
      model_);
}

std::size_t FittedModel::d() const { return columns().size(); }

std::vector<double> FittedModel::log_pdf(const Matrix& x) const {
  if (static_cast<std::size_t>(x.cols()) != d()) {
    throw InputError("model expects " + std::to_string(d()) + " columns, got " + std::to_string(x.cols()));
  }
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, GmmModel>) {
          const GmmDensity density(m.params);
          for (Eigen::Index i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)] = density.log_pdf(x.row(i).transpose());
        } else if constexpr (std::is_same_v<T, GcmModel>) {
          const GaussianCopula copula(m.params);
          Vector u(x.cols());
          for (Eigen::Index i = 0; i < x.rows(); ++i) {
            double log_f = 0.0;
            for (Eigen::Index j = 0; j < x.cols(); ++j) {
              const KdeMarginal& k = m.marginals.dim(static_cast<std::size_t>(j));
              log_f += k.log_pdf(x(i, j));
              u(j) = clip_unit(k.cdf(x(i, j)));
            }
            out[static_cast<std::size_t>(i)] = log_f + copula.log_density(u);
          }
        } else {
          const GmcmDensity density(m);
          for (Eigen::Index i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)] = density.log_pdf(x.row(i).transpose());
        }
      },
      model_);
  return out;
}

double FittedModel::log_pdf(const Vector& x) const {
  Matrix row(1, x.size());
  row.row(0) = x.transpose();
  return log_pdf(row).front();
}

Dataset FittedModel::sample(std::size_t n, std::uint64_t seed) const {
  Matrix values = std::visit(
      [&](const auto& m) -> Matrix {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, GmmModel>) {
          return sample_gmm(m.params, n, seed);
        } else if constexpr (std::is_same_v<T, GcmModel>) {
          return sample_gcm(m.params, m.marginals, n, seed);
        } else {
          return sample_gmcm(m, n, seed);
        }
      },
      model_);
  return Dataset(columns(), std::move(values));
}

FittedModel FittedModel::restrict_to(std::size_t first, std::size_t second) const {
  if (first == second) throw InputError("bivariate marginal needs two distinct dimensions");
  if (first >= d() || second >= d()) throw InputError("dimension index out of range");
  const std::vector<std::size_t> dims{first, second};
  return std::visit(
      [&](const auto& m) -> FittedModel {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, GmmModel>) {
          return FittedModel(GmmModel{m.params.restrict_to(dims), {m.columns[first], m.columns[second]}});
        } else if constexpr (std::is_same_v<T, GcmModel>) {
          return FittedModel(GcmModel{m.params.restrict_to(dims), m.marginals.restrict_to(dims)});
        } else {
          return FittedModel(GmcmModel{GmcParams{m.params.base.restrict_to(dims)}, m.marginals.restrict_to(dims), m.info});
        }
      },
      model_);
}

namespace {

json base_metadata(const Dataset& train, const ModelRequest& request) {
  return json{{"model_kind", to_string(request.kind)}, {"n_train", train.n()}, {"data_fingerprint", train.fingerprint()}};
}

FittedModel fit_gmm_model(const Dataset& train, const ModelRequest& request) {
  json meta = base_metadata(train, request);
  EmOptions em = request.em;
  em.K = request.K;
  EmResult res = fit_em(train, em);
  meta["K"] = em.K;
  meta["seed"] = em.seed;
  meta["em_iterations"] = res.iterations;
  meta["em_converged"] = res.converged;
  meta["final_mean_loglik"] = res.loglik_trace.empty() ? 0.0 : res.loglik_trace.back();
  return FittedModel(GmmModel{std::move(res.params), train.columns()}, std::move(meta));
}

}  // namespace

FittedModel fit_model(const Dataset& train, const ModelRequest& request, const MarginalModel& marginals) {
  if (request.kind == ModelKind::Gmm) return fit_gmm_model(train, request);
  json meta = base_metadata(train, request);
  if (request.kind == ModelKind::Gcm) {
    GcmParams p = fit_gcm(to_unit(train, marginals));
    return FittedModel(GcmModel{std::move(p), marginals}, std::move(meta));
  }
  FitOptions opts = request.gmcm;
  opts.K = request.K;
  GmcmFit fit = fit_gmcm(to_unit(train, marginals), opts);
  meta["K"] = opts.K;
  meta["seed"] = opts.seed;
  return FittedModel(GmcmModel{std::move(fit.params), marginals, std::move(fit.info)}, std::move(meta));
}

FittedModel fit_model(const Dataset& train, const ModelRequest& request, const KdeOptions& kde) {
  if (request.kind == ModelKind::Gmm) return fit_gmm_model(train, request);
  FittedModel model = fit_model(train, request, fit_marginals(train, kde));
  model.metadata()["kde_max_centers"] = kde.max_centers;
  model.metadata()["kde_seed"] = kde.seed;
  return model;
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw InputError("model file: expected a nonempty matrix");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j.at(static_cast<std::size_t>(r));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw InputError("model file: ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

json fit_info_to_json(const GmcmFitInfo& info) {
  return json{{"epochs", info.epochs},
              {"iterations", info.iterations},
              {"initial_objective", info.initial_objective},
              {"final_objective", info.final_objective},
              {"converged", info.converged},
              {"seed", info.seed},
              {"prior_sigma", info.prior_sigma},
              {"learning_rate", info.learning_rate},
              {"batch_size", info.batch_size},
              {"epoch_objectives", info.epoch_objectives}};
}

GmcmFitInfo fit_info_from_json(const json& j) {
  GmcmFitInfo info;
  if (j.is_null()) return info;
  info.epochs = j.value("epochs", 0);
  info.iterations = j.value("iterations", std::size_t{0});
  info.initial_objective = j.value("initial_objective", 0.0);
  info.final_objective = j.value("final_objective", 0.0);
  info.converged = j.value("converged", false);
  info.seed = j.value("seed", std::uint64_t{0});
  info.prior_sigma = j.value("prior_sigma", 0.1);
  info.learning_rate = j.value("learning_rate", 1e-3);
  info.batch_size = j.value("batch_size", std::size_t{1024});
  info.epoch_objectives = j.value("epoch_objectives", std::vector<double>{});
  return info;
}

}  // namespace

json gmm_to_json(const GmmParams& p) {
  json means = json::array();
  json covs = json::array();
  for (std::size_t k = 0; k < p.K(); ++k) {
    means.push_back(std::vector<double>(p.means[k].data(), p.means[k].data() + p.means[k].size()));
    covs.push_back(matrix_to_json(p.covariances[k]));
  }
  return json{{"K", p.K()}, {"weights", p.weights}, {"means", means}, {"covariances", covs}};
}

GmmParams gmm_from_json(const json& j) {
  GmmParams p;
  p.weights = j.at("weights").get<std::vector<double>>();
  for (const auto& m : j.at("means")) {
    const auto v = m.get<std::vector<double>>();
    p.means.push_back(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  for (const auto& c : j.at("covariances")) p.covariances.push_back(matrix_from_json(c));
  if (j.at("K").get<std::size_t>() != p.K()) throw InputError("model file: K does not match the weights");
  p.validate();
  return p;
}

json marginals_to_json(const MarginalModel& m) {
  json dims = json::array();
  for (const auto& k : m.dims()) {
    dims.push_back(json{{"bandwidth", k.bandwidth()},
                        {"support_lo", k.support_lo()},
                        {"support_hi", k.support_hi()},
                        {"centers", k.centers()}});
  }
  return json{{"columns", m.columns()}, {"kernels", dims}};
}

MarginalModel marginals_from_json(const json& j) {
  std::vector<KdeMarginal> dims;
  for (const auto& k : j.at("kernels")) {
    dims.emplace_back(k.at("centers").get<std::vector<double>>(), k.at("bandwidth").get<double>(),
                      k.at("support_lo").get<double>(), k.at("support_hi").get<double>());
  }
  return MarginalModel(j.at("columns").get<std::vector<std::string>>(), std::move(dims));
}

json model_to_json(const FittedModel& model) {
  json out;
  out["schema_version"] = kModelSchemaVersion;
  out["model_kind"] = to_string(model.kind());
  out["columns"] = model.columns();
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, GmmModel>) {
          out["payload"] = gmm_to_json(m.params);
        } else if constexpr (std::is_same_v<T, GcmModel>) {
          out["payload"] = json{{"correlation", matrix_to_json(m.params.correlation)}};
          out["marginals"] = marginals_to_json(m.marginals);
        } else {
          out["payload"] = json{{"base", gmm_to_json(m.params.base)}, {"fit", fit_info_to_json(m.info)}};
          out["marginals"] = marginals_to_json(m.marginals);
        }
      },
      model.get());
  out["metadata"] = model.metadata();
  return out;
}

FittedModel model_from_json(const json& j) {
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kModelSchemaVersion) {
      throw InputError("unsupported model schema version " + std::to_string(version));
    }
    const ModelKind kind = parse_model_kind(j.at("model_kind").get<std::string>());
    const auto columns = j.at("columns").get<std::vector<std::string>>();
    const json& payload = j.at("payload");
    json metadata = j.value("metadata", json::object());
    switch (kind) {
      case ModelKind::Gmm:
        return FittedModel(GmmModel{gmm_from_json(payload), columns}, std::move(metadata));
      case ModelKind::Gcm: {
        MarginalModel marginals = marginals_from_json(j.at("marginals"));
        if (marginals.columns() != columns) throw InputError("model file: marginal columns differ from model columns");
        return FittedModel(GcmModel{GcmParams{matrix_from_json(payload.at("correlation"))}, std::move(marginals)},
                           std::move(metadata));
      }
      case ModelKind::Gmcm: {
        MarginalModel marginals = marginals_from_json(j.at("marginals"));
        if (marginals.columns() != columns) throw InputError("model file: marginal columns differ from model columns");
        return FittedModel(GmcmModel{GmcParams{gmm_from_json(payload.at("base"))}, std::move(marginals),
                                     fit_info_from_json(payload.value("fit", json()))},
                           std::move(metadata));
      }
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed model file: ") + e.what());
  }
  throw InputError("malformed model file");
}

void save_model(const FittedModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, model_to_json(model).dump(1) + "\n");
}

FittedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open model file '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError("model file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return model_from_json(j);
}

}  // namespace jointscen
