#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "jointscen/dataset.hpp"
#include "jointscen/gcm.hpp"
#include "jointscen/gmcm.hpp"
#include "jointscen/gmm.hpp"
#include "jointscen/marginals.hpp"

namespace jointscen {

inline constexpr int kModelSchemaVersion = 1;

enum class ModelKind { Gmm, Gcm, Gmcm };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct GmmModel {
  GmmParams params;
  std::vector<std::string> columns;
};

/// Any of the three density models behind one evaluate/sample interface.
class FittedModel {
 public:
  using Variant = std::variant<GmmModel, GcmModel, GmcmModel>;

  explicit FittedModel(Variant model, nlohmann::json metadata = nlohmann::json::object());

  ModelKind kind() const;
  std::size_t d() const;
  const std::vector<std::string>& columns() const;
  const Variant& get() const { return model_; }
  const nlohmann::json& metadata() const { return metadata_; }
  nlohmann::json& metadata() { return metadata_; }

  /// Log-density of each row of `x` (n x d).
  std::vector<double> log_pdf(const Matrix& x) const;
  double log_pdf(const Vector& x) const;

  Dataset sample(std::size_t n, std::uint64_t seed) const;

  /// Bivariate marginal over coordinates (first, second).
  FittedModel restrict_to(std::size_t first, std::size_t second) const;

 private:
  Variant model_;
  nlohmann::json metadata_;
};

/// What to fit: the model family plus its options. GCM and GMCM share KDE
/// marginals fitted on the raw training data.
struct ModelRequest {
  ModelKind kind = ModelKind::Gmcm;
  std::size_t K = 4;
  EmOptions em;
  FitOptions gmcm;
};

FittedModel fit_model(const Dataset& train, const ModelRequest& request, const MarginalModel& marginals);
FittedModel fit_model(const Dataset& train, const ModelRequest& request, const KdeOptions& kde = {});

nlohmann::json gmm_to_json(const GmmParams& p);
GmmParams gmm_from_json(const nlohmann::json& j);
nlohmann::json marginals_to_json(const MarginalModel& m);
MarginalModel marginals_from_json(const nlohmann::json& j);

/// Versioned model file: {schema_version, model_kind, columns, payload,
/// marginals (gcm/gmcm), metadata}. Loading validates every invariant.
nlohmann::json model_to_json(const FittedModel& model);
FittedModel model_from_json(const nlohmann::json& j);

void save_model(const FittedModel& model, const std::filesystem::path& path);
FittedModel load_model(const std::filesystem::path& path);

}  // namespace jointscen
