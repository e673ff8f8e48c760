#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace jointscen {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Probabilities are kept inside [kClipEpsilon, 1 - kClipEpsilon]; copula and
/// quantile formulas are singular at 0 and 1.
inline constexpr double kClipEpsilon = 1e-9;

double clip_unit(double u);

/// Tabular scenario parameters: n rows (samples) by d named columns.
/// All entries are finite and column names are unique and nonempty.
class Dataset {
 public:
  Dataset(std::vector<std::string> columns, Matrix values);

  std::size_t n() const { return static_cast<std::size_t>(values_.rows()); }
  std::size_t d() const { return static_cast<std::size_t>(values_.cols()); }
  const std::vector<std::string>& columns() const { return columns_; }
  const Matrix& values() const { return values_; }
  Vector row(std::size_t i) const { return values_.row(static_cast<Eigen::Index>(i)).transpose(); }

  Dataset select_rows(const std::vector<std::size_t>& rows) const;

  /// 64-bit FNV-1a over column names and raw values, hex encoded.
  std::string fingerprint() const;

 private:
  std::vector<std::string> columns_;
  Matrix values_;
};

/// Probability-integral-transformed data. Every entry lies in
/// [kClipEpsilon, 1 - kClipEpsilon].
class UnitDataset {
 public:
  explicit UnitDataset(Matrix values);

  std::size_t n() const { return static_cast<std::size_t>(values_.rows()); }
  std::size_t d() const { return static_cast<std::size_t>(values_.cols()); }
  const Matrix& values() const { return values_; }

 private:
  Matrix values_;
};

Dataset load_csv(const std::filesystem::path& path);
void save_csv(const Dataset& ds, const std::filesystem::path& path);

Dataset parse_csv(const std::string& text, const std::string& source = "<memory>");
std::string format_csv(const Dataset& ds);

/// Seeded shuffle followed by a cut; returns (train, holdout).
std::pair<Dataset, Dataset> split(const Dataset& ds, double holdout_fraction, std::uint64_t seed);

class MarginalModel;

/// u_ij = F_j(x_ij), clipped.
UnitDataset to_unit(const Dataset& ds, const MarginalModel& marginals);

/// Writes `contents` to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace jointscen
