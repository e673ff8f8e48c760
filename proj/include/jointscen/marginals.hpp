#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "jointscen/dataset.hpp"
#include "jointscen/rootfind.hpp"

namespace jointscen {

struct KdeOptions {
  // KDE evaluation is O(centers); larger samples are uniformly subsampled.
  std::size_t max_centers = 50000;
  std::uint64_t seed = 0;
};

/// Univariate Gaussian-kernel density estimate.
///
/// Centers are stored sorted. Kernel sums skip only terms that are below
/// double resolution relative to the retained ones, so pdf/cdf agree with the
/// full O(n) sums to rounding.
class KdeMarginal {
 public:
  KdeMarginal(std::vector<double> centers, double bandwidth, double support_lo, double support_hi);

  const std::vector<double>& centers() const { return centers_; }
  double bandwidth() const { return bandwidth_; }
  double support_lo() const { return support_lo_; }
  double support_hi() const { return support_hi_; }

  double pdf(double x) const;
  double log_pdf(double x) const;
  double cdf(double x) const;
  /// Solves cdf(x) = u with Chandrupatla. The bracket is one cell of a
  /// cached grid of exact CDF values over the support, built on first use.
  double quantile(double u, const RootConfig& cfg = {}) const;

 private:
  std::vector<double> centers_;
  double bandwidth_;
  double support_lo_;
  double support_hi_;
  double log_norm_;  // log(n * h * sqrt(2 pi))

  struct CdfGrid {
    std::once_flag built;
    std::vector<double> x;
    std::vector<double> cdf;
  };
  // Shared between copies; centers never change after construction.
  std::shared_ptr<CdfGrid> grid_ = std::make_shared<CdfGrid>();

  const CdfGrid& grid() const;
};

/// Scott's rule bandwidth h = sd * n^(-1/5) on the retained centers, support
/// [min - 10h, max + 10h].
KdeMarginal fit_kde(std::span<const double> samples, const KdeOptions& opts = {});

double scott_bandwidth(std::span<const double> samples);

/// One KdeMarginal per dataset column.
class MarginalModel {
 public:
  MarginalModel(std::vector<std::string> columns, std::vector<KdeMarginal> dims);

  std::size_t d() const { return dims_.size(); }
  const std::vector<std::string>& columns() const { return columns_; }
  const KdeMarginal& dim(std::size_t j) const { return dims_.at(j); }
  const std::vector<KdeMarginal>& dims() const { return dims_; }

  MarginalModel restrict_to(const std::vector<std::size_t>& dims) const;

 private:
  std::vector<std::string> columns_;
  std::vector<KdeMarginal> dims_;
};

MarginalModel fit_marginals(const Dataset& ds, const KdeOptions& opts = {});

}  // namespace jointscen
