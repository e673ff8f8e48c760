#include "jointscen/marginals.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "jointscen/error.hpp"
#include "jointscen/normal.hpp"

namespace jointscen {

namespace {

// Terms more than this many bandwidths beyond the nearest center are at most
// exp(-50) of the largest term.
constexpr double kLogWindow = 100.0;
// Phi(-10) ~ 7.6e-24: kernels further away count as exactly 0 or 1 in the CDF.
constexpr double kCdfWindow = 10.0;
constexpr double kSupportPad = 10.0;
constexpr std::size_t kQuantileGrid = 1024;

}  // namespace

KdeMarginal::KdeMarginal(std::vector<double> centers, double bandwidth, double support_lo,
                         double support_hi)
    : centers_(std::move(centers)), bandwidth_(bandwidth), support_lo_(support_lo), support_hi_(support_hi) {
  if (centers_.empty()) throw InputError("KDE needs at least one center");
  if (!(bandwidth_ > 0.0) || !std::isfinite(bandwidth_)) throw InputError("KDE bandwidth must be positive");
  for (double c : centers_) {
    if (!std::isfinite(c)) throw InputError("KDE centers must be finite");
  }
  std::sort(centers_.begin(), centers_.end());
  if (!(support_lo_ < centers_.front()) || !(support_hi_ > centers_.back())) {
    throw InputError("KDE support must strictly bracket the centers");
  }
  log_norm_ = std::log(static_cast<double>(centers_.size()) * bandwidth_) + normal::kLogSqrt2Pi;
}

double KdeMarginal::log_pdf(double x) const {
  const double h = bandwidth_;
  // Nearest center determines the dominant term.
  auto it = std::lower_bound(centers_.begin(), centers_.end(), x);
  double nearest = std::numeric_limits<double>::infinity();
  if (it != centers_.end()) nearest = std::min(nearest, std::abs(*it - x));
  if (it != centers_.begin()) nearest = std::min(nearest, std::abs(*(it - 1) - x));
  const double t_min = nearest / h;
  const double half_width = std::sqrt(t_min * t_min + kLogWindow) * h;

  const auto first = std::lower_bound(centers_.begin(), centers_.end(), x - half_width);
  const auto last = std::upper_bound(first, centers_.end(), x + half_width);
  const double base = 0.5 * t_min * t_min;
  double sum = 0.0;
  for (auto c = first; c != last; ++c) {
    const double t = (x - *c) / h;
    sum += std::exp(base - 0.5 * t * t);
  }
  return std::log(sum) - base - log_norm_;
}

double KdeMarginal::pdf(double x) const { return std::exp(log_pdf(x)); }

double KdeMarginal::cdf(double x) const {
  const double h = bandwidth_;
  const auto first = std::lower_bound(centers_.begin(), centers_.end(), x - kCdfWindow * h);
  const auto last = std::upper_bound(first, centers_.end(), x + kCdfWindow * h);
  double sum = static_cast<double>(first - centers_.begin());
  const double scale = 1.0 / h;
  for (auto c = first; c != last; ++c) sum += normal::cdf((x - *c) * scale);
  return sum / static_cast<double>(centers_.size());
}

const KdeMarginal::CdfGrid& KdeMarginal::grid() const {
  std::call_once(grid_->built, [this] {
    CdfGrid& g = *grid_;
    g.x.resize(kQuantileGrid + 1);
    g.cdf.resize(kQuantileGrid + 1);
    const double step = (support_hi_ - support_lo_) / static_cast<double>(kQuantileGrid);
    for (std::size_t i = 0; i <= kQuantileGrid; ++i) {
      g.x[i] = i == kQuantileGrid ? support_hi_ : support_lo_ + static_cast<double>(i) * step;
      g.cdf[i] = cdf(g.x[i]);
    }
  });
  return *grid_;
}

double KdeMarginal::quantile(double u, const RootConfig& cfg) const {
  if (!(u > 0.0 && u < 1.0)) throw InputError("KDE quantile: probability must lie in (0,1)");
  auto f = [this, u](double x) { return cdf(x) - u; };
  const CdfGrid& g = grid();
  // First grid point with cdf >= u; the support ends have cdf 0 and 1 to
  // rounding, so the root lies in the cell ending there.
  const auto it = std::lower_bound(g.cdf.begin(), g.cdf.end(), u);
  if (it == g.cdf.begin() || it == g.cdf.end()) {
    return find_root(f, support_lo_, support_hi_, cfg);
  }
  const auto hi = static_cast<std::size_t>(it - g.cdf.begin());
  return converged_root(chandrupatla(f, g.x[hi - 1], g.x[hi], g.cdf[hi - 1] - u, g.cdf[hi] - u, cfg));
}

double scott_bandwidth(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 2) throw InputError("KDE fit needs at least 2 samples");
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : samples) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0)) throw InputError("KDE fit: samples have zero variance");
  return sd * std::pow(static_cast<double>(n), -0.2);
}

KdeMarginal fit_kde(std::span<const double> samples, const KdeOptions& opts) {
  if (samples.size() < 2) throw InputError("KDE fit needs at least 2 samples");
  std::vector<double> centers(samples.begin(), samples.end());
  if (opts.max_centers >= 2 && centers.size() > opts.max_centers) {
    std::mt19937_64 rng(opts.seed);
    std::shuffle(centers.begin(), centers.end(), rng);
    centers.resize(opts.max_centers);
  }
  const double h = scott_bandwidth(centers);
  const auto [mn, mx] = std::minmax_element(centers.begin(), centers.end());
  const double lo = *mn - kSupportPad * h;
  const double hi = *mx + kSupportPad * h;
  return KdeMarginal(std::move(centers), h, lo, hi);
}

MarginalModel::MarginalModel(std::vector<std::string> columns, std::vector<KdeMarginal> dims)
    : columns_(std::move(columns)), dims_(std::move(dims)) {
  if (dims_.empty()) throw InputError("marginal model needs at least one dimension");
  if (columns_.size() != dims_.size()) throw InputError("marginal model: names and dimensions differ in length");
}

MarginalModel MarginalModel::restrict_to(const std::vector<std::size_t>& dims) const {
  std::vector<std::string> names;
  std::vector<KdeMarginal> kept;
  for (std::size_t j : dims) {
    names.push_back(columns_.at(j));
    kept.push_back(dims_.at(j));
  }
  return MarginalModel(std::move(names), std::move(kept));
}

MarginalModel fit_marginals(const Dataset& ds, const KdeOptions& opts) {
  std::vector<KdeMarginal> dims;
  dims.reserve(ds.d());
  std::vector<double> column(ds.n());
  for (std::size_t j = 0; j < ds.d(); ++j) {
    for (std::size_t i = 0; i < ds.n(); ++i) {
      column[i] = ds.values()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    KdeOptions dim_opts = opts;
    dim_opts.seed = opts.seed + j;
    dims.push_back(fit_kde(column, dim_opts));
  }
  return MarginalModel(ds.columns(), std::move(dims));
}

}  // namespace jointscen
