#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "jointscen/dataset.hpp"
#include "jointscen/gmm.hpp"
#include "jointscen/marginals.hpp"

namespace testing {

using jointscen::Matrix;
using jointscen::Vector;

// Standard normal CDF in extended precision.
inline long double phi_cdf(long double x) { return 0.5L * std::erfc(-x / std::sqrt(2.0L)); }

// Inverse of phi_cdf by 200 bisection steps; independent of the library's AS241.
inline double phi_quantile(double p) {
  long double lo = -40.0L;
  long double hi = 40.0L;
  for (int i = 0; i < 200; ++i) {
    const long double mid = 0.5L * (lo + hi);
    (phi_cdf(mid) < p ? lo : hi) = mid;
  }
  return static_cast<double>(0.5L * (lo + hi));
}

// Mixture of univariate normals: weights, means, sds.
struct Mix1d {
  std::vector<double> w, m, s;
  long double cdf(long double z) const {
    long double t = 0.0L;
    for (std::size_t k = 0; k < w.size(); ++k) t += w[k] * phi_cdf((z - m[k]) / s[k]);
    return t;
  }
  double pdf(double z) const {
    double t = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double r = (z - m[k]) / s[k];
      t += w[k] * std::exp(-0.5 * r * r) / (s[k] * std::sqrt(2.0 * M_PI));
    }
    return t;
  }
  double quantile(double u) const {
    long double lo = -1e3L;
    long double hi = 1e3L;
    for (int i = 0; i < 300; ++i) {
      const long double mid = 0.5L * (lo + hi);
      (cdf(mid) < u ? lo : hi) = mid;
    }
    return static_cast<double>(0.5L * (lo + hi));
  }
};

inline Mix1d mix_dim(const jointscen::GmmParams& p, std::size_t j) {
  Mix1d m;
  for (std::size_t k = 0; k < p.K(); ++k) {
    m.w.push_back(p.weights[k]);
    m.m.push_back(p.means[k](static_cast<Eigen::Index>(j)));
    m.s.push_back(std::sqrt(p.covariances[k](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j))));
  }
  return m;
}

// Multivariate normal mixture density through an explicit inverse and determinant.
inline double naive_gmm_pdf(const jointscen::GmmParams& p, const Vector& x) {
  const double d = static_cast<double>(x.size());
  double total = 0.0;
  for (std::size_t k = 0; k < p.K(); ++k) {
    const Eigen::MatrixXd inv = p.covariances[k].inverse();
    const Vector r = x - p.means[k];
    const double q = r.dot(inv * r);
    total += p.weights[k] * std::exp(-0.5 * q) /
             std::sqrt(std::pow(2.0 * M_PI, d) * p.covariances[k].determinant());
  }
  return total;
}

inline Eigen::MatrixXd random_spd(std::size_t d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n01;
  Eigen::MatrixXd a(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) a(i, j) = n01(rng);
  Eigen::MatrixXd s = scale * (a * a.transpose() / static_cast<double>(d) + 0.3 * Eigen::MatrixXd::Identity(d, d));
  return 0.5 * (s + s.transpose());
}

inline jointscen::GmmParams random_gmm(std::size_t K, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> unif(0.5, 1.5);
  jointscen::GmmParams p;
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    p.weights.push_back(unif(rng));
    total += p.weights.back();
    Vector m(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(j)) = 1.5 * n01(rng);
    p.means.push_back(m);
    p.covariances.push_back(random_spd(d, rng, 0.6));
  }
  for (double& w : p.weights) w /= total;
  return p;
}

inline jointscen::GmmParams standard_normal_gmm(std::size_t d) {
  jointscen::GmmParams p;
  p.weights = {1.0};
  p.means = {Vector::Zero(static_cast<Eigen::Index>(d))};
  p.covariances = {Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))};
  return p;
}

inline jointscen::GmmParams bivariate_correlated(double rho) {
  jointscen::GmmParams p = standard_normal_gmm(2);
  p.covariances[0](0, 1) = p.covariances[0](1, 0) = rho;
  return p;
}

// Uniform(0,1) matrix kept away from 0 and 1 by the clipping margin.
inline Matrix random_unit(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(1e-6, 1.0 - 1e-6);
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = u(rng);
  return m;
}

// Two-sided Kolmogorov-Smirnov statistic of a sample against a CDF.
template <class Cdf>
double ks_statistic(std::vector<double> x, Cdf&& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    worst = std::max({worst, std::abs(f - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - f)});
  }
  return worst;
}

inline std::vector<double> column(const Matrix& m, Eigen::Index j) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m(i, j);
  return out;
}

// Exact optimal transport between equal-size uniform point sets: by
// Birkhoff-von Neumann an optimal plan is a permutation.
inline double exact_ot(const Matrix& a, const Matrix& b) {
  std::vector<int> perm(static_cast<std::size_t>(a.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      c += (a.row(static_cast<Eigen::Index>(i)) - b.row(perm[i])).squaredNorm();
    }
    best = std::min(best, c / static_cast<double>(perm.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("jointscen_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
