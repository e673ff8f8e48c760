#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <utility>

#include "jointscen/error.hpp"

namespace jointscen {

struct RootConfig {
  double x_tol = 1e-12;
  double f_tol = 1e-12;
  int max_iter = 100;

  void validate() const {
    if (!(x_tol > 0.0) || !(f_tol > 0.0) || max_iter < 1) {
      throw InputError("RootConfig requires positive tolerances and max_iter >= 1");
    }
  }
};

struct RootResult {
  double x = 0.0;
  double fx = 0.0;
  int iterations = 0;
  bool converged = false;
  // Final bracket; always inside the initial [lo, hi].
  double lo = 0.0;
  double hi = 0.0;
};

class RootFindError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Chandrupatla's bracketing root finder: inverse quadratic interpolation
/// whenever the three most recent points admit it, bisection otherwise.
///
/// Requires f(lo) and f(hi) of opposite sign (or one of them zero); throws
/// RootFindError otherwise. Every evaluation point lies inside [lo, hi].
/// Stops when |f(x)| <= f_tol or the bracket is narrower than x_tol (plus a
/// few ulps of |x|). If max_iter is reached the midpoint of the final bracket
/// is returned with converged == false.
///
/// f_lo and f_hi are f(lo) and f(hi), already evaluated by the caller.
template <class F>
RootResult chandrupatla(F&& f, double lo, double hi, double f_lo, double f_hi, const RootConfig& cfg = {}) {
  if (!(lo <= hi)) throw RootFindError("chandrupatla: bracket must satisfy lo <= hi");
  constexpr double eps = std::numeric_limits<double>::epsilon();

  double a = lo;
  double b = hi;
  double fa = f_lo;
  double fb = f_hi;
  if (std::isnan(fa) || std::isnan(fb)) throw RootFindError("chandrupatla: NaN at bracket endpoint");

  RootResult res;
  res.lo = lo;
  res.hi = hi;
  if (fa == 0.0 || fb == 0.0) {
    res.x = fa == 0.0 ? a : b;
    res.fx = 0.0;
    res.converged = true;
    res.lo = res.hi = res.x;
    return res;
  }
  if ((fa > 0.0) == (fb > 0.0)) {
    std::ostringstream msg;
    msg << "chandrupatla: no sign change on [" << lo << ", " << hi << "] (f = " << fa << ", " << fb << ")";
    throw RootFindError(msg.str());
  }

  double c = a;
  double fc = fa;
  double t = 0.5;
  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    const double xt = a + t * (b - a);
    const double ft = f(xt);
    if (std::isnan(ft)) throw RootFindError("chandrupatla: function returned NaN");
    if ((ft > 0.0) == (fa > 0.0)) {
      c = a;
      fc = fa;
    } else {
      c = b;
      fc = fb;
      b = a;
      fb = fa;
    }
    a = xt;
    fa = ft;

    const bool a_better = std::abs(fa) < std::abs(fb);
    const double xm = a_better ? a : b;
    const double fm = a_better ? fa : fb;
    res.x = xm;
    res.fx = fm;
    res.iterations = iter;
    res.lo = std::min(a, b);
    res.hi = std::max(a, b);

    const double tol = 2.0 * eps * std::abs(xm) + 0.5 * cfg.x_tol;
    const double width = std::abs(b - a);
    const double tlim = width > 0.0 ? tol / width : 1.0;
    if (fm == 0.0 || std::abs(fm) <= cfg.f_tol || tlim > 0.5) {
      res.converged = true;
      return res;
    }

    const double xi = (a - b) / (c - b);
    const double phi = (fa - fb) / (fc - fb);
    if (phi * phi < xi && (1.0 - phi) * (1.0 - phi) < 1.0 - xi) {
      t = fa / (fb - fa) * fc / (fb - fc) + (c - a) / (b - a) * fa / (fc - fa) * fb / (fc - fb);
    } else {
      t = 0.5;
    }
    t = std::clamp(t, tlim, 1.0 - tlim);
  }
  // Best bracket midpoint; fx still reports the smallest residual seen.
  res.x = 0.5 * (res.lo + res.hi);
  res.converged = false;
  return res;
}

/// Evaluates the bracket endpoints, then as above.
template <class F>
RootResult chandrupatla(F&& f, double lo, double hi, const RootConfig& cfg = {}) {
  if (!(lo <= hi)) throw RootFindError("chandrupatla: bracket must satisfy lo <= hi");
  const double f_lo = f(lo);
  const double f_hi = f(hi);
  return chandrupatla(std::forward<F>(f), lo, hi, f_lo, f_hi, cfg);
}

/// Unwraps a result, treating non-convergence as an error.
inline double converged_root(const RootResult& r) {
  if (!r.converged) {
    std::ostringstream msg;
    msg << "chandrupatla: no convergence after " << r.iterations << " iterations, bracket ["
        << r.lo << ", " << r.hi << "], |f| = " << std::abs(r.fx);
    throw RootFindError(msg.str());
  }
  return r.x;
}

/// chandrupatla() that throws RootFindError on non-convergence.
template <class F>
double find_root(F&& f, double lo, double hi, const RootConfig& cfg = {}) {
  return converged_root(chandrupatla(std::forward<F>(f), lo, hi, cfg));
}

}  // namespace jointscen
