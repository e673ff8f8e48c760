#pragma once

// Standard normal density, distribution and quantile functions.

namespace jointscen::normal {

inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double pdf(double x);
double log_pdf(double x);
double cdf(double x);

/// Inverse of cdf on (0,1). Wichura's AS241 rational approximation,
/// accurate to about 1e-16 relative. Returns -inf/+inf at 0/1.
double quantile(double p);

}  // namespace jointscen::normal
