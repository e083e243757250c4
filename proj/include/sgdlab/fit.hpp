#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace sgdlab {

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  bool defined = false;
};

// Ordinary least squares y ~ intercept + slope * x.  R^2 = 1 - SSres/SStot;
// a constant response (SStot = 0) yields r2 = 0 unless the fit is exact.
inline LinearFit least_squares(const std::vector<double>& x,
                               const std::vector<double>& y) {
  LinearFit fit;
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) return fit;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0) return fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double r = y[i] - (fit.intercept + fit.slope * x[i]);
    ss_res += r * r;
    ss_tot += (y[i] - my) * (y[i] - my);
  }
  fit.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : (ss_res == 0 ? 1.0 : 0.0);
  fit.defined = true;
  return fit;
}

}  // namespace sgdlab
