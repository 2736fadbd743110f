#pragma once

namespace mqf {

// Standard normal CDF, computed from erfc.
double normal_cdf(double x);

// Inverse standard normal CDF (Wichura's AS 241 / PPND16). Absolute error
// well below 1e-9 across (1e-300, 1 - 1e-16). Throws for p outside (0,1).
double normal_quantile(double p);

}  // namespace mqf
