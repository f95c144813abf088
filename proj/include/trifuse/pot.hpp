#pragma once

#include <vector>

namespace trifuse {

// Linear-interpolation percentile over a copy of the data, p in [0, 100].
double percentile(std::vector<double> values, double p);

struct GpdFit {
  double gamma = 0.0;  // shape
  double sigma = 0.0;  // scale
};

// Generalized Pareto fit to exceedances via Grimshaw's reduction of the MLE
// to a scalar root search; candidates are compared by log-likelihood against
// the exponential (gamma -> 0) limit. Falls back to the method of moments for
// tiny samples or when no root qualifies.
GpdFit fit_gpd(const std::vector<double>& excesses);
GpdFit fit_gpd_moments(const std::vector<double>& excesses);

double gpd_log_likelihood(const std::vector<double>& excesses, double gamma, double sigma);

// Peaks-over-threshold quantile: z_q = t0 + (sigma/gamma) * ((q n/n_t)^-gamma - 1)
// with the exponential limit for gamma -> 0.
double pot_quantile(double t0, const GpdFit& fit, double q, std::size_t n_total,
                    std::size_t n_exceed);

struct PotResult {
  double t0 = 0.0;
  GpdFit fit;
  std::size_t n_total = 0;
  std::size_t n_exceed = 0;
  double threshold = 0.0;
};

// Full procedure: t0 at `t0_percentile` of the scores, GPD over the
// exceedances, quantile at risk q. With fewer than 2 exceedances the
// threshold degrades to the maximum score.
PotResult pot_threshold(const std::vector<double>& scores, double q,
                        double t0_percentile = 98.0);

}  // namespace trifuse
