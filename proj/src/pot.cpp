#include "trifuse/pot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "trifuse/errors.hpp"

namespace trifuse {

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw UsageError("percentile: empty sample");
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double gpd_log_likelihood(const std::vector<double>& y, double gamma, double sigma) {
  const auto n = static_cast<double>(y.size());
  if (sigma <= 0.0) return -std::numeric_limits<double>::infinity();
  if (std::abs(gamma) < 1e-12) {
    double sum = 0.0;
    for (double v : y) sum += v;
    return -n * std::log(sigma) - sum / sigma;
  }
  double acc = 0.0;
  for (double v : y) {
    const double z = 1.0 + gamma * v / sigma;
    if (z <= 0.0) return -std::numeric_limits<double>::infinity();
    acc += std::log(z);
  }
  return -n * std::log(sigma) - (1.0 + 1.0 / gamma) * acc;
}

GpdFit fit_gpd_moments(const std::vector<double>& y) {
  const auto n = static_cast<double>(y.size());
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= n;
  if (var <= 0.0) return {0.0, std::max(mean, 1e-12)};
  GpdFit fit;
  fit.gamma = 0.5 * (1.0 - mean * mean / var);
  fit.sigma = mean * (1.0 - fit.gamma);
  return fit;
}

namespace {

// u(x) = mean(1 / (1 + x y)), v(x) = 1 + mean(log(1 + x y)); the MLE
// stationary points satisfy u(x) v(x) = 1.
struct GrimshawFuncs {
  const std::vector<double>& y;

  double u(double x) const {
    double s = 0.0;
    for (double v : y) s += 1.0 / (1.0 + x * v);
    return s / static_cast<double>(y.size());
  }
  double v(double x) const {
    double s = 0.0;
    for (double val : y) s += std::log1p(x * val);
    return 1.0 + s / static_cast<double>(y.size());
  }
  double w(double x) const { return u(x) * v(x) - 1.0; }
};

}  // namespace

GpdFit fit_gpd(const std::vector<double>& y) {
  if (y.size() < 8) return fit_gpd_moments(y);

  double y_min = y.front(), y_max = y.front(), y_mean = 0.0;
  for (double v : y) {
    y_min = std::min(y_min, v);
    y_max = std::max(y_max, v);
    y_mean += v;
  }
  y_mean /= static_cast<double>(y.size());
  if (y_max <= 0.0 || y_min < 0.0) return fit_gpd_moments(y);

  GrimshawFuncs f{y};
  const double eps = 1e-8 / y_max;
  const double lo = -1.0 / y_max + eps;
  const double hi = (y_min > 0.0) ? 2.0 * (y_mean - y_min) / (y_min * y_min) : 2.0 * y_mean;

  // exponential limit is always a candidate
  GpdFit best{0.0, y_mean};
  double best_ll = gpd_log_likelihood(y, 0.0, y_mean);

  auto consider_root = [&](double x) {
    if (std::abs(x) < 1e-14) return;
    const double gamma = f.v(x) - 1.0;
    const double sigma = gamma / x;
    const double ll = gpd_log_likelihood(y, gamma, sigma);
    if (ll > best_ll) {
      best_ll = ll;
      best = {gamma, sigma};
    }
  };

  // sign-change scan plus bisection on each side of zero
  auto scan = [&](double a, double b, int cells) {
    double prev_x = a, prev_w = f.w(a);
    for (int i = 1; i <= cells; ++i) {
      const double x = a + (b - a) * static_cast<double>(i) / cells;
      const double wx = f.w(x);
      if (std::isfinite(prev_w) && std::isfinite(wx) && prev_w * wx < 0.0) {
        double xa = prev_x, xb = x, wa = prev_w;
        for (int it = 0; it < 80; ++it) {
          const double mid = 0.5 * (xa + xb);
          const double wm = f.w(mid);
          if (wa * wm <= 0.0) {
            xb = mid;
          } else {
            xa = mid;
            wa = wm;
          }
        }
        consider_root(0.5 * (xa + xb));
      }
      prev_x = x;
      prev_w = wx;
    }
  };
  if (lo < -eps) scan(lo, -eps, 400);
  if (hi > eps) scan(eps, hi, 400);
  return best;
}

double pot_quantile(double t0, const GpdFit& fit, double q, std::size_t n_total,
                    std::size_t n_exceed) {
  if (q <= 0.0 || q >= 1.0) throw UsageError("pot_quantile: q must lie in (0, 1)");
  if (n_exceed == 0) throw UsageError("pot_quantile: no exceedances");
  const double ratio =
      q * static_cast<double>(n_total) / static_cast<double>(n_exceed);
  if (std::abs(fit.gamma) < 1e-9) return t0 - fit.sigma * std::log(ratio);
  // expm1 keeps the gamma -> 0 limit continuous
  return t0 + (fit.sigma / fit.gamma) * std::expm1(-fit.gamma * std::log(ratio));
}

PotResult pot_threshold(const std::vector<double>& scores, double q, double t0_percentile) {
  if (scores.empty()) throw UsageError("pot_threshold: no calibration scores");
  PotResult res;
  res.t0 = percentile(scores, t0_percentile);
  res.n_total = scores.size();
  std::vector<double> excesses;
  for (double s : scores) {
    if (s > res.t0) excesses.push_back(s - res.t0);
  }
  res.n_exceed = excesses.size();
  if (res.n_exceed < 2) {
    res.threshold = *std::max_element(scores.begin(), scores.end());
    return res;
  }
  res.fit = fit_gpd(excesses);
  res.threshold = pot_quantile(res.t0, res.fit, q, res.n_total, res.n_exceed);
  return res;
}

}  // namespace trifuse
