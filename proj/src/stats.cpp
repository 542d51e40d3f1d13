// SPDX-License-Identifier: Apache-2.0

#include "backflow/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "backflow/rng.hpp"

namespace backflow {

namespace {

void require_finite(std::span<const double> x, const char* what) {
  for (double v : x) {
    if (!std::isfinite(v)) throw StatsError(std::string(what) + ": non-finite sample");
  }
}

double t_cdf(double t, double df) {
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  return boost::math::cdf(boost::math::students_t(df), t);
}

double two_sided_p(double t, double df) {
  if (std::isinf(t)) return 0.0;
  return std::min(1.0, 2.0 * t_sf(std::abs(t), df));
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw StatsError("correlations: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double correlation_p(double r, std::size_t n) {
  if (std::abs(r) >= 1.0) return 0.0;
  const double df = static_cast<double>(n) - 2.0;
  const double t = r * std::sqrt(df / (1.0 - r * r));
  return two_sided_p(t, df);
}

}  // namespace

double t_sf(double t, double df) {
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::students_t(df), t));
}

double mean(std::span<const double> x) {
  if (x.empty()) throw StatsError("mean of empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double stddev(std::span<const double> x) {
  if (x.size() < 2) throw StatsError("stddev needs at least two samples");
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

BootstrapSummary bootstrap_mean_ci(std::span<const double> samples, std::size_t resamples,
                                   double level, std::uint64_t seed) {
  if (samples.size() < 2) throw StatsError("bootstrap needs n >= 2");
  if (resamples == 0) throw StatsError("bootstrap needs at least one resample");
  if (!(level > 0.0 && level < 1.0)) throw StatsError("bootstrap level must lie in (0, 1)");
  require_finite(samples, "bootstrap");
  const std::size_t n = samples.size();
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> means(resamples);
  for (auto& m : means) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += samples[pick(rng)];
    m = acc / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  // Order statistics, so every endpoint is an attainable resampled mean.
  const double tail = (1.0 - level) / 2.0;
  const auto b = static_cast<double>(resamples);
  const auto lo = static_cast<std::size_t>(std::floor(tail * b));
  const auto hi = std::min(resamples - 1,
                           static_cast<std::size_t>(std::ceil((1.0 - tail) * b)) - 1);
  BootstrapSummary s;
  s.mean = mean(samples);
  s.ci_low = means[lo];
  s.ci_high = means[hi];
  s.n = n;
  s.half_width = (s.ci_high - s.ci_low) / 2.0;
  return s;
}

double normal_half_width(std::span<const double> samples) {
  return 1.96 * stddev(samples) / std::sqrt(static_cast<double>(samples.size()));
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::practically_null: return "practically_null";
    case Verdict::not_null: return "not_null";
    case Verdict::reject: return "reject";
    case Verdict::fail_to_reject: return "fail_to_reject";
  }
  return "fail_to_reject";
}

TestResult tost_equivalence(std::span<const double> samples, double epsilon, double alpha) {
  if (samples.size() < 3) throw StatsError("TOST needs n >= 3");
  if (!(epsilon > 0.0)) throw StatsError("TOST margin must be positive");
  require_finite(samples, "TOST");
  const double m = mean(samples);
  const double s = stddev(samples);
  const auto n = static_cast<double>(samples.size());
  if (s == 0.0) {
    const bool inside = std::abs(m) < epsilon;
    return {inside ? -std::numeric_limits<double>::infinity()
                   : std::numeric_limits<double>::infinity(),
            inside ? 0.0 : 1.0, inside ? Verdict::practically_null : Verdict::not_null};
  }
  const double se = s / std::sqrt(n);
  const double df = n - 1.0;
  const double t_lower = (m + epsilon) / se;  // H0: mean <= -eps
  const double t_upper = (m - epsilon) / se;  // H0: mean >= +eps
  const double p_lower = t_sf(t_lower, df);
  const double p_upper = t_cdf(t_upper, df);
  TestResult r;
  r.p_value = std::max(p_lower, p_upper);
  r.statistic = p_lower >= p_upper ? t_lower : t_upper;
  r.verdict = r.p_value < alpha ? Verdict::practically_null : Verdict::not_null;
  return r;
}

TestResult one_sample_t(std::span<const double> samples, Alternative alt, double alpha) {
  if (samples.size() < 2) throw StatsError("t test needs n >= 2");
  require_finite(samples, "t test");
  const double m = mean(samples);
  const double s = stddev(samples);
  const auto n = static_cast<double>(samples.size());
  TestResult r;
  if (s == 0.0) {
    r.statistic = m == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), m);
    if (alt == Alternative::greater) {
      r.p_value = m > 0.0 ? 0.0 : (m == 0.0 ? 0.5 : 1.0);
    } else {
      r.p_value = m == 0.0 ? 1.0 : 0.0;
    }
  } else {
    r.statistic = m / (s / std::sqrt(n));
    r.p_value = alt == Alternative::greater ? t_sf(r.statistic, n - 1.0)
                                            : two_sided_p(r.statistic, n - 1.0);
  }
  r.verdict = r.p_value < alpha ? Verdict::reject : Verdict::fail_to_reject;
  return r;
}

BhResult bh_fdr(std::span<const double> p_values, double q) {
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) throw StatsError("bh_fdr: p-value outside [0, 1]");
  }
  if (!(q >= 0.0 && q <= 1.0)) throw StatsError("bh_fdr: q outside [0, 1]");
  const std::size_t m = p_values.size();
  BhResult r{std::vector<bool>(m, false), std::vector<double>(m, 1.0)};
  if (m == 0) return r;
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  const auto md = static_cast<double>(m);
  std::size_t cutoff = 0;  // largest rank k with p_(k) <= k q / m
  for (std::size_t k = 1; k <= m; ++k) {
    if (p_values[order[k - 1]] <= static_cast<double>(k) * q / md) cutoff = k;
  }
  for (std::size_t k = 1; k <= cutoff; ++k) r.significant[order[k - 1]] = true;
  double running = 1.0;
  for (std::size_t k = m; k >= 1; --k) {
    running = std::min(running, p_values[order[k - 1]] * md / static_cast<double>(k));
    r.q_values[order[k - 1]] = running;
  }
  return r;
}

std::vector<double> average_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

Correlations correlations(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw StatsError("correlations: length mismatch");
  if (x.size() < 4) throw StatsError("correlations need n >= 4");
  require_finite(x, "correlations");
  require_finite(y, "correlations");
  Correlations c;
  c.pearson_r = pearson(x, y);
  c.pearson_p = correlation_p(c.pearson_r, x.size());
  const auto rx = average_ranks(x), ry = average_ranks(y);
  c.spearman_rho = pearson(rx, ry);
  c.spearman_p = correlation_p(c.spearman_rho, x.size());
  return c;
}

TestResult paired_t(std::span<const double> x, std::span<const double> y, double alpha) {
  if (x.size() != y.size()) throw StatsError("paired_t: length mismatch");
  if (x.size() < 3) throw StatsError("paired_t needs n >= 3");
  std::vector<double> d(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] - y[i];
  return one_sample_t(d, Alternative::two_sided, alpha);
}

Ols2Result ols2(std::span<const double> delta, std::span<const double> a_mu,
                std::span<const double> rho) {
  const std::size_t n = delta.size();
  if (a_mu.size() != n || rho.size() != n) throw StatsError("ols2: length mismatch");
  if (n <= 3) throw StatsError("ols2 needs n > 3");
  require_finite(delta, "ols2");
  require_finite(a_mu, "ols2");
  require_finite(rho, "ols2");
  const auto rows = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd x(rows, 3);
  Eigen::VectorXd y(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = a_mu[static_cast<std::size_t>(i)];
    x(i, 2) = rho[static_cast<std::size_t>(i)];
    y(i) = delta[static_cast<std::size_t>(i)];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < 3) {
    throw StatsError("ols2: design matrix is rank deficient (rank " + std::to_string(qr.rank()) +
                     "); the amplification factor or overlap is constant or collinear");
  }
  const Eigen::VectorXd coef = qr.solve(y);
  const Eigen::VectorXd resid = y - x * coef;
  const double rss = resid.squaredNorm();
  const double tss = (y.array() - y.mean()).square().sum();
  const double df = static_cast<double>(n) - 3.0;
  const double sigma2 = rss / df;
  const Eigen::MatrixXd cov = sigma2 * (x.transpose() * x).inverse();

  Ols2Result r;
  r.alpha = coef(0);
  r.beta = coef(1);
  r.gamma = coef(2);
  r.n = n;
  r.r_squared = tss > 0.0 ? 1.0 - rss / tss : 1.0;
  for (int j = 0; j < 3; ++j) {
    r.std_errors[static_cast<std::size_t>(j)] = std::sqrt(std::max(0.0, cov(j, j)));
    const double se = r.std_errors[static_cast<std::size_t>(j)];
    if (se == 0.0) {
      r.p_values[static_cast<std::size_t>(j)] = coef(j) == 0.0 ? 1.0 : 0.0;
    } else {
      r.p_values[static_cast<std::size_t>(j)] = two_sided_p(coef(j) / se, df);
    }
  }
  return r;
}

}  // namespace backflow
