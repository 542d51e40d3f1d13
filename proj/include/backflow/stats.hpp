// SPDX-License-Identifier: Apache-2.0
//
// Inference on per-repeat back-flow values: percentile bootstrap, TOST,
// one-sample t tests, Benjamini-Hochberg, correlations, paired t and a
// two-covariate OLS.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace backflow {

class StatsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

double mean(std::span<const double> x);
/// Sample standard deviation (n - 1 denominator).
double stddev(std::span<const double> x);

struct BootstrapSummary {
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n = 0;
  double half_width = 0.0;
};

BootstrapSummary bootstrap_mean_ci(std::span<const double> samples, std::size_t resamples = 2000,
                                   double level = 0.95, std::uint64_t seed = 0);

/// Half-width 1.96 * s / sqrt(n) used by the early-stop rule.
double normal_half_width(std::span<const double> samples);

enum class Verdict {
  practically_null,
  not_null,
  reject,
  fail_to_reject,
};

std::string to_string(Verdict v);

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  Verdict verdict = Verdict::fail_to_reject;
};

/// Two one-sided t tests of mean > -eps and mean < +eps.
TestResult tost_equivalence(std::span<const double> samples, double epsilon = 1e-3,
                            double alpha = 0.05);

enum class Alternative { greater, two_sided };

/// One-sample t test of H0: E[x] <= 0 (greater) or E[x] = 0 (two_sided).
TestResult one_sample_t(std::span<const double> samples, Alternative alt, double alpha = 0.05);

/// Step-up flags and adjusted q-values.
struct BhResult {
  std::vector<bool> significant;
  std::vector<double> q_values;
};

BhResult bh_fdr(std::span<const double> p_values, double q = 0.05);

struct Correlations {
  double pearson_r = 0.0;
  double pearson_p = 1.0;
  double spearman_rho = 0.0;
  double spearman_p = 1.0;
};

Correlations correlations(std::span<const double> x, std::span<const double> y);

/// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(std::span<const double> x);

TestResult paired_t(std::span<const double> x, std::span<const double> y, double alpha = 0.05);

struct Ols2Result {
  double alpha = 0.0;  // intercept
  double beta = 0.0;   // coefficient on the amplification factor
  double gamma = 0.0;  // coefficient on overlap
  std::array<double, 3> std_errors{};
  std::array<double, 3> p_values{};
  double r_squared = 0.0;
  std::size_t n = 0;
};

/// delta = alpha + beta * a_mu + gamma * rho + eps, classical errors.
Ols2Result ols2(std::span<const double> delta, std::span<const double> a_mu,
                std::span<const double> rho);

/// Student-t upper tail P(T > t) with `df` degrees of freedom.
double t_sf(double t, double df);

}  // namespace backflow
