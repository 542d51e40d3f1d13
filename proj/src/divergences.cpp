// SPDX-License-Identifier: Apache-2.0

#include "backflow/divergences.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace backflow {

namespace {

constexpr double kNormTolerance = 1e-6;

// Returns the scale that renormalizes `p`; rejects rows that are not
// probability vectors up to the tolerance.
double normalizer(std::span<const double> p, const char* which) {
  double sum = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < -kNormTolerance) {
      throw DivergenceError(std::string("div_row: ") + which + " has a negative or non-finite entry");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) >= kNormTolerance) {
    throw DivergenceError(std::string("div_row: ") + which + " sums to " + std::to_string(sum));
  }
  return sum == 1.0 ? 1.0 : 1.0 / sum;
}

double clean(double v, double scale) { return v <= 0.0 ? 0.0 : v * scale; }

// p * log2(p / m) with 0 log 0 = 0.
double kl_term(double p, double m) { return p > 0.0 ? p * std::log2(p / m) : 0.0; }

}  // namespace

std::string to_string(DivergenceKind kind) {
  switch (kind) {
    case DivergenceKind::tv: return "tv";
    case DivergenceKind::js: return "js";
    case DivergenceKind::hellinger: return "hellinger";
  }
  return "tv";
}

DivergenceKind parse_divergence(const std::string& s) {
  if (s == "tv" || s == "TV") return DivergenceKind::tv;
  if (s == "js" || s == "JS") return DivergenceKind::js;
  if (s == "hellinger" || s == "Hellinger") return DivergenceKind::hellinger;
  throw std::invalid_argument("unknown divergence '" + s + "'");
}

double div_row(DivergenceKind kind, std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw DivergenceError("div_row: length mismatch " + std::to_string(p.size()) + " vs " +
                          std::to_string(q.size()));
  }
  const double sp = normalizer(p, "p");
  const double sq = normalizer(q, "q");
  double acc = 0.0;
  switch (kind) {
    case DivergenceKind::tv:
      for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(clean(p[i], sp) - clean(q[i], sq));
      return std::min(1.0, 0.5 * acc);
    case DivergenceKind::js:
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double a = clean(p[i], sp), b = clean(q[i], sq);
        const double m = 0.5 * (a + b);
        acc += kl_term(a, m) + kl_term(b, m);
      }
      return std::clamp(0.5 * acc, 0.0, 1.0);
    case DivergenceKind::hellinger:
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double e = std::sqrt(clean(p[i], sp)) - std::sqrt(clean(q[i], sq));
        acc += e * e;
      }
      return 0.5 * std::sqrt(acc);
  }
  return 0.0;
}

double div_avg(DivergenceKind kind, const ProbePredictions& p, const ProbePredictions& q) {
  if (p.probe_id != q.probe_id) {
    throw DivergenceError("div_avg: probe mismatch ('" + p.probe_id + "' vs '" + q.probe_id + "')");
  }
  if (p.rows() != q.rows() || p.cols() != q.cols()) {
    throw DivergenceError("div_avg: prediction shapes differ");
  }
  if (p.rows() == 0) throw DivergenceError("div_avg: empty probe");
  const auto c = p.cols();
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.probs.rows(); ++i) {
    total += div_row(kind, {p.probs.row(i).data(), c}, {q.probs.row(i).data(), c});
  }
  return total / static_cast<double>(p.rows());
}

}  // namespace backflow
