// SPDX-License-Identifier: Apache-2.0

#include "backflow/comb_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <span>

namespace backflow::comb {

namespace {

using Index = Eigen::Index;

constexpr double kStochasticTolerance = 1e-12;

Index idx(std::size_t i) { return static_cast<Index>(i); }

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Vector random_law(std::size_t n, Rng& rng) {
  return random_stochastic(n, 1, rng).col(0);
}

std::vector<std::pair<std::string, std::string>> all_pairs(const std::vector<std::string>& labels) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = i + 1; j < labels.size(); ++j) out.emplace_back(labels[i], labels[j]);
  }
  return out;
}

std::vector<std::string> add_random_instruments(Comb& comb, std::size_t count, Rng& rng) {
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < count; ++i) {
    labels.push_back("I" + std::to_string(i));
    comb.instruments.emplace(labels.back(),
                             Kernel(random_stochastic(comb.latent.size, comb.latent.size, rng),
                                    comb.latent, comb.latent));
  }
  return labels;
}

double divergence(DivergenceKind kind, const Vector& p, const Vector& q) {
  return div_row(kind, {p.data(), static_cast<std::size_t>(p.size())},
                 {q.data(), static_cast<std::size_t>(q.size())});
}

}  // namespace

Matrix random_stochastic(std::size_t rows, std::size_t cols, Rng& rng) {
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix m(idx(rows), idx(cols));
  for (Index c = 0; c < m.cols(); ++c) {
    for (Index r = 0; r < m.rows(); ++r) {
      // Some exact zeros exercise the 0 log 0 conventions.
      m(r, c) = unit(rng) < 0.2 ? 0.0 : expo(rng);
    }
    if (m.col(c).sum() == 0.0) m(idx(pick(rng, 0, rows - 1)), c) = 1.0;
    m.col(c) /= m.col(c).sum();
  }
  return m;
}

Kernel::Kernel(Matrix matrix, FiniteSpace from, FiniteSpace to)
    : matrix_(std::move(matrix)), from_(std::move(from)), to_(std::move(to)) {
  if (static_cast<std::size_t>(matrix_.cols()) != from_.size ||
      static_cast<std::size_t>(matrix_.rows()) != to_.size) {
    throw CombError("kernel matrix is " + std::to_string(matrix_.rows()) + "x" +
                    std::to_string(matrix_.cols()) + ", spaces need " + std::to_string(to_.size) +
                    "x" + std::to_string(from_.size));
  }
  for (Index c = 0; c < matrix_.cols(); ++c) {
    if ((matrix_.col(c).array() < 0.0).any()) throw CombError("kernel has a negative entry");
    if (std::abs(matrix_.col(c).sum() - 1.0) > kStochasticTolerance) {
      throw CombError("kernel column " + std::to_string(c) + " does not sum to 1");
    }
  }
}

Kernel Kernel::identity(const FiniteSpace& space) {
  return Kernel(Matrix::Identity(idx(space.size), idx(space.size)), space, space);
}

Kernel Kernel::constant(const FiniteSpace& from, const FiniteSpace& to, const Vector& column) {
  Matrix m(idx(to.size), idx(from.size));
  for (Index c = 0; c < m.cols(); ++c) m.col(c) = column;
  return Kernel(std::move(m), from, to);
}

Vector Kernel::apply(const Vector& law) const {
  if (static_cast<std::size_t>(law.size()) != from_.size) {
    throw CombError("law has " + std::to_string(law.size()) + " entries, kernel expects " +
                    std::to_string(from_.size));
  }
  return matrix_ * law;
}

Kernel link(const Kernel& k2, const Kernel& k1) {
  if (!(k1.to() == k2.from())) {
    throw CombError("link: '" + k1.to().name + "' does not feed '" + k2.from().name + "'");
  }
  return Kernel(k2.matrix() * k1.matrix(), k1.from(), k2.to());
}

Kernel break_kernel(const FiniteSpace& space, const ProductLayout& layout) {
  if (layout.params * layout.buffers != space.size || layout.reset_buffer >= layout.buffers) {
    throw CombError("break kernel: layout does not match the latent space");
  }
  Matrix m = Matrix::Zero(idx(space.size), idx(space.size));
  for (std::size_t t = 0; t < layout.params; ++t) {
    for (std::size_t b = 0; b < layout.buffers; ++b) {
      m(idx(layout.index(t, layout.reset_buffer)), idx(layout.index(t, b))) = 1.0;
    }
  }
  return Kernel(std::move(m), space, space);
}

void Comb::validate() const {
  if (static_cast<std::size_t>(prior.size()) != latent.size) throw CombError("prior has wrong size");
  if ((prior.array() < 0.0).any() || std::abs(prior.sum() - 1.0) > kStochasticTolerance) {
    throw CombError("prior is not a probability vector");
  }
  if (!(observation.from() == latent) || !(observation.to() == observable)) {
    throw CombError("observation kernel spaces do not match the comb");
  }
  for (const auto& [label, k] : instruments) {
    if (!(k.from() == latent) || !(k.to() == latent)) {
      throw CombError("instrument '" + label + "' does not act on the latent space");
    }
  }
  if (break_op && (!(break_op->from() == latent) || !(break_op->to() == latent))) {
    throw CombError("break kernel does not act on the latent space");
  }
}

const Kernel& Comb::instrument(const std::string& label) const {
  const auto it = instruments.find(label);
  if (it == instruments.end()) throw CombError("no instrument labeled '" + label + "'");
  return it->second;
}

TwoTimeLaws two_time_laws(const Comb& comb, const std::string& i0, const std::string& i1,
                          bool apply_break) {
  const Vector mid = comb.instrument(i0).apply(comb.prior);
  Vector before_second = mid;
  if (apply_break) {
    if (!comb.break_op) throw CombError("comb has no break kernel");
    before_second = comb.break_op->apply(mid);
  }
  const Vector end = comb.instrument(i1).apply(before_second);
  return {comb.observation.apply(mid), comb.observation.apply(end)};
}

Kernel omc_channel_from_break(const Comb& comb, const std::string& b, const Kernel& lifting) {
  if (!(lifting.from() == comb.observable) || !(lifting.to() == comb.latent)) {
    throw CombError("lifting kernel must map the observable space to the latent space");
  }
  Kernel post = lifting;
  if (comb.break_op) post = link(*comb.break_op, post);
  return link(comb.observation, link(comb.instrument(b), post));
}

BackflowReport verify_no_backflow(const Comb& comb,
                                  const std::vector<std::pair<std::string, std::string>>& pairs,
                                  const std::string& b, const Kernel& lambda_b,
                                  std::span<const DivergenceKind> kinds, bool apply_break) {
  if (!(lambda_b.from() == comb.observable) || !(lambda_b.to() == comb.observable)) {
    throw CombError("Lambda_B must act on the observable space");
  }
  BackflowReport report;
  std::map<std::string, TwoTimeLaws> laws;
  for (const auto& [a, ap] : pairs) {
    for (const auto& label : {a, ap}) {
      if (laws.count(label)) continue;
      TwoTimeLaws l = two_time_laws(comb, label, b, apply_break);
      const double residual = (l.phi2 - lambda_b.apply(l.phi1)).cwiseAbs().maxCoeff();
      report.omc_residual = std::max(report.omc_residual, residual);
      laws.emplace(label, std::move(l));
    }
  }
  if (report.omc_residual > kTheoremTolerance) {
    report.omc_satisfied = false;
    report.passed = false;
    report.message = "OMC not satisfied; theorem not applicable";
    return report;
  }
  report.max_delta = -std::numeric_limits<double>::infinity();
  for (const auto& [a, ap] : pairs) {
    const auto& la = laws.at(a);
    const auto& lap = laws.at(ap);
    for (DivergenceKind kind : kinds) {
      const double delta = divergence(kind, la.phi2, lap.phi2) - divergence(kind, la.phi1, lap.phi1);
      if (delta > report.max_delta) {
        report.max_delta = delta;
        report.worst_pair = {a, ap};
        report.worst_kind = kind;
      }
    }
  }
  if (pairs.empty() || kinds.empty()) report.max_delta = 0.0;
  report.passed = report.max_delta <= kTheoremTolerance;
  report.message = report.passed ? "no back-flow" : "back-flow above tolerance";
  return report;
}

Witness search_backflow_witness(const Comb& comb,
                                const std::vector<std::pair<std::string, std::string>>& pairs,
                                const std::string& b, std::span<const DivergenceKind> kinds,
                                bool apply_break) {
  Witness best;
  best.delta = -std::numeric_limits<double>::infinity();
  for (const auto& [a, ap] : pairs) {
    const TwoTimeLaws la = two_time_laws(comb, a, b, apply_break);
    const TwoTimeLaws lap = two_time_laws(comb, ap, b, apply_break);
    for (DivergenceKind kind : kinds) {
      const double d1 = divergence(kind, la.phi1, lap.phi1);
      const double d2 = divergence(kind, la.phi2, lap.phi2);
      if (d2 - d1 > best.delta) best = {{a, ap}, kind, d2 - d1, d1, d2};
    }
  }
  if (pairs.empty() || kinds.empty()) best.delta = 0.0;
  return best;
}

RandomCombCase random_omc_comb(std::uint64_t seed) {
  Rng rng(seed);
  static constexpr std::pair<std::size_t, std::size_t> kShapes[] = {
      {2, 1}, {2, 2}, {2, 3}, {3, 1}, {3, 2}, {4, 1}};
  const auto [n_obs, n_hidden] = kShapes[pick(rng, 0, std::size(kShapes) - 1)];
  const std::size_t n_latent = n_obs * n_hidden;
  const FiniteSpace latent{"S", n_latent}, obs{"O", n_obs};

  // Latent label of (o, h), shuffled so the structure is not positional.
  std::vector<std::size_t> label(n_latent);
  std::iota(label.begin(), label.end(), std::size_t{0});
  std::shuffle(label.begin(), label.end(), rng);

  Matrix observe = Matrix::Zero(idx(n_obs), idx(n_latent));
  for (std::size_t o = 0; o < n_obs; ++o) {
    for (std::size_t h = 0; h < n_hidden; ++h) observe(idx(o), idx(label[o * n_hidden + h])) = 1.0;
  }
  const Matrix lambda = random_stochastic(n_obs, n_obs, rng);
  Matrix kb = Matrix::Zero(idx(n_latent), idx(n_latent));
  for (std::size_t o = 0; o < n_obs; ++o) {
    for (std::size_t h = 0; h < n_hidden; ++h) {
      const Index from = idx(label[o * n_hidden + h]);
      for (std::size_t o2 = 0; o2 < n_obs; ++o2) {
        const Vector hidden_law = random_law(n_hidden, rng);
        for (std::size_t h2 = 0; h2 < n_hidden; ++h2) {
          kb(idx(label[o2 * n_hidden + h2]), from) = lambda(idx(o2), idx(o)) * hidden_law(idx(h2));
        }
      }
    }
  }
  for (Index c = 0; c < kb.cols(); ++c) kb.col(c) /= kb.col(c).sum();

  Comb comb{latent, obs, random_law(n_latent, rng), {}, Kernel(observe, latent, obs), std::nullopt};
  const auto labels = add_random_instruments(comb, 5, rng);
  comb.instruments.emplace("B", Kernel(kb, latent, latent));
  comb.validate();
  return {std::move(comb), all_pairs(labels), "B", Kernel(lambda, obs, obs), std::nullopt, false};
}

RandomCombCase random_break_comb(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n_theta = pick(rng, 2, 4);
  const std::size_t n_buf = pick(rng, 2, 3);
  const std::size_t n_obs = pick(rng, 2, n_theta);
  const ProductLayout layout{n_theta, n_buf, 0};
  const std::size_t n_latent = n_theta * n_buf;
  const FiniteSpace latent{"ThetaxY", n_latent}, obs{"O", n_obs};

  // Surjective readout f: theta -> o.
  std::vector<std::size_t> f(n_theta);
  for (std::size_t t = 0; t < n_theta; ++t) f[t] = t < n_obs ? t : pick(rng, 0, n_obs - 1);
  std::shuffle(f.begin(), f.end(), rng);
  std::vector<std::vector<std::size_t>> preimage(n_obs);
  for (std::size_t t = 0; t < n_theta; ++t) preimage[f[t]].push_back(t);

  Matrix observe = Matrix::Zero(idx(n_obs), idx(n_latent));
  for (std::size_t t = 0; t < n_theta; ++t) {
    for (std::size_t b = 0; b < n_buf; ++b) observe(idx(f[t]), idx(layout.index(t, b))) = 1.0;
  }

  const Matrix lambda = random_stochastic(n_obs, n_obs, rng);
  // Within-fiber laws: where in f^-1(o) the next parameter lands / is lifted to.
  auto fiber_law = [&](std::size_t o) { return random_law(preimage[o].size(), rng); };

  Matrix kb = Matrix::Zero(idx(n_latent), idx(n_latent));
  for (std::size_t t = 0; t < n_theta; ++t) {
    for (std::size_t b = 0; b < n_buf; ++b) {
      const Index from = idx(layout.index(t, b));
      if (b != layout.reset_buffer) {
        kb.col(from) = random_law(n_latent, rng);  // memoryful, erased by the break
        continue;
      }
      const Vector buf_law = random_law(n_buf, rng);
      for (std::size_t o2 = 0; o2 < n_obs; ++o2) {
        const Vector within = fiber_law(o2);
        for (std::size_t j = 0; j < preimage[o2].size(); ++j) {
          for (std::size_t b2 = 0; b2 < n_buf; ++b2) {
            kb(idx(layout.index(preimage[o2][j], b2)), from) =
                lambda(idx(o2), idx(f[t])) * within(idx(j)) * buf_law(idx(b2));
          }
        }
      }
    }
  }
  for (Index c = 0; c < kb.cols(); ++c) kb.col(c) /= kb.col(c).sum();

  Matrix lift = Matrix::Zero(idx(n_latent), idx(n_obs));
  for (std::size_t o = 0; o < n_obs; ++o) {
    const Vector within = fiber_law(o);
    for (std::size_t j = 0; j < preimage[o].size(); ++j) {
      lift(idx(layout.index(preimage[o][j], layout.reset_buffer)), idx(o)) = within(idx(j));
    }
  }

  Comb comb{latent, obs, random_law(n_latent, rng), {}, Kernel(observe, latent, obs),
            break_kernel(latent, layout)};
  const auto labels = add_random_instruments(comb, 5, rng);
  comb.instruments.emplace("B", Kernel(kb, latent, latent));
  comb.validate();
  Kernel lifting(lift, obs, latent);
  Kernel lambda_b = omc_channel_from_break(comb, "B", lifting);
  return {std::move(comb), all_pairs(labels), "B", std::move(lambda_b), std::move(lifting), true};
}

RandomCombCase memoryful_demo_comb() {
  const ProductLayout layout{2, 2, 0};
  const FiniteSpace latent{"ThetaxY", 4}, obs{"O", 2};
  auto state = [&](std::size_t t, std::size_t b) { return idx(layout.index(t, b)); };

  Matrix observe = Matrix::Zero(2, 4);
  Matrix a = Matrix::Zero(4, 4), aprime = Matrix::Zero(4, 4), b = Matrix::Zero(4, 4);
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t y = 0; y < 2; ++y) {
      const Index s = state(t, y);
      observe(idx(t), s) = 1.0;
      // A and A' randomize theta identically; the buffer records which ran.
      a(state(0, 0), s) = a(state(1, 0), s) = 0.5;
      aprime(state(0, 1), s) = aprime(state(1, 1), s) = 0.5;
      // B writes the buffer into the parameters.
      b(state(y, y), s) = 1.0;
    }
  }
  Vector prior = Vector::Zero(4);
  prior(state(0, 0)) = 1.0;
  Comb comb{latent, obs, prior, {}, Kernel(observe, latent, obs), break_kernel(latent, layout)};
  comb.instruments.emplace("A", Kernel(a, latent, latent));
  comb.instruments.emplace("A'", Kernel(aprime, latent, latent));
  comb.instruments.emplace("B", Kernel(b, latent, latent));
  comb.validate();

  Matrix lift = Matrix::Zero(4, 2);
  lift(state(0, 0), 0) = lift(state(1, 0), 1) = 1.0;
  Kernel lifting(lift, obs, latent);
  Kernel lambda_b = omc_channel_from_break(comb, "B", lifting);
  return {std::move(comb), {{"A", "A'"}}, "B", std::move(lambda_b), std::move(lifting), false};
}

}  // namespace backflow::comb
