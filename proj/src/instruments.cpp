// SPDX-License-Identifier: Apache-2.0

#include "backflow/instruments.hpp"

#include <algorithm>
#include <stdexcept>
#include <cmath>
#include <random>
#include <unordered_set>

#include "backflow/rng.hpp"

namespace backflow {

namespace {

using Index = Eigen::Index;

Rng row_rng(std::uint64_t seed, std::size_t row, std::uint64_t part) {
  return Rng(splitmix64(splitmix64(seed ^ splitmix64(row)) + part));
}

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool coin(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

// ---- feature-vector analogs -------------------------------------------------

void weak_vector(Eigen::Ref<Vector> x, Rng& rng, const AugmentationParams& p) {
  const auto d = x.size();
  const double mu = x.mean();
  const double sd = std::sqrt((x.array() - mu).square().mean());
  const bool shift = coin(rng, p.shift_prob);
  const bool left = coin(rng, 0.5);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index j = 0; j < d; ++j) {
    const double z = normal(rng);
    x[j] += p.noise_fraction * sd * z;
  }
  if (shift && d > 1) {
    if (left) {
      std::rotate(x.data(), x.data() + 1, x.data() + d);
    } else {
      std::rotate(x.data(), x.data() + d - 1, x.data() + d);
    }
  }
}

void color_vector(Eigen::Ref<Vector> x, Rng& rng, const AugmentationParams& p) {
  for (Index j = 0; j < x.size(); ++j) x[j] *= uniform(rng, p.jitter_low, p.jitter_high);
  if (coin(rng, p.gray_prob)) x.setConstant(x.mean());
}

void blur_vector(Eigen::Ref<Vector> x, Rng& rng, const AugmentationParams& p) {
  const double sigma = uniform(rng, p.blur_sigma_low, p.blur_sigma_high);
  const double a = std::exp(-1.0 / (2.0 * sigma * sigma));
  const auto d = x.size();
  if (d < 2) return;
  const Vector src = x;
  for (Index j = 0; j < d; ++j) {
    const double prev = src[(j + d - 1) % d];
    const double next = src[(j + 1) % d];
    x[j] = (a * prev + src[j] + a * next) / (1.0 + 2.0 * a);
  }
}

// ---- image mode -------------------------------------------------------------

Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

void weak_image(Eigen::Ref<Vector> x, Rng& rng, const AugmentationParams& p, const ImageShape& s) {
  const auto pad = static_cast<Index>(p.crop_pad);
  const Index h = static_cast<Index>(s.height), w = static_cast<Index>(s.width);
  const auto oy = static_cast<Index>(std::uniform_int_distribution<Index>(0, 2 * pad)(rng));
  const auto ox = static_cast<Index>(std::uniform_int_distribution<Index>(0, 2 * pad)(rng));
  const bool flip = coin(rng, p.flip_prob);
  const Vector src = x;
  for (Index c = 0; c < static_cast<Index>(s.channels); ++c) {
    for (Index y = 0; y < h; ++y) {
      for (Index xx = 0; xx < w; ++xx) {
        const Index sy = reflect(y + oy - pad, h);
        Index sx = reflect(xx + ox - pad, w);
        if (flip) sx = w - 1 - sx;
        x[(c * h + y) * w + xx] = src[(c * h + sy) * w + sx];
      }
    }
  }
}

Vector luma(const Eigen::Ref<const Vector>& x, const ImageShape& s) {
  const auto plane = static_cast<Index>(s.height * s.width);
  if (s.channels != 3) return x.head(plane);
  return 0.299 * x.segment(0, plane) + 0.587 * x.segment(plane, plane) +
         0.114 * x.segment(2 * plane, plane);
}

void color_image(Eigen::Ref<Vector> x, Rng& rng, const AugmentationParams& p, const ImageShape& s) {
  const double lo = std::max(0.0, 1.0 - p.color_strength), hi = 1.0 + p.color_strength;
  const double brightness = uniform(rng, lo, hi);
  const double contrast = uniform(rng, lo, hi);
  const double saturation = uniform(rng, lo, hi);
  const bool gray = coin(rng, p.gray_prob);
  const auto plane = static_cast<Index>(s.height * s.width);
  x *= brightness;
  const double m = luma(x, s).mean();
  x = ((x.array() - m) * contrast + m).matrix();
  if (s.channels == 3) {
    const Vector g = luma(x, s);
    for (Index c = 0; c < 3; ++c) {
      auto ch = x.segment(c * plane, plane);
      ch = g + saturation * (ch - g);
    }
    if (gray) {
      const Vector g2 = luma(x, s);
      for (Index c = 0; c < 3; ++c) x.segment(c * plane, plane) = g2;
    }
  }
}

void blur_image(Eigen::Ref<Vector> x, Rng& rng, const AugmentationParams& p, const ImageShape& s) {
  const double sigma = uniform(rng, p.blur_sigma_low, p.blur_sigma_high);
  const double a = std::exp(-1.0 / (2.0 * sigma * sigma));
  const double taps[3] = {a / (1 + 2 * a), 1 / (1 + 2 * a), a / (1 + 2 * a)};
  const Index h = static_cast<Index>(s.height), w = static_cast<Index>(s.width);
  const Vector src = x;
  for (Index c = 0; c < static_cast<Index>(s.channels); ++c) {
    for (Index y = 0; y < h; ++y) {
      for (Index xx = 0; xx < w; ++xx) {
        double acc = 0.0;
        for (Index dy = -1; dy <= 1; ++dy) {
          for (Index dx = -1; dx <= 1; ++dx) {
            acc += taps[dy + 1] * taps[dx + 1] *
                   src[(c * h + reflect(y + dy, h)) * w + reflect(xx + dx, w)];
          }
        }
        x[(c * h + y) * w + xx] = acc;
      }
    }
  }
}

}  // namespace

std::size_t shared_count(std::size_t batch_size, double overlap) {
  return static_cast<std::size_t>(std::floor(overlap * static_cast<double>(batch_size)));
}

BatchPlan sample_batch_plan(const Dataset& dataset, std::size_t batch_size, double overlap,
                            bool same_classes, std::uint64_t seed) {
  if (batch_size == 0) throw DataError("batch size must be positive");
  if (!(overlap >= 0.0 && overlap <= 1.0)) throw DataError("overlap must lie in [0, 1]");
  const std::size_t shared = shared_count(batch_size, overlap);
  const std::size_t needed = 2 * batch_size - shared;
  if (dataset.train.size() < needed) {
    throw DataError("train split has " + std::to_string(dataset.train.size()) +
                    " examples; batch plan needs " + std::to_string(needed));
  }

  Rng rng(seed);
  std::vector<std::size_t> pool = dataset.train;
  std::shuffle(pool.begin(), pool.end(), rng);

  BatchPlan plan;
  plan.overlap = overlap;
  plan.same_classes = same_classes;
  plan.indices_a.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(batch_size));

  std::vector<std::size_t> a_shuffled = plan.indices_a;
  std::shuffle(a_shuffled.begin(), a_shuffled.end(), rng);
  plan.indices_b.assign(a_shuffled.begin(), a_shuffled.begin() + static_cast<std::ptrdiff_t>(shared));

  const auto complement_begin = pool.begin() + static_cast<std::ptrdiff_t>(batch_size);
  const std::size_t fresh = batch_size - shared;
  if (!same_classes) {
    plan.indices_b.insert(plan.indices_b.end(), complement_begin,
                          complement_begin + static_cast<std::ptrdiff_t>(fresh));
    return plan;
  }

  // Fill I_B so that its class histogram equals that of I_A.
  std::vector<std::size_t> want(dataset.num_classes, 0);
  for (std::size_t i : plan.indices_a) ++want[static_cast<std::size_t>(dataset.labels[i])];
  for (std::size_t i : plan.indices_b) --want[static_cast<std::size_t>(dataset.labels[i])];
  std::vector<bool> used(pool.size() - batch_size, false);
  std::size_t filled = 0;
  for (std::size_t j = 0; j < used.size() && filled < fresh; ++j) {
    const std::size_t idx = *(complement_begin + static_cast<std::ptrdiff_t>(j));
    auto& w = want[static_cast<std::size_t>(dataset.labels[idx])];
    if (w == 0) continue;
    --w;
    used[j] = true;
    plan.indices_b.push_back(idx);
    ++filled;
  }
  plan.class_shortfall = fresh - filled;
  for (std::size_t j = 0; j < used.size() && filled < fresh; ++j) {
    if (used[j]) continue;
    plan.indices_b.push_back(*(complement_begin + static_cast<std::ptrdiff_t>(j)));
    ++filled;
  }
  return plan;
}

std::string to_string(AugKind kind) {
  switch (kind) {
    case AugKind::none: return "none";
    case AugKind::weak: return "weak";
    case AugKind::color: return "color";
    case AugKind::blur: return "blur";
  }
  return "none";
}

AugKind parse_aug_kind(const std::string& s) {
  if (s == "none") return AugKind::none;
  if (s == "weak") return AugKind::weak;
  if (s == "color") return AugKind::color;
  if (s == "blur") return AugKind::blur;
  throw std::invalid_argument("unknown augmentation '" + s + "'");
}

Matrix apply_augmentation(const AugmentationKernel& aug, const Matrix& inputs) {
  if (aug.kind == AugKind::none) return inputs;
  const auto& p = aug.params;
  if (p.image && p.image->size() != static_cast<std::size_t>(inputs.cols())) {
    throw std::invalid_argument("image shape does not match the row width");
  }
  const bool image = p.image.has_value();
  Matrix out = inputs;
  for (Index i = 0; i < out.rows(); ++i) {
    Vector row = out.row(i).transpose();
    Rng weak_rng = row_rng(aug.seed, static_cast<std::size_t>(i), 0);
    Rng extra_rng = row_rng(aug.seed, static_cast<std::size_t>(i), 1);
    if (image) {
      weak_image(row, weak_rng, p, *p.image);
      if (aug.kind == AugKind::color) color_image(row, extra_rng, p, *p.image);
      if (aug.kind == AugKind::blur) blur_image(row, extra_rng, p, *p.image);
    } else {
      weak_vector(row, weak_rng, p);
      if (aug.kind == AugKind::color) color_vector(row, extra_rng, p);
      if (aug.kind == AugKind::blur) blur_vector(row, extra_rng, p);
    }
    out.row(i) = row.transpose();
  }
  return out;
}

bool Instrument::operator==(const Instrument& other) const {
  const bool same_overrides =
      overrides.has_value() == other.overrides.has_value() &&
      (!overrides || (overrides->lr == other.overrides->lr &&
                      overrides->momentum == other.overrides->momentum));
  return batch_indices == other.batch_indices && aug.kind == other.aug.kind &&
         aug.seed == other.aug.seed && k == other.k && same_overrides;
}

std::pair<Instrument, Instrument> make_pair_a_aprime(const BatchPlan& plan,
                                                     const AugmentationKernel& aug_a,
                                                     const AugmentationKernel& aug_aprime, int k,
                                                     std::optional<OptimizerOverrides> overrides) {
  if (k < 1) throw std::invalid_argument("instrument k must be >= 1");
  Instrument a{plan.indices_a, aug_a, k, overrides};
  Instrument aprime{plan.indices_a, aug_aprime, k, overrides};
  return {std::move(a), std::move(aprime)};
}

}  // namespace backflow
