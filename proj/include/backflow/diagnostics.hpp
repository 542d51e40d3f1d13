// SPDX-License-Identifier: Apache-2.0
//
// Mechanism diagnostics: momentum alignment, linear CKA, function-space PCA
// and the dose-response assembly.

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "backflow/instruments.hpp"
#include "backflow/model.hpp"
#include "backflow/stats.hpp"

namespace backflow {

struct CosineResult {
  double value = 0.0;
  bool degenerate = false;  // one of the vectors had zero norm
};

CosineResult cosine(const Vector& u, const Vector& v);

/// Column-centered linear CKA in [0, 1].
double linear_cka(const Matrix& x, const Matrix& y);

struct TrajectoryProjection {
  Matrix points;  // m x 2
  std::array<double, 2> explained_variance{};
};

/// Flattens each matrix, centers across the set and projects onto the top-2
/// principal directions. Each direction is signed so that its
/// largest-magnitude coordinate is positive.
TrajectoryProjection pca_project(const std::vector<Matrix>& matrices);

struct DoseRecord {
  std::string regime;
  std::string pair_id;  // e.g. seed; strong/mid records pair on this
  int k = 1;
  double momentum = 0.0;
  double overlap = 0.0;
  AugKind aug_b = AugKind::weak;
  double mean_delta = 0.0;
};

struct PairedLift {
  std::size_t pairs = 0;
  std::size_t increases = 0;
  std::vector<double> differences;
  BootstrapSummary lift;
  TestResult test;
};

struct DoseResponseReport {
  std::size_t n = 0;
  std::vector<double> a_mu;  // per kept record
  std::optional<Ols2Result> regression;
  std::string regression_error;
  std::optional<PairedLift> paired;
  std::string paired_error;
};

/// Regresses mean delta on the amplification factor and overlap (aug_B = weak
/// records only) and compares `strong` against `mid` within pairs at k = 6.
DoseResponseReport dose_response(const std::vector<DoseRecord>& records,
                                 const std::string& strong = "resonant_strong",
                                 const std::string& mid = "resonant_mid",
                                 std::uint64_t seed = 0);

}  // namespace backflow
