// SPDX-License-Identifier: Apache-2.0
//
// Contractive divergences on class-probability rows, averaged over the probe.

#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>

#include "backflow/model.hpp"

namespace backflow {

enum class DivergenceKind { tv, js, hellinger };

inline constexpr std::array<DivergenceKind, 3> kAllDivergences = {
    DivergenceKind::tv, DivergenceKind::js, DivergenceKind::hellinger};

std::string to_string(DivergenceKind kind);
DivergenceKind parse_divergence(const std::string& s);

class DivergenceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// TV = 1/2 |p-q|_1; JS in bits; Hellinger = 1/2 |sqrt p - sqrt q|_2 (max
/// sqrt(2)/2). Rows whose sum is off by less than 1e-6 are renormalized.
double div_row(DivergenceKind kind, std::span<const double> p, std::span<const double> q);

/// Mean of div_row over the probe rows.
double div_avg(DivergenceKind kind, const ProbePredictions& p, const ProbePredictions& q);

}  // namespace backflow
