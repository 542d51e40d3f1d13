// SPDX-License-Identifier: Apache-2.0
//
// Discrete two-time process simulator. Kernels are column-stochastic matrices
// (entry (to, from)) so that laws propagate as K * p.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "backflow/divergences.hpp"
#include "backflow/model.hpp"
#include "backflow/rng.hpp"

namespace backflow::comb {

using backflow::Matrix;
using backflow::Vector;

class CombError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct FiniteSpace {
  std::string name;
  std::size_t size = 0;
  bool operator==(const FiniteSpace&) const = default;
};

class Kernel {
 public:
  Kernel(Matrix matrix, FiniteSpace from, FiniteSpace to);

  static Kernel identity(const FiniteSpace& space);
  /// Every column equals `column`.
  static Kernel constant(const FiniteSpace& from, const FiniteSpace& to, const Vector& column);

  const Matrix& matrix() const { return matrix_; }
  const FiniteSpace& from() const { return from_; }
  const FiniteSpace& to() const { return to_; }

  Vector apply(const Vector& law) const;

 private:
  Matrix matrix_;
  FiniteSpace from_;
  FiniteSpace to_;
};

/// K2 after K1.
Kernel link(const Kernel& k2, const Kernel& k1);

/// Latent space that may factor as parameters x buffers; index = theta * |Y| + y.
struct ProductLayout {
  std::size_t params = 0;
  std::size_t buffers = 0;
  std::size_t reset_buffer = 0;
  std::size_t index(std::size_t theta, std::size_t buffer) const { return theta * buffers + buffer; }
};

/// (theta, y) -> (theta, reset_buffer).
Kernel break_kernel(const FiniteSpace& space, const ProductLayout& layout);

struct Comb {
  FiniteSpace latent;
  FiniteSpace observable;
  Vector prior;
  std::map<std::string, Kernel> instruments;
  Kernel observation;  // latent -> observable
  std::optional<Kernel> break_op;

  void validate() const;
  const Kernel& instrument(const std::string& label) const;
};

struct TwoTimeLaws {
  Vector phi1;
  Vector phi2;
};

/// phi1 = O K_I0 pi0; phi2 = O K_I1 [break] K_I0 pi0.
TwoTimeLaws two_time_laws(const Comb& comb, const std::string& i0, const std::string& i1,
                          bool apply_break = false);

/// Lambda_B = O * K_B * break * R.
Kernel omc_channel_from_break(const Comb& comb, const std::string& b, const Kernel& lifting);

struct BackflowReport {
  bool omc_satisfied = true;
  double omc_residual = 0.0;
  double max_delta = 0.0;
  std::pair<std::string, std::string> worst_pair;
  DivergenceKind worst_kind = DivergenceKind::tv;
  bool passed = true;
  std::string message;
};

inline constexpr double kTheoremTolerance = 1e-10;

/// Checks phi2^(I,B) = Lambda_B phi1^(I) for every instrument in the pairs,
/// then that no pair shows back-flow above 1e-10.
BackflowReport verify_no_backflow(const Comb& comb,
                                  const std::vector<std::pair<std::string, std::string>>& pairs,
                                  const std::string& b, const Kernel& lambda_b,
                                  std::span<const DivergenceKind> kinds, bool apply_break = false);

struct Witness {
  std::pair<std::string, std::string> pair;
  DivergenceKind kind = DivergenceKind::tv;
  double delta = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

Witness search_backflow_witness(const Comb& comb,
                                const std::vector<std::pair<std::string, std::string>>& pairs,
                                const std::string& b, std::span<const DivergenceKind> kinds,
                                bool apply_break = false);

// Constructions used by the randomized theorem checks and the CLI.

struct RandomCombCase {
  Comb comb;
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string b;
  Kernel lambda_b;
  std::optional<Kernel> lifting;
  bool apply_break = false;
};

/// OMC holds by construction: latent = observable x hidden with a
/// deterministic observation and O K_B = Lambda_B O.
RandomCombCase random_omc_comb(std::uint64_t seed);

/// Product space theta x buffers with a memoryful K_B that is sufficient
/// once the buffers are reset; Lambda_B comes from omc_channel_from_break.
RandomCombCase random_break_comb(std::uint64_t seed);

/// Hand-built 4-state example: the buffer remembers which first instrument
/// ran and K_B routes on it.
RandomCombCase memoryful_demo_comb();

Matrix random_stochastic(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace backflow::comb
