// SPDX-License-Identifier: Apache-2.0
//
// Normalization-free classifiers with closed-form gradients. The probe-set
// softmax output of these models is the observable the witness measures.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace backflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ModelKind { softmax_linear, mlp1 };
enum class Activation { tanh, relu };

struct ModelSpec {
  ModelKind kind = ModelKind::softmax_linear;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::size_t hidden_dim = 0;  // mlp1 only
  Activation activation = Activation::tanh;

  void validate() const;
};

std::size_t parameter_count(const ModelSpec& spec);

std::string to_string(ModelKind kind);
std::string to_string(Activation act);
ModelKind parse_model_kind(const std::string& s);
Activation parse_activation(const std::string& s);

/// Flat parameter vector. Layout:
///   softmax_linear: W[C][d], b[C]
///   mlp1:           W1[h][d], b1[h], W2[C][h], b2[C]
struct ParamVector {
  Vector values;

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  bool all_finite() const { return values.allFinite(); }
  bool operator==(const ParamVector& other) const {
    return values.size() == other.values.size() && values == other.values;
  }
};

/// Row-stochastic N x C matrix of class probabilities on a fixed probe.
struct ProbePredictions {
  Matrix probs;
  std::string probe_id;

  std::size_t rows() const { return static_cast<std::size_t>(probs.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(probs.cols()); }
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when loss, gradient or update stops being finite. Carries enough
/// context for the caller to retry with a smaller learning rate.
class NanGuardError : public std::runtime_error {
 public:
  NanGuardError(const std::string& what, double lr)
      : std::runtime_error(what), lr_(lr) {}
  double lr() const { return lr_; }

 private:
  double lr_;
};

/// Glorot-uniform per layer, biases zero.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

ProbePredictions forward(const ModelSpec& spec, const ParamVector& params,
                         const Matrix& inputs, std::string probe_id = {});

struct LossAndGrad {
  double loss = 0.0;
  Vector grad;
};

/// Mean cross-entropy over the batch and its exact gradient.
LossAndGrad loss_and_grad(const ModelSpec& spec, const ParamVector& params,
                          const Matrix& inputs, std::span<const int> labels);

/// Input to the final linear layer; the identity for softmax_linear.
Matrix penultimate_features(const ModelSpec& spec, const ParamVector& params,
                            const Matrix& inputs);

/// In-place numerically stable row softmax.
void softmax_rows(Matrix& logits);

}  // namespace backflow
