// SPDX-License-Identifier: Apache-2.0

#include "backflow/model.hpp"

#include <cmath>
#include <random>

#include "backflow/rng.hpp"

namespace backflow {

namespace {

using Index = Eigen::Index;

struct Layer {
  Eigen::Map<const Matrix> w;
  Eigen::Map<const Vector> b;
};

// Views of the flat parameter vector; offsets follow the documented layout.
Layer layer_view(const Vector& v, Index offset, Index out, Index in) {
  return {Eigen::Map<const Matrix>(v.data() + offset, out, in),
          Eigen::Map<const Vector>(v.data() + offset + out * in, out)};
}

void check_inputs(const ModelSpec& spec, const ParamVector& params, const Matrix& inputs) {
  if (params.size() != parameter_count(spec)) {
    throw DimensionError("parameter vector has " + std::to_string(params.size()) +
                         " entries, model expects " + std::to_string(parameter_count(spec)));
  }
  if (static_cast<std::size_t>(inputs.cols()) != spec.input_dim) {
    throw DimensionError("inputs have " + std::to_string(inputs.cols()) +
                         " columns, model expects " + std::to_string(spec.input_dim));
  }
}

Matrix activate(const Matrix& z, Activation act) {
  if (act == Activation::tanh) return z.array().tanh().matrix();
  return z.cwiseMax(0.0);
}

Matrix activation_derivative(const Matrix& z, const Matrix& h, Activation act) {
  if (act == Activation::tanh) return (1.0 - h.array().square()).matrix();
  return (z.array() > 0.0).cast<double>().matrix();
}

Matrix affine(const Matrix& x, const Layer& layer) {
  Matrix z = x * layer.w.transpose();
  z.rowwise() += layer.b.transpose();
  return z;
}

struct ForwardCache {
  Matrix hidden_pre;  // mlp1 only
  Matrix hidden;      // mlp1 only
  Matrix logits;
};

ForwardCache forward_cache(const ModelSpec& spec, const ParamVector& params,
                           const Matrix& inputs) {
  const auto d = static_cast<Index>(spec.input_dim);
  const auto c = static_cast<Index>(spec.num_classes);
  ForwardCache cache;
  if (spec.kind == ModelKind::softmax_linear) {
    cache.logits = affine(inputs, layer_view(params.values, 0, c, d));
    return cache;
  }
  const auto h = static_cast<Index>(spec.hidden_dim);
  cache.hidden_pre = affine(inputs, layer_view(params.values, 0, h, d));
  cache.hidden = activate(cache.hidden_pre, spec.activation);
  cache.logits = affine(cache.hidden, layer_view(params.values, h * d + h, c, h));
  return cache;
}

}  // namespace

void ModelSpec::validate() const {
  if (input_dim == 0) throw std::invalid_argument("model.input_dim must be positive");
  if (num_classes < 2) throw std::invalid_argument("model.num_classes must be at least 2");
  if (kind == ModelKind::mlp1 && hidden_dim == 0) {
    throw std::invalid_argument("model.hidden_dim must be positive for mlp1");
  }
}

std::size_t parameter_count(const ModelSpec& spec) {
  const std::size_t d = spec.input_dim;
  const std::size_t c = spec.num_classes;
  if (spec.kind == ModelKind::softmax_linear) return d * c + c;
  const std::size_t h = spec.hidden_dim;
  return d * h + h + h * c + c;
}

std::string to_string(ModelKind kind) {
  return kind == ModelKind::softmax_linear ? "softmax_linear" : "mlp1";
}

std::string to_string(Activation act) { return act == Activation::tanh ? "tanh" : "relu"; }

ModelKind parse_model_kind(const std::string& s) {
  if (s == "softmax_linear") return ModelKind::softmax_linear;
  if (s == "mlp1") return ModelKind::mlp1;
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParamVector params{Vector::Zero(static_cast<Index>(parameter_count(spec)))};
  Index offset = 0;
  auto fill_layer = [&](std::size_t out, std::size_t in) {
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-a, a);
    for (std::size_t i = 0; i < out * in; ++i) params.values[offset++] = dist(rng);
    offset += static_cast<Index>(out);  // biases stay zero
  };
  if (spec.kind == ModelKind::softmax_linear) {
    fill_layer(spec.num_classes, spec.input_dim);
  } else {
    fill_layer(spec.hidden_dim, spec.input_dim);
    fill_layer(spec.num_classes, spec.hidden_dim);
  }
  return params;
}

void softmax_rows(Matrix& logits) {
  for (Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const double m = row.maxCoeff();
    row = (row.array() - m).exp().matrix();
    row /= row.sum();
  }
}

ProbePredictions forward(const ModelSpec& spec, const ParamVector& params,
                         const Matrix& inputs, std::string probe_id) {
  check_inputs(spec, params, inputs);
  ForwardCache cache = forward_cache(spec, params, inputs);
  softmax_rows(cache.logits);
  return {std::move(cache.logits), std::move(probe_id)};
}

LossAndGrad loss_and_grad(const ModelSpec& spec, const ParamVector& params,
                          const Matrix& inputs, std::span<const int> labels) {
  check_inputs(spec, params, inputs);
  const Index n = inputs.rows();
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw DimensionError("batch has " + std::to_string(n) + " rows but " +
                         std::to_string(labels.size()) + " labels");
  }
  if (n == 0) throw DimensionError("empty batch");
  const auto c = static_cast<Index>(spec.num_classes);
  for (int y : labels) {
    if (y < 0 || y >= c) throw DimensionError("label " + std::to_string(y) + " out of range");
  }

  ForwardCache cache = forward_cache(spec, params, inputs);
  double loss = 0.0;
  Matrix delta = cache.logits;  // becomes dL/dlogits
  for (Index i = 0; i < n; ++i) {
    auto row = delta.row(i);
    const double m = row.maxCoeff();
    row = (row.array() - m).exp().matrix();
    const double z = row.sum();
    loss += std::log(z) + m - cache.logits(i, labels[static_cast<std::size_t>(i)]);
    row /= z;
    row(labels[static_cast<std::size_t>(i)]) -= 1.0;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  loss *= inv_n;
  delta *= inv_n;
  if (!std::isfinite(loss)) throw NanGuardError("non-finite training loss", 0.0);

  Vector grad = Vector::Zero(params.values.size());
  const auto d = static_cast<Index>(spec.input_dim);
  if (spec.kind == ModelKind::softmax_linear) {
    Eigen::Map<Matrix>(grad.data(), c, d) = delta.transpose() * inputs;
    grad.segment(c * d, c) = delta.colwise().sum().transpose();
  } else {
    const auto h = static_cast<Index>(spec.hidden_dim);
    const Index off2 = h * d + h;
    Eigen::Map<Matrix>(grad.data() + off2, c, h) = delta.transpose() * cache.hidden;
    grad.segment(off2 + c * h, c) = delta.colwise().sum().transpose();
    const Layer out = layer_view(params.values, off2, c, h);
    Matrix dz = (delta * out.w).cwiseProduct(
        activation_derivative(cache.hidden_pre, cache.hidden, spec.activation));
    Eigen::Map<Matrix>(grad.data(), h, d) = dz.transpose() * inputs;
    grad.segment(h * d, h) = dz.colwise().sum().transpose();
  }
  if (!grad.allFinite()) throw NanGuardError("non-finite gradient", 0.0);
  return {loss, std::move(grad)};
}

Matrix penultimate_features(const ModelSpec& spec, const ParamVector& params,
                            const Matrix& inputs) {
  check_inputs(spec, params, inputs);
  if (spec.kind == ModelKind::softmax_linear) return inputs;
  return forward_cache(spec, params, inputs).hidden;
}

}  // namespace backflow
