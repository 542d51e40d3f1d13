// SPDX-License-Identifier: Apache-2.0

#include "backflow/protocol.hpp"

#include <cmath>
#include <stdexcept>

#include "backflow/diagnostics.hpp"
#include "backflow/rng.hpp"

namespace backflow {

namespace {

struct Branch {
  ParamVector params;
  OptimizerState state;
};

Branch fresh_branch(const ParamVector& base) {
  return {base, OptimizerState::zeros(base.size())};
}

void run_instrument(const ModelSpec& spec, Branch& branch, const PreparedInstrument& inst) {
  run_steps(spec, branch.params, branch.state, inst.inputs, inst.labels, inst.k, inst.optimizer);
}

struct RegimeInstruments {
  PreparedInstrument a, aprime, b;
  std::size_t class_shortfall = 0;
};

RegimeInstruments build_instruments(const ExperimentContext& ctx, const Regime& regime,
                                    const RepeatKey& key, double lr_scale) {
  const auto seed = [&](Stream s) {
    return derive_seed(key.global_seed, key.seed_index, key.repeat_id, s);
  };
  const BatchPlan plan = sample_batch_plan(ctx.dataset, ctx.micro.batch_size, regime.overlap,
                                           regime.same_classes, seed(Stream::batch_plan));
  // A and A' share their augmentation stream; only the kernel kind differs.
  const std::uint64_t first_seed = seed(Stream::aug_first);
  const AugmentationKernel aug_a{regime.aug_a, first_seed, ctx.micro.aug_params};
  const AugmentationKernel aug_aprime{regime.aug_aprime, first_seed, ctx.micro.aug_params};
  const AugmentationKernel aug_b{regime.aug_b, seed(Stream::aug_second), ctx.micro.aug_params};

  const OptimizerOverrides overrides{regime.lr * lr_scale, regime.momentum};
  auto [inst_a, inst_aprime] = make_pair_a_aprime(plan, aug_a, aug_aprime, regime.k, overrides);
  const Instrument inst_b{plan.indices_b, aug_b, regime.k, overrides};

  const OptimizerConfig base = regime_optimizer(regime, ctx.micro);
  return {prepare_instrument(ctx.dataset, inst_a, base),
          prepare_instrument(ctx.dataset, inst_aprime, base),
          prepare_instrument(ctx.dataset, inst_b, base), plan.class_shortfall};
}

}  // namespace

void Regime::validate() const {
  if (name.empty()) throw std::invalid_argument("regime.name must not be empty");
  if (k < 1) throw std::invalid_argument("regime '" + name + "': k must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("regime '" + name + "': lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("regime '" + name + "': momentum must lie in [0, 1)");
  }
  if (!(overlap >= 0.0 && overlap <= 1.0)) {
    throw std::invalid_argument("regime '" + name + "': overlap must lie in [0, 1]");
  }
}

const std::vector<Regime>& regime_presets() {
  using A = AugKind;
  static const std::vector<Regime> presets = {
      {"standard", 3, 0.02, 0.90, A::weak, A::color, A::weak, 0.5, true},
      {"resonant_strong", 6, 0.03, 0.99, A::color, A::blur, A::weak, 1.0, true},
      {"resonant_mid", 6, 0.03, 0.95, A::color, A::blur, A::weak, 0.75, true},
      {"orthogonal", 6, 0.03, 0.99, A::color, A::blur, A::blur, 0.0, false},
      {"negative", 1, 0.005, 0.0, A::none, A::none, A::none, 0.0, false},
  };
  return presets;
}

Regime regime_preset(const std::string& name) {
  for (const auto& r : regime_presets()) {
    if (r.name == name) return r;
  }
  throw std::invalid_argument("unknown regime preset '" + name + "'");
}

OptimizerConfig regime_optimizer(const Regime& regime, const MicroConfig& micro) {
  return {regime.lr, regime.momentum, micro.weight_decay, micro.clip_norm};
}

PreparedInstrument prepare_instrument(const Dataset& dataset, const Instrument& instrument,
                                      const OptimizerConfig& base) {
  if (instrument.k < 1) throw std::invalid_argument("instrument k must be >= 1");
  PreparedInstrument p;
  p.inputs = apply_augmentation(instrument.aug, dataset.rows(instrument.batch_indices));
  p.labels = dataset.labels_of(instrument.batch_indices);
  p.k = instrument.k;
  p.optimizer = base;
  if (instrument.overrides) {
    p.optimizer.lr = instrument.overrides->lr;
    p.optimizer.momentum = instrument.overrides->momentum;
  }
  p.optimizer.validate();
  return p;
}

void run_steps(const ModelSpec& spec, ParamVector& params, OptimizerState& state,
               const Matrix& batch, std::span<const int> labels, int k,
               const OptimizerConfig& config) {
  for (int t = 0; t < k; ++t) {
    LossAndGrad lg;
    try {
      lg = loss_and_grad(spec, params, batch, labels);
    } catch (const NanGuardError& e) {
      throw NanGuardError(e.what(), config.lr);
    }
    step(params, state, lg.grad, config);
  }
}

MicroOutcome run_two_step(const ModelSpec& spec, const ParamVector& base,
                          const PreparedInstrument& a, const PreparedInstrument& aprime,
                          const PreparedInstrument& b, bool break_applied,
                          const Matrix& probe_inputs, const std::string& probe_id,
                          bool keep_endpoints) {
  Branch branch_a = fresh_branch(base);
  Branch branch_aprime = fresh_branch(base);
  run_instrument(spec, branch_a, a);
  run_instrument(spec, branch_aprime, aprime);
  const ProbePredictions p_a = forward(spec, branch_a.params, probe_inputs, probe_id);
  const ProbePredictions p_aprime = forward(spec, branch_aprime.params, probe_inputs, probe_id);

  MicroOutcome out;
  out.record.break_applied = break_applied;
  out.record.lr_used = b.optimizer.lr;
  if (!break_applied) {
    const Vector g = loss_and_grad(spec, branch_a.params, b.inputs, b.labels).grad;
    const CosineResult c = cosine(g, branch_a.state.momentum_buffer);
    if (!c.degenerate) out.record.momentum_alignment = c.value;
  }
  if (break_applied) {
    branch_a.state = causal_break(branch_a.state);
    branch_aprime.state = causal_break(branch_aprime.state);
  }
  ParamVector theta_a = branch_a.params, theta_aprime = branch_aprime.params;

  // First B step on branch A separately so its update can be inspected.
  run_steps(spec, branch_a.params, branch_a.state, b.inputs, b.labels, 1, b.optimizer);
  out.first_b_update = branch_a.params.values - theta_a.values;
  run_steps(spec, branch_a.params, branch_a.state, b.inputs, b.labels, b.k - 1, b.optimizer);
  run_instrument(spec, branch_aprime, b);

  const ProbePredictions p_ab = forward(spec, branch_a.params, probe_inputs, probe_id);
  const ProbePredictions p_aprime_b = forward(spec, branch_aprime.params, probe_inputs, probe_id);
  for (DivergenceKind kind : kAllDivergences) {
    const std::size_t i = div_index(kind);
    out.record.d1[i] = div_avg(kind, p_a, p_aprime);
    out.record.d2[i] = div_avg(kind, p_ab, p_aprime_b);
    out.record.delta[i] = out.record.d2[i] - out.record.d1[i];
  }
  if (keep_endpoints) {
    out.endpoints = BranchEndpoints{std::move(theta_a), std::move(theta_aprime),
                                    std::move(branch_a.params), std::move(branch_aprime.params)};
  }
  return out;
}

MicroOutcome run_micro_experiment(const ExperimentContext& ctx, const Regime& regime,
                                  bool break_applied, const RepeatKey& key, bool keep_endpoints) {
  std::string failure;
  for (double lr_scale : {1.0, 0.5}) {
    try {
      const RegimeInstruments inst = build_instruments(ctx, regime, key, lr_scale);
      MicroOutcome out = run_two_step(ctx.spec, ctx.base_params, inst.a, inst.aprime, inst.b,
                                      break_applied, ctx.probe_inputs, ctx.probe_id,
                                      keep_endpoints);
      out.record.repeat_id = key.repeat_id;
      out.record.seed = key.seed_index;
      out.record.class_shortfall = inst.class_shortfall;
      return out;
    } catch (const NanGuardError& e) {
      failure = e.what();
    }
  }
  MicroOutcome out;
  out.record.repeat_id = key.repeat_id;
  out.record.seed = key.seed_index;
  out.record.break_applied = break_applied;
  out.record.lr_used = regime.lr * 0.5;
  out.record.error = "nan_guard: " + failure;
  return out;
}

BackflowRecord run_repeat(const ExperimentContext& ctx, const Regime& regime, bool break_applied,
                          const RepeatKey& key) {
  return run_micro_experiment(ctx, regime, break_applied, key).record;
}

std::vector<NoncommutePoint> noncommute_curve(const ModelSpec& spec, const ParamVector& base,
                                              const PreparedInstrument& a,
                                              const PreparedInstrument& b, bool break_applied,
                                              const Matrix& probe, int k_max) {
  if (k_max < 1) throw std::invalid_argument("k_max must be >= 1");
  std::vector<NoncommutePoint> curve;
  for (int k = 1; k <= k_max; ++k) {
    auto run_order = [&](const PreparedInstrument& first, const PreparedInstrument& second) {
      Branch br = fresh_branch(base);
      run_steps(spec, br.params, br.state, first.inputs, first.labels, k, first.optimizer);
      if (break_applied) br.state = causal_break(br.state);
      run_steps(spec, br.params, br.state, second.inputs, second.labels, k, second.optimizer);
      return forward(spec, br.params, probe, "noncommute");
    };
    const ProbePredictions ab = run_order(a, b);
    const ProbePredictions ba = run_order(b, a);
    curve.push_back({k, div_avg(DivergenceKind::tv, ab, ba)});
  }
  return curve;
}

std::vector<NoncommutePoint> run_noncommute_curve(const ExperimentContext& ctx,
                                                  const Regime& regime, bool break_applied,
                                                  const Matrix& probe_subset,
                                                  const RepeatKey& key, int k_max) {
  if (probe_subset.rows() > 512) {
    throw std::invalid_argument("non-commute probe subset is limited to 512 examples");
  }
  NanGuardError last("unreachable", 0.0);
  for (double lr_scale : {1.0, 0.5}) {
    try {
      const RegimeInstruments inst = build_instruments(ctx, regime, key, lr_scale);
      return noncommute_curve(ctx.spec, ctx.base_params, inst.a, inst.b, break_applied,
                              probe_subset, k_max);
    } catch (const NanGuardError& e) {
      last = e;
    }
  }
  throw last;
}

}  // namespace backflow
