// SPDX-License-Identifier: Apache-2.0

#include "backflow/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "backflow/diagnostics.hpp"
#include "backflow/rng.hpp"

namespace backflow {

namespace {

using ojson = nlohmann::ordered_json;

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string cell_name(const CellKey& key) {
  return key.regime + (key.break_applied ? "_break" : "_nobreak") + "_s" +
         std::to_string(key.seed);
}

ojson divergence_map(const DivergenceValues& v) {
  ojson out = ojson::object();
  for (DivergenceKind kind : kAllDivergences) out[to_string(kind)] = v[div_index(kind)];
  return out;
}

ojson record_json(const CellKey& key, const BackflowRecord& r) {
  ojson j;
  j["schema_version"] = kSchemaVersion;
  j["type"] = "repeat";
  j["regime"] = key.regime;
  j["break_applied"] = r.break_applied;
  j["seed"] = r.seed;
  j["repeat_id"] = r.repeat_id;
  j["d1"] = divergence_map(r.d1);
  j["d2"] = divergence_map(r.d2);
  j["delta"] = divergence_map(r.delta);
  j["momentum_alignment"] = r.momentum_alignment ? ojson(*r.momentum_alignment) : ojson(nullptr);
  j["error"] = r.error ? ojson(*r.error) : ojson(nullptr);
  j["lr_used"] = r.lr_used;
  j["class_shortfall"] = r.class_shortfall;
  return j;
}

ojson header_json(const std::string& kind, const std::string& timestamp) {
  ojson h;
  h["schema_version"] = kSchemaVersion;
  h["type"] = "header";
  h["artifact"] = kind;
  h["timestamp"] = timestamp;
  return h;
}

const Regime& find_regime(const RunConfig& config, const std::string& name) {
  for (const auto& r : config.regimes) {
    if (r.name == name) return r;
  }
  throw std::invalid_argument("regime '" + name + "' is not part of the config");
}

std::vector<double> successful_deltas(const std::vector<BackflowRecord>& records,
                                      DivergenceKind kind) {
  std::vector<double> out;
  for (const auto& r : records) {
    if (!r.error) out.push_back(r.delta[div_index(kind)]);
  }
  return out;
}

struct MetricStats {
  BootstrapSummary boot;
  double sd = 0.0;
  TestResult tost, tost_scaled, one_sided, two_sided;
  double scaled_epsilon = 0.0;
};

MetricStats metric_stats(std::span<const double> x, const StatsSettings& s, std::uint64_t seed) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  MetricStats m;
  m.boot = {nan, nan, nan, x.size(), nan};
  m.one_sided.p_value = m.two_sided.p_value = m.tost.p_value = m.tost_scaled.p_value = nan;
  m.tost.verdict = m.tost_scaled.verdict = Verdict::not_null;
  if (x.empty()) return m;
  m.boot.mean = mean(x);
  if (x.size() < 3) return m;
  m.boot = bootstrap_mean_ci(x, s.bootstrap_resamples, 0.95, seed);
  m.sd = stddev(x);
  m.tost = tost_equivalence(x, s.tost_epsilon);
  m.scaled_epsilon = std::max(s.tost_epsilon, m.sd);
  m.tost_scaled = tost_equivalence(x, m.scaled_epsilon);
  m.one_sided = one_sample_t(x, Alternative::greater);
  m.two_sided = one_sample_t(x, Alternative::two_sided);
  return m;
}

// Cells are either per seed or pooled over seeds; `seed` is empty when pooled.
struct SummaryCell {
  std::string regime;
  bool break_applied = false;
  std::optional<std::uint64_t> seed;
  std::vector<const BackflowRecord*> records;
};

ojson cells_json(const RunConfig& config, const std::vector<SummaryCell>& cells) {
  ojson out = ojson::array();
  std::array<std::vector<double>, 3> p_one, p_two;
  std::vector<std::array<MetricStats, 3>> stats(cells.size());

  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& cell = cells[c];
    for (DivergenceKind kind : kAllDivergences) {
      std::vector<double> x;
      for (const auto* r : cell.records) {
        if (!r->error) x.push_back(r->delta[div_index(kind)]);
      }
      const std::string label = cell.regime + (cell.break_applied ? "/break" : "/no") + "/" +
                                (cell.seed ? std::to_string(*cell.seed) : "pooled") + "/" +
                                to_string(kind);
      const std::uint64_t boot_seed =
          derive_seed(config.global_seed, hash_label(label), 0, Stream::bootstrap);
      auto& m = stats[c][div_index(kind)];
      m = metric_stats(x, config.stats, boot_seed);
      p_one[div_index(kind)].push_back(std::isnan(m.one_sided.p_value) ? 1.0 : m.one_sided.p_value);
      p_two[div_index(kind)].push_back(std::isnan(m.two_sided.p_value) ? 1.0 : m.two_sided.p_value);
    }
  }
  std::array<BhResult, 3> bh_one, bh_two;
  for (DivergenceKind kind : kAllDivergences) {
    bh_one[div_index(kind)] = bh_fdr(p_one[div_index(kind)], config.stats.bh_q);
    bh_two[div_index(kind)] = bh_fdr(p_two[div_index(kind)], config.stats.bh_q);
  }

  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& cell = cells[c];
    const Regime& regime = find_regime(config, cell.regime);
    ojson j;
    j["regime"] = cell.regime;
    j["break_applied"] = cell.break_applied;
    j["seed"] = cell.seed ? ojson(*cell.seed) : ojson("pooled");
    std::size_t failed = 0;
    std::vector<double> alignment;
    for (const auto* r : cell.records) {
      if (r->error) ++failed;
      if (!r->error && r->momentum_alignment) alignment.push_back(*r->momentum_alignment);
    }
    j["n"] = cell.records.size() - failed;
    j["n_failed"] = failed;
    j["k"] = regime.k;
    j["lr"] = regime.lr;
    j["momentum"] = regime.momentum;
    j["overlap"] = regime.overlap;
    j["aug_b"] = to_string(regime.aug_b);
    j["a_mu"] = amplification_factor(regime.momentum, regime.k);
    j["mean_alignment"] = alignment.empty() ? ojson(nullptr) : ojson(mean(alignment));
    ojson metrics;
    for (DivergenceKind kind : kAllDivergences) {
      const std::size_t i = div_index(kind);
      const MetricStats& m = stats[c][i];
      ojson mj;
      mj["mean"] = m.boot.mean;
      mj["ci_low"] = m.boot.ci_low;
      mj["ci_high"] = m.boot.ci_high;
      mj["sd"] = m.sd;
      mj["tost"] = {{"epsilon", config.stats.tost_epsilon},
                    {"p_value", m.tost.p_value},
                    {"verdict", to_string(m.tost.verdict)}};
      mj["tost_noise_scaled"] = {{"epsilon", m.scaled_epsilon},
                                 {"p_value", m.tost_scaled.p_value},
                                 {"verdict", to_string(m.tost_scaled.verdict)}};
      mj["p_one_sided"] = m.one_sided.p_value;
      mj["p_two_sided"] = m.two_sided.p_value;
      mj["q_one_sided"] = bh_one[i].q_values[c];
      mj["q_two_sided"] = bh_two[i].q_values[c];
      mj["bh_significant_two_sided"] = static_cast<bool>(bh_two[i].significant[c]);
      metrics[to_string(kind)] = std::move(mj);
    }
    j["metrics"] = std::move(metrics);
    out.push_back(std::move(j));
  }
  return out;
}

ojson dose_json(const RunConfig& config, const std::vector<CellResult>& cells) {
  std::vector<DoseRecord> records;
  for (const auto& cell : cells) {
    if (cell.key.break_applied) continue;
    const Regime& r = find_regime(config, cell.key.regime);
    const auto x = successful_deltas(cell.records, DivergenceKind::tv);
    if (x.empty()) continue;
    records.push_back({r.name, std::to_string(cell.key.seed), r.k, r.momentum, r.overlap, r.aug_b,
                       mean(x)});
  }
  const DoseResponseReport rep = dose_response(
      records, "resonant_strong", "resonant_mid",
      derive_seed(config.global_seed, hash_label("dose_response"), 0, Stream::bootstrap));
  ojson j;
  j["n"] = rep.n;
  if (rep.regression) {
    const auto& o = *rep.regression;
    j["regression"] = {{"alpha", o.alpha},
                       {"beta", o.beta},
                       {"gamma", o.gamma},
                       {"std_errors", o.std_errors},
                       {"p_values", o.p_values},
                       {"r_squared", o.r_squared}};
  } else {
    j["regression"] = nullptr;
    j["regression_error"] = rep.regression_error;
  }
  if (rep.paired) {
    const auto& p = *rep.paired;
    j["paired"] = {{"pairs", p.pairs},
                   {"increases", p.increases},
                   {"differences", p.differences},
                   {"mean_lift", p.lift.mean},
                   {"ci_low", p.lift.ci_low},
                   {"ci_high", p.lift.ci_high},
                   {"t", p.test.statistic},
                   {"p_value", p.test.p_value}};
  } else {
    j["paired"] = nullptr;
    j["paired_error"] = rep.paired_error;
  }
  return j;
}

ojson config_json(const RunConfig& c) {
  ojson j;
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"dim", c.dataset.dim},
                  {"classes", c.dataset.classes},
                  {"per_class", c.dataset.per_class},
                  {"spread", c.dataset.spread},
                  {"seed", c.dataset.seed},
                  {"path", c.dataset.path.string()},
                  {"probe_size", c.dataset.probe_size},
                  {"probe_seed", c.dataset.probe_seed}};
  j["model"] = {{"kind", to_string(c.model.kind)},
                {"hidden_dim", c.model.hidden_dim},
                {"activation", to_string(c.model.activation)}};
  j["base_stage"] = to_string(c.base_stage);
  j["micro"] = {{"batch_size", c.micro.batch_size},
                {"weight_decay", c.micro.weight_decay},
                {"clip_norm", c.micro.clip_norm ? ojson(*c.micro.clip_norm) : ojson(nullptr)}};
  ojson regimes = ojson::array();
  for (const auto& r : c.regimes) {
    regimes.push_back({{"name", r.name},
                       {"k", r.k},
                       {"lr", r.lr},
                       {"momentum", r.momentum},
                       {"aug_a", to_string(r.aug_a)},
                       {"aug_aprime", to_string(r.aug_aprime)},
                       {"aug_b", to_string(r.aug_b)},
                       {"overlap", r.overlap},
                       {"same_classes", r.same_classes}});
  }
  j["regimes"] = std::move(regimes);
  j["global_seed"] = c.global_seed;
  j["seeds"] = c.seeds;
  j["repeats"] = c.repeats;
  j["early_stop"] = {{"floor", c.early_stop.floor},
                     {"stride", c.early_stop.stride},
                     {"half_width", c.early_stop.half_width}};
  return j;
}

double curve_slope(const std::vector<NoncommutePoint>& curve) {
  if (curve.size() < 2) return 0.0;
  double mk = 0.0, mt = 0.0;
  for (const auto& p : curve) {
    mk += p.k;
    mt += p.tv;
  }
  mk /= curve.size();
  mt /= curve.size();
  double sxy = 0.0, sxx = 0.0;
  for (const auto& p : curve) {
    sxy += (p.k - mk) * (p.tv - mt);
    sxx += (p.k - mk) * (p.k - mk);
  }
  return sxy / sxx;
}

ojson cell_diagnostics(const ExperimentContext& ctx, const RunConfig& config,
                       const Regime& regime, const CellKey& key) {
  const RepeatKey rk{config.global_seed, key.seed, 0};
  const Eigen::Index rows = std::min<Eigen::Index>(
      ctx.probe_inputs.rows(), static_cast<Eigen::Index>(config.diagnostics.probe_subset));
  const Matrix subset = ctx.probe_inputs.topRows(rows);

  ojson j;
  j["schema_version"] = kSchemaVersion;
  j["type"] = "diagnostics";
  j["regime"] = key.regime;
  j["break_applied"] = key.break_applied;
  j["seed"] = key.seed;
  try {
    const auto curve =
        run_noncommute_curve(ctx, regime, key.break_applied, subset, rk, config.diagnostics.k_max);
    ojson c = ojson::array();
    for (const auto& p : curve) c.push_back({{"k", p.k}, {"tv", p.tv}});
    j["noncommute"] = std::move(c);
    j["noncommute_slope"] = curve_slope(curve);
  } catch (const NanGuardError& e) {
    j["noncommute"] = nullptr;
    j["noncommute_error"] = e.what();
  }

  const MicroOutcome out = run_micro_experiment(ctx, regime, key.break_applied, rk, true);
  if (!out.endpoints) {
    j["error"] = out.record.error.value_or("no endpoints");
    return j;
  }
  const BranchEndpoints& e = *out.endpoints;
  const auto feats = [&](const ParamVector& p) { return penultimate_features(ctx.spec, p, subset); };
  j["cka"] = {{"a_vs_aprime", linear_cka(feats(e.theta_a), feats(e.theta_aprime))},
              {"ab_vs_aprimeb", linear_cka(feats(e.theta_ab), feats(e.theta_aprime_b))}};

  const std::vector<std::string> labels = {"base", "A", "A'", "AB", "A'B"};
  std::vector<Matrix> preds;
  for (const ParamVector* p :
       {&ctx.base_params, &e.theta_a, &e.theta_aprime, &e.theta_ab, &e.theta_aprime_b}) {
    preds.push_back(forward(ctx.spec, *p, subset).probs);
  }
  const TrajectoryProjection proj = pca_project(preds);
  ojson points = ojson::array();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    points.push_back({{"label", labels[i]},
                      {"pc1", proj.points(static_cast<Eigen::Index>(i), 0)},
                      {"pc2", proj.points(static_cast<Eigen::Index>(i), 1)}});
  }
  j["trajectory"] = {{"points", std::move(points)},
                     {"explained_variance", proj.explained_variance}};
  return j;
}

void write_lines(const std::filesystem::path& path, const std::vector<ojson>& lines) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l.dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

bool EarlyStopRule::is_checkpoint(std::size_t completed) const {
  return completed >= floor && (completed - floor) % stride == 0;
}

bool EarlyStopRule::should_stop(std::span<const double> values) const {
  if (!is_checkpoint(values.size())) return false;
  std::vector<double> ok;
  for (double v : values) {
    if (!std::isnan(v)) ok.push_back(v);
  }
  return ok.size() >= 2 && normal_half_width(ok) <= half_width;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

std::size_t run_repeats_with_early_stop(const EarlyStopRule& rule, std::size_t max_repeats,
                                        std::size_t workers,
                                        const std::function<double(std::size_t)>& produce) {
  std::vector<double> values;
  values.reserve(max_repeats);
  std::size_t target = std::min(rule.floor, max_repeats);
  while (values.size() < max_repeats) {
    const std::size_t start = values.size();
    values.resize(target);
    parallel_for(target - start, workers, [&](std::size_t i) { values[start + i] = produce(start + i); });
    if (rule.should_stop(values)) break;
    target = std::min(target + rule.stride, max_repeats);
  }
  return values.size();
}

Dataset prepare_dataset(const RunConfig& config) {
  const DatasetSource& src = config.dataset;
  Dataset ds;
  if (src.kind == "synthetic") {
    ds = make_synthetic(src.dim, src.classes, src.per_class, src.spread, src.seed);
  } else if (src.kind == "csv") {
    ds = load_table(src.path, TableFormat::csv_labeled);
  } else {
    ds = load_table(src.path, TableFormat::idx_pair, src.labels_path);
  }
  return split_probe(std::move(ds), src.probe_size, src.probe_seed);
}

ModelSpec resolve_model(const RunConfig& config, const Dataset& dataset) {
  ModelSpec spec = config.model;
  spec.input_dim = dataset.dim();
  spec.num_classes = dataset.num_classes;
  spec.validate();
  return spec;
}

ParamVector make_base_params(const RunConfig& config, const ModelSpec& spec,
                             const Dataset& dataset, std::uint64_t seed_index) {
  ParamVector params = init_params(spec, derive_seed(config.global_seed, seed_index, 0, Stream::init));
  if (config.base_stage == BaseStage::init || config.base_training.passes == 0) return params;

  const BaseTraining& bt = config.base_training;
  Rng rng(derive_seed(config.global_seed, seed_index, 0, Stream::base_training));
  const std::size_t batch = std::min(bt.batch_size, dataset.train.size());
  const std::size_t per_pass = dataset.train.size() / batch;
  const std::size_t total = per_pass * bt.passes;
  OptimizerState state = OptimizerState::zeros(params.size());
  AugmentationParams aug_params = config.micro.aug_params;
  if (config.dataset.image_mode) aug_params.image = dataset.image_shape;

  std::size_t t = 0;
  std::vector<std::size_t> order = dataset.train;
  for (std::size_t pass = 0; pass < bt.passes; ++pass) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < per_pass; ++b, ++t) {
      const std::span<const std::size_t> idx(order.data() + b * batch, batch);
      const AugmentationKernel aug{AugKind::weak, rng(), aug_params};
      const Matrix x = apply_augmentation(aug, dataset.rows(idx));
      const std::vector<int> y = dataset.labels_of(idx);
      const double lr = 0.5 * bt.lr * (1.0 + std::cos(std::numbers::pi * t / total));
      const OptimizerConfig cfg{lr, bt.momentum, bt.weight_decay, config.micro.clip_norm};
      const LossAndGrad lg = loss_and_grad(spec, params, x, y);
      step(params, state, lg.grad, cfg);
    }
  }
  return params;
}

std::string build_summary_json(const RunConfig& config, const std::vector<CellResult>& cells,
                               const std::string& timestamp) {
  ojson root;
  root["header"] = {{"schema_version", kSchemaVersion}, {"timestamp", timestamp}};
  root["config"] = config_json(config);

  std::vector<SummaryCell> pooled, per_seed;
  for (const auto& regime : config.regimes) {
    for (bool flag : config.break_flags) {
      SummaryCell p{regime.name, flag, std::nullopt, {}};
      for (const auto& cell : cells) {
        if (cell.key.regime != regime.name || cell.key.break_applied != flag) continue;
        SummaryCell s{regime.name, flag, cell.key.seed, {}};
        for (const auto& r : cell.records) {
          p.records.push_back(&r);
          s.records.push_back(&r);
        }
        per_seed.push_back(std::move(s));
      }
      if (!p.records.empty()) pooled.push_back(std::move(p));
    }
  }
  root["cells"] = cells_json(config, pooled);
  root["seed_cells"] = cells_json(config, per_seed);
  root["dose_response"] = dose_json(config, cells);
  std::size_t failures = 0;
  for (const auto& cell : cells) {
    for (const auto& r : cell.records) failures += r.error ? 1 : 0;
  }
  root["persistent_failures"] = failures;
  return root.dump(2) + "\n";
}

SweepResult run_sweep(const RunConfig& config, bool write_artifacts) {
  if (config.regimes.empty()) throw ConfigError("regimes: must not be empty");
  for (const auto& r : config.regimes) r.validate();

  const Dataset dataset = prepare_dataset(config);
  const ModelSpec spec = resolve_model(config, dataset);
  const Matrix probe = dataset.probe_features();
  MicroConfig micro = config.micro;
  if (config.dataset.image_mode) micro.aug_params.image = dataset.image_shape;
  const std::size_t workers = config.workers ? config.workers : default_workers();
  const EarlyStopRule rule{config.early_stop.floor, config.early_stop.stride,
                           config.early_stop.half_width};
  const std::string timestamp = utc_timestamp();

  SweepResult result;
  result.output_dir = config.output_dir;
  if (write_artifacts) std::filesystem::create_directories(config.output_dir / "records");
  std::vector<ojson> diagnostics{header_json("diagnostics", timestamp)};

  for (std::uint64_t seed : config.seeds) {
    const ParamVector base = make_base_params(config, spec, dataset, seed);
    const ExperimentContext ctx{spec, base, dataset, probe, dataset.probe_id, micro};
    for (const auto& regime : config.regimes) {
      for (bool flag : config.break_flags) {
        CellResult cell{{regime.name, flag, seed}, std::vector<BackflowRecord>(config.repeats)};
        const std::size_t n = run_repeats_with_early_stop(
            rule, config.repeats, workers, [&](std::size_t i) {
              BackflowRecord r = run_repeat(ctx, regime, flag, {config.global_seed, seed, i});
              const double v = r.error ? std::numeric_limits<double>::quiet_NaN()
                                       : r.delta[div_index(DivergenceKind::tv)];
              cell.records[i] = std::move(r);
              return v;
            });
        cell.records.resize(n);
        for (const auto& r : cell.records) result.persistent_failures += r.error ? 1 : 0;

        if (write_artifacts) {
          std::vector<ojson> lines{header_json("repeats", timestamp)};
          lines.front()["regime"] = regime.name;
          lines.front()["break_applied"] = flag;
          lines.front()["seed"] = seed;
          for (const auto& r : cell.records) lines.push_back(record_json(cell.key, r));
          write_lines(config.output_dir / "records" / (cell_name(cell.key) + ".jsonl"), lines);
          if (config.diagnostics.enabled) {
            diagnostics.push_back(cell_diagnostics(ctx, config, regime, cell.key));
          }
        }
        result.cells.push_back(std::move(cell));
      }
    }
  }

  if (write_artifacts) {
    if (config.diagnostics.enabled) write_lines(config.output_dir / "diagnostics.jsonl", diagnostics);
    std::ofstream out(config.output_dir / "summary.json");
    if (!out) throw std::runtime_error("cannot write summary.json");
    out << build_summary_json(config, result.cells, timestamp);
  }
  return result;
}

}  // namespace backflow
