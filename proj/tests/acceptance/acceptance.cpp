// Acceptance suite: one PASS/FAIL line per criterion, details indented below.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "backflow/comb_oracle.hpp"
#include "backflow/diagnostics.hpp"
#include "backflow/divergences.hpp"
#include "backflow/optimizer.hpp"
#include "backflow/rng.hpp"
#include "backflow/stats.hpp"
#include "backflow/sweep.hpp"

using namespace backflow;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& title, bool pass, const std::vector<std::string>& details) {
  std::printf("[%s] %2d %s\n", pass ? "PASS" : "FAIL", id, title.c_str());
  for (const auto& d : details) std::printf("       %s\n", d.c_str());
  std::fflush(stdout);
  failures += pass ? 0 : 1;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<double> column(const std::vector<BackflowRecord>& recs, DivergenceKind k) {
  std::vector<double> x;
  for (const auto& r : recs) {
    if (!r.error) x.push_back(r.delta[div_index(k)]);
  }
  return x;
}

// Shared experimental setting: the default synthetic dataset and model.
struct Setting {
  RunConfig config;
  Dataset dataset;
  ModelSpec spec;
  Matrix probe;
  std::vector<ParamVector> bases;

  Setting() : dataset(prepare_dataset(config)), spec(resolve_model(config, dataset)),
              probe(dataset.probe_features()) {
    for (std::uint64_t s : config.seeds) bases.push_back(make_base_params(config, spec, dataset, s));
  }

  ExperimentContext ctx(std::size_t seed) const {
    return {spec, bases.at(seed), dataset, probe, dataset.probe_id, config.micro};
  }

  std::vector<BackflowRecord> repeats(const Regime& regime, bool brk, std::size_t seed,
                                      std::size_t n) const {
    std::vector<BackflowRecord> out(n);
    parallel_for(n, default_workers(), [&](std::size_t i) {
      out[i] = run_repeat(ctx(seed), regime, brk, {config.global_seed, seed, i});
    });
    return out;
  }
};

void theorem_suite() {
  const auto t0 = Clock::now();
  double worst_omc = 0.0, worst_break = 0.0;
  std::size_t omc_checked = 0, pairs_checked = 0;
  bool preconditions = true;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto a = comb::random_omc_comb(derive_seed(2024, s, 0, Stream::synthetic));
    const auto ra = comb::verify_no_backflow(a.comb, a.pairs, a.b, a.lambda_b, kAllDivergences);
    const auto b = comb::random_break_comb(derive_seed(2024, s, 1, Stream::synthetic));
    const auto rb = comb::verify_no_backflow(b.comb, b.pairs, b.b, b.lambda_b, kAllDivergences, true);
    preconditions = preconditions && ra.omc_satisfied && rb.omc_satisfied;
    worst_omc = std::max(worst_omc, ra.max_delta);
    worst_break = std::max(worst_break, rb.max_delta);
    omc_checked += a.pairs.size() == 10;
    pairs_checked += a.pairs.size() * kAllDivergences.size();
  }
  const auto demo = comb::memoryful_demo_comb();
  const std::array<DivergenceKind, 1> tv = {DivergenceKind::tv};
  const double before = comb::search_backflow_witness(demo.comb, demo.pairs, demo.b, tv).delta;
  const double after =
      comb::verify_no_backflow(demo.comb, demo.pairs, demo.b, demo.lambda_b, kAllDivergences, true)
          .max_delta;
  const double secs = seconds_since(t0);
  const bool pass = preconditions && omc_checked == 100 && worst_omc <= 1e-10 &&
                    worst_break <= 1e-10 && before > 0.05 && after <= 1e-10 && secs < 10.0;
  report(1, "theorem suite (OMC, break+sufficiency, memoryful witness)", pass,
         {fmt("OMC combs: 100 x 10 pairs x 3 kinds (%zu checks), worst delta %.2e", pairs_checked, worst_omc),
          fmt("break+sufficiency combs: 100, worst delta %.2e", worst_break),
          fmt("memoryful demo: delta_TV %.4f before break, %.2e after", before, after),
          fmt("runtime %.3f s", secs)});
}

void data_processing() {
  std::mt19937_64 rng(77);
  std::exponential_distribution<double> e(1.0);
  auto simplex = [&](std::size_t n) {
    std::vector<double> p(n);
    double s = 0.0;
    for (auto& v : p) s += (v = e(rng));
    for (auto& v : p) v /= s;
    return p;
  };
  std::vector<std::string> details;
  bool pass = true;
  for (DivergenceKind k : kAllDivergences) {
    int bad = 0;
    double worst = -1.0;
    for (int t = 0; t < 500; ++t) {
      const std::size_t n = 2 + rng() % 7, m = 2 + rng() % 7;
      const auto p = simplex(n), q = simplex(n);
      std::vector<double> lp(m, 0.0), lq(m, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const auto col = simplex(m);
        for (std::size_t i = 0; i < m; ++i) lp[i] += col[i] * p[j], lq[i] += col[i] * q[j];
      }
      const double gap = div_row(k, lp, lq) - div_row(k, p, q);
      worst = std::max(worst, gap);
      bad += gap > 1e-12;
    }
    pass = pass && bad == 0;
    details.push_back(fmt("%-9s 500 draws, violations %d, max D(Lp,Lq)-D(p,q) = %.2e",
                          to_string(k).c_str(), bad, worst));
  }
  report(2, "data-processing inequality", pass, details);
}

void gradient_check() {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n;
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    const std::size_t d = 2 + rng() % 10, classes = 2 + rng() % 6, h = 2 + rng() % 12;
    const ModelSpec spec = c % 3 == 0   ? ModelSpec{ModelKind::softmax_linear, d, classes, 0, Activation::tanh}
                           : c % 3 == 1 ? ModelSpec{ModelKind::mlp1, d, classes, h, Activation::tanh}
                                        : ModelSpec{ModelKind::mlp1, d, classes, h, Activation::relu};
    ParamVector p = init_params(spec, rng());
    for (Eigen::Index i = 0; i < p.values.size(); ++i) p.values[i] += 0.1 * n(rng);
    const std::size_t rows = 1 + rng() % 8;
    Matrix x(rows, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    std::vector<int> y(rows);
    for (auto& v : y) v = static_cast<int>(rng() % classes);
    const Vector g = loss_and_grad(spec, p, x, y).grad;
    Vector fd(g.size());
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      ParamVector up = p, down = p;
      up.values[i] += 1e-5;
      down.values[i] -= 1e-5;
      fd[i] = (loss_and_grad(spec, up, x, y).loss - loss_and_grad(spec, down, x, y).loss) / 2e-5;
    }
    worst = std::max(worst, (g - fd).norm() / std::max({g.norm(), fd.norm(), 1e-12}));
  }
  report(3, "gradient correctness vs central differences", worst <= 1e-4,
         {fmt("100 configurations (linear, mlp1 tanh, mlp1 relu), worst relative error %.2e", worst)});
}

void placebo(const Setting& s) {
  Regime r = regime_preset("resonant_strong");
  r.name = "placebo";
  r.aug_aprime = r.aug_a;
  bool exact = true;
  std::vector<std::string> details;
  for (bool brk : {false, true}) {
    const auto recs = s.repeats(r, brk, 0, 64);
    for (const auto& rec : recs) {
      for (std::size_t i = 0; i < 3; ++i) exact = exact && rec.delta[i] == 0.0 && rec.d1[i] == 0.0;
    }
    const auto ci = bootstrap_mean_ci(column(recs, DivergenceKind::tv), 2000, 0.95, 1);
    exact = exact && ci.ci_low == 0.0 && ci.ci_high == 0.0;
    details.push_back(fmt("%-8s 64 repeats, CI = [%g, %g]", brk ? "break" : "no break", ci.ci_low, ci.ci_high));
  }
  report(4, "placebo nullity (A = A')", exact, details);
}

void mu_zero(const Setting& s) {
  Regime r = regime_preset("resonant_strong");
  r.momentum = 0.0;
  const auto a = s.repeats(r, false, 0, 64), b = s.repeats(r, true, 0, 64);
  std::size_t identical = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    identical += a[i].d1 == b[i].d1 && a[i].d2 == b[i].d2 && a[i].delta == b[i].delta;
  }
  report(5, "mu = 0 collapse", identical == a.size(),
         {fmt("%zu of %zu repeat pairs bit-identical in d1, d2 and delta", identical, a.size())});
}

struct Criterion6 {
  std::vector<BackflowRecord> no_break, with_break;
};

Criterion6 positive_backflow(const Setting& s) {
  const Regime r = regime_preset("resonant_strong");
  Criterion6 out;
  auto t0 = Clock::now();
  out.no_break = s.repeats(r, false, 0, 128);
  const double t_no = seconds_since(t0);
  t0 = Clock::now();
  out.with_break = s.repeats(r, true, 0, 128);
  const double t_br = seconds_since(t0);
  const auto x = column(out.no_break, DivergenceKind::tv), y = column(out.with_break, DivergenceKind::tv);
  const auto ci = bootstrap_mean_ci(x, 2000, 0.95, 11);
  const auto cb = bootstrap_mean_ci(y, 2000, 0.95, 12);
  const bool pass = x.size() >= 128 && ci.ci_low > 0.0 && cb.mean < ci.mean && t_no < 300 && t_br < 300;
  report(6, "positive back-flow without break, attenuated by the break", pass,
         {fmt("resonant_strong, seed 0, %zu repeats per condition", x.size()),
          fmt("no break: mean dTV %.5f, 95%% CI [%.5f, %.5f]  (%.1f s)", ci.mean, ci.ci_low, ci.ci_high, t_no),
          fmt("break:    mean dTV %.5f, 95%% CI [%.5f, %.5f]  (%.1f s)", cb.mean, cb.ci_low, cb.ci_high, t_br)});
  return out;
}

void dose(const Setting& s) {
  std::vector<DoseRecord> recs;
  for (const char* name : {"resonant_strong", "resonant_mid"}) {
    const Regime r = regime_preset(name);
    for (std::size_t seed = 0; seed < s.config.seeds.size(); ++seed) {
      const auto x = column(s.repeats(r, false, seed, 64), DivergenceKind::tv);
      recs.push_back({r.name, std::to_string(seed), r.k, r.momentum, r.overlap, r.aug_b, mean(x)});
    }
  }
  const auto rep = dose_response(recs);
  bool pass = rep.paired.has_value();
  std::vector<std::string> details;
  if (rep.paired) {
    const auto& p = *rep.paired;
    pass = p.pairs >= 5 && p.lift.mean > 0.0 && p.test.p_value < 0.05;
    details.push_back(fmt("k = 6, %zu seeds x 64 repeats per regime, no break", p.pairs));
    details.push_back(fmt("mean lift (strong - mid) %.5f, %zu/%zu pairs increase, paired t = %.2f, p = %.2e",
                          p.lift.mean, p.increases, p.pairs, p.test.statistic, p.test.p_value));
  } else {
    details.push_back("paired comparison failed: " + rep.paired_error);
  }
  report(7, "dose-response direction (resonant_strong vs resonant_mid)", pass, details);
}

void negative_control(const Setting& s) {
  const Regime r = regime_preset("negative");
  bool pass = true;
  std::vector<std::string> details;
  for (bool brk : {false, true}) {
    std::vector<double> x;
    for (std::size_t seed = 0; seed < s.config.seeds.size(); ++seed) {
      const auto c = column(s.repeats(r, brk, seed, 64), DivergenceKind::tv);
      x.insert(x.end(), c.begin(), c.end());
    }
    const double m = mean(x), sd = stddev(x);
    const auto fixed = tost_equivalence(x, 1e-3);
    const double scaled_eps = std::max(1e-3, sd);
    const auto scaled = tost_equivalence(x, scaled_eps);
    pass = pass && std::abs(m) < 5e-3 && fixed.verdict == Verdict::practically_null;
    details.push_back(fmt("%-8s n=%zu mean dTV %.3e sd %.3e | TOST eps=1e-3: %s (p=%.2e) | "
                          "TOST eps=%.2e (noise-scaled): %s",
                          brk ? "break" : "no break", x.size(), m, sd, to_string(fixed.verdict).c_str(),
                          fixed.p_value, scaled_eps, to_string(scaled.verdict).c_str()));
  }
  report(8, "negative control", pass, details);
}

void early_stop() {
  const EarlyStopRule rule;
  const std::size_t zero = run_repeats_with_early_stop(rule, 1024, 2, [](std::size_t) { return 0.0; });
  std::size_t noisy_min = 1024;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const std::size_t n = run_repeats_with_early_stop(rule, 512, 2, [&](std::size_t i) {
      Rng rng(derive_seed(trial, 0, i, Stream::diagnostics));
      return std::normal_distribution<double>(0.0, 0.01)(rng);
    });
    noisy_min = std::min(noisy_min, n);
  }
  report(9, "early-stop discipline", zero == 64 && noisy_min >= 128,
         {fmt("zero-variance injector stopped after %zu repeats", zero),
          fmt("sigma = 0.01 injector, 20 trials capped at 512: earliest stop %zu", noisy_min)});
}

void stats_fixtures() {
  std::vector<std::string> details;
  bool pass = true;

  std::mt19937_64 rng(2718);
  std::bernoulli_distribution coin(0.5);
  int covered = 0;
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> x(1000);
    for (auto& v : x) v = coin(rng) ? 1.0 : 0.0;
    const auto ci = bootstrap_mean_ci(x, 2000, 0.95, static_cast<std::uint64_t>(rep));
    covered += ci.ci_low <= 0.5 && 0.5 <= ci.ci_high;
  }
  pass = pass && covered >= 186;
  details.push_back(fmt("bootstrap coverage %d/200 = %.1f%% (need >= 93%%)", covered, covered / 2.0));

  std::normal_distribution<double> tiny(0.0, 1e-4);
  int nulls = 0;
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> x(128);
    for (auto& v : x) v = tiny(rng);
    nulls += tost_equivalence(x, 1e-3).verdict == Verdict::practically_null;
  }
  const bool degenerate = tost_equivalence(std::vector<double>(8, 0.0)).verdict == Verdict::practically_null &&
                          tost_equivalence(std::vector<double>(8, 0.01)).verdict == Verdict::not_null;
  pass = pass && nulls >= 190 && degenerate;
  details.push_back(fmt("TOST: N(0,1e-4) n=128 practically null in %d/200; degenerate cases %s", nulls,
                        degenerate ? "ok" : "wrong"));

  // Hand step-up: sorted p against k q / m.
  const std::vector<double> p = {0.01, 0.02, 0.04, 0.2};
  std::size_t cutoff = 0;
  for (std::size_t k = 1; k <= p.size(); ++k) {
    if (p[k - 1] <= static_cast<double>(k) * 0.05 / 4.0) cutoff = k;
  }
  const auto bh = bh_fdr(p, 0.05);
  bool bh_ok = true;
  for (std::size_t i = 0; i < p.size(); ++i) bh_ok = bh_ok && bh.significant[i] == (i < cutoff);
  pass = pass && bh_ok;
  details.push_back(fmt("BH on {0.01, 0.02, 0.04, 0.2}: hand step-up flags %zu, implementation %s", cutoff,
                        bh_ok ? "agrees" : "disagrees"));

  std::ifstream in(std::string(BACKFLOW_FIXTURES) + "/stats_reference.json");
  const auto ref = nlohmann::json::parse(in);
  const auto x = ref["x"].get<std::vector<double>>(), y = ref["y"].get<std::vector<double>>();
  const auto c = correlations(x, y);
  const auto pt = paired_t(y, x);
  const double corr_err = std::max({std::abs(c.pearson_r - ref["pearson_r"].get<double>()),
                                    std::abs(c.pearson_p - ref["pearson_p"].get<double>()),
                                    std::abs(c.spearman_rho - ref["spearman_rho"].get<double>()),
                                    std::abs(c.spearman_p - ref["spearman_p"].get<double>()),
                                    std::abs(pt.statistic - ref["paired_t"].get<double>()),
                                    std::abs(pt.p_value - ref["paired_p"].get<double>())});
  pass = pass && corr_err < 1e-9;
  details.push_back(fmt("correlations / paired t vs reference fixture: max abs error %.1e", corr_err));

  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.2);
  const std::size_t n = 30;
  std::vector<double> a(n), rho(n), d(n);
  Eigen::MatrixXd X(n, 3);
  Eigen::VectorXd Y(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = 1 + 5 * u(rng);
    rho[i] = u(rng);
    d[i] = 0.1 + 0.5 * a[i] - 0.3 * rho[i] + noise(rng);
    X.row(static_cast<Eigen::Index>(i)) << 1.0, a[i], rho[i];
    Y(static_cast<Eigen::Index>(i)) = d[i];
  }
  const Eigen::Vector3d beta = (X.transpose() * X).ldlt().solve(X.transpose() * Y);
  const auto ols = ols2(d, a, rho);
  const double ols_err = std::max({std::abs(ols.alpha - beta(0)), std::abs(ols.beta - beta(1)),
                                   std::abs(ols.gamma - beta(2))});
  pass = pass && ols_err < 1e-9;
  details.push_back(fmt("OLS vs normal equations: max abs coefficient error %.1e", ols_err));
  report(10, "statistics fixtures", pass, details);
}

void amplification() {
  const double a95 = amplification_factor(0.95, 6), a99 = amplification_factor(0.99, 6);
  const auto two_dp = [](double v) { return std::round(v * 100.0) / 100.0; };
  const bool ok95 = two_dp(a95) == 5.29, ok99 = two_dp(a99) == 5.90;
  report(11, "amplification factor vs quoted values", ok95 && ok99,
         {fmt("A(0.95, 6) = %.6f -> %.2f, quoted 5.29: %s", a95, two_dp(a95), ok95 ? "match" : "mismatch"),
          fmt("A(0.99, 6) = %.6f -> %.2f, quoted 5.90: %s", a99, two_dp(a99), ok99 ? "match" : "mismatch"),
          fmt("A(0.90, 3) = %.6f", amplification_factor(0.9, 3)),
          "(1 - mu^k) / (1 - mu) with k = 6 cannot produce both quoted values"});
}

void metric_agreement(const Criterion6& c6) {
  bool pass = true;
  std::vector<std::string> details;
  for (const auto* recs : {&c6.no_break, &c6.with_break}) {
    std::array<double, 3> m{};
    for (DivergenceKind k : kAllDivergences) m[div_index(k)] = mean(column(*recs, k));
    const bool agree = (m[0] > 0) == (m[1] > 0) && (m[1] > 0) == (m[2] > 0) && m[0] != 0.0;
    pass = pass && agree;
    details.push_back(fmt("%-8s TV %+.5f  JS %+.5f  Hellinger %+.5f  -> %s",
                          recs == &c6.no_break ? "no break" : "break", m[0], m[1], m[2],
                          agree ? "signs agree" : "signs differ"));
  }
  report(12, "metric agreement across TV / JS / Hellinger", pass, details);
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  theorem_suite();
  data_processing();
  gradient_check();
  const Setting setting;
  placebo(setting);
  mu_zero(setting);
  const Criterion6 c6 = positive_backflow(setting);
  dose(setting);
  negative_control(setting);
  early_stop();
  stats_fixtures();
  amplification();
  metric_agreement(c6);
  std::printf("%d of 12 criteria failed (%.1f s)\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
