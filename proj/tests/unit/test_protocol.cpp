#include <doctest.h>

#include <cmath>

#include "backflow/protocol.hpp"
#include "backflow/rng.hpp"

using namespace backflow;

namespace {

struct Fixture {
  Dataset dataset;
  ModelSpec spec;
  ParamVector base;
  Matrix probe;
  MicroConfig micro;

  explicit Fixture(ModelSpec s = {ModelKind::mlp1, 8, 4, 8, Activation::tanh}, double spread = 2.0)
      : dataset(split_probe(make_synthetic(8, 4, 60, spread, 1), 40, 2)),
        spec(s),
        base(init_params(spec, 3)),
        probe(dataset.probe_features()) {
    micro.batch_size = 16;
  }

  ExperimentContext ctx() const { return {spec, base, dataset, probe, dataset.probe_id, micro}; }
};

Regime custom(AugKind a, AugKind ap, AugKind b, double mu, int k = 2, double overlap = 0.5) {
  return {"custom", k, 0.05, mu, a, ap, b, overlap, true};
}

bool same_divergences(const BackflowRecord& x, const BackflowRecord& y) {
  return x.d1 == y.d1 && x.d2 == y.d2 && x.delta == y.delta;
}

}  // namespace

TEST_SUITE("protocol") {
  TEST_CASE("presets") {
    const auto& p = regime_presets();
    REQUIRE(p.size() == 5);
    const Regime s = regime_preset("standard");
    CHECK(s.k == 3);
    CHECK(s.lr == 0.02);
    CHECK(s.momentum == 0.9);
    CHECK(s.aug_a == AugKind::weak);
    CHECK(s.aug_aprime == AugKind::color);
    CHECK(s.aug_b == AugKind::weak);
    CHECK(s.overlap == 0.5);
    CHECK(s.same_classes);
    const Regime rs = regime_preset("resonant_strong");
    CHECK(rs.k == 6);
    CHECK(rs.lr == 0.03);
    CHECK(rs.momentum == 0.99);
    CHECK(rs.aug_aprime == AugKind::blur);
    CHECK(rs.overlap == 1.0);
    CHECK(regime_preset("resonant_mid").momentum == 0.95);
    CHECK(regime_preset("resonant_mid").overlap == 0.75);
    const Regime o = regime_preset("orthogonal");
    CHECK(o.aug_b == AugKind::blur);
    CHECK(o.overlap == 0.0);
    CHECK_FALSE(o.same_classes);
    const Regime n = regime_preset("negative");
    CHECK(n.k == 1);
    CHECK(n.lr == 0.005);
    CHECK(n.momentum == 0.0);
    CHECK(n.aug_a == AugKind::none);
    CHECK_THROWS(regime_preset("resonant"));
  }

  TEST_CASE("placebo gives exactly zero") {
    const Fixture f;
    for (AugKind k : {AugKind::weak, AugKind::color, AugKind::blur}) {
      for (bool brk : {false, true}) {
        const auto r = run_repeat(f.ctx(), custom(k, k, AugKind::weak, 0.9), brk, {0, 1, 5});
        for (std::size_t i = 0; i < 3; ++i) {
          CHECK(r.d1[i] == 0.0);
          CHECK(r.d2[i] == 0.0);
          CHECK(r.delta[i] == 0.0);
        }
      }
    }
  }

  TEST_CASE("negative control is small") {
    const Fixture f;
    for (std::uint64_t rep = 0; rep < 8; ++rep) {
      const auto r = run_repeat(f.ctx(), regime_preset("negative"), false, {0, 0, rep});
      CHECK(std::abs(r.delta[0]) < 1e-3);
    }
  }

  TEST_CASE("record invariants") {
    const Fixture f;
    for (std::uint64_t rep = 0; rep < 4; ++rep) {
      const auto r = run_repeat(f.ctx(), regime_preset("resonant_strong"), false, {0, 0, rep});
      CHECK_FALSE(r.error);
      CHECK(r.repeat_id == rep);
      for (std::size_t i = 0; i < 3; ++i) {
        CHECK(std::abs(r.delta[i] - (r.d2[i] - r.d1[i])) <= 1e-12);
        CHECK(r.d1[i] >= 0.0);
        CHECK(r.d1[i] <= 1.0);
        CHECK(r.d2[i] >= 0.0);
        CHECK(r.d2[i] <= 1.0);
      }
      CHECK(r.momentum_alignment);
    }
  }

  TEST_CASE("harness matches a scripted two-step simulation") {
    // A linear model keeps the scripted simulation short.
    Fixture f({ModelKind::softmax_linear, 8, 4, 0, Activation::tanh});
    const Regime reg = custom(AugKind::color, AugKind::blur, AugKind::weak, 0.0, 1);
    const RepeatKey key{3, 1, 7};
    const auto r = run_repeat(f.ctx(), reg, false, key);

    const auto seed = [&](Stream s) { return derive_seed(3, 1, 7, s); };
    const auto plan = sample_batch_plan(f.dataset, 16, reg.overlap, true, seed(Stream::batch_plan));
    const Matrix xa = f.dataset.rows(plan.indices_a), xb = f.dataset.rows(plan.indices_b);
    const auto ya = f.dataset.labels_of(plan.indices_a), yb = f.dataset.labels_of(plan.indices_b);
    const Matrix a = apply_augmentation({AugKind::color, seed(Stream::aug_first), {}}, xa);
    const Matrix ap = apply_augmentation({AugKind::blur, seed(Stream::aug_first), {}}, xa);
    const Matrix b = apply_augmentation({AugKind::weak, seed(Stream::aug_second), {}}, xb);
    const auto sgd = [&](const Vector& theta, const Matrix& x, const std::vector<int>& y) {
      Vector g = loss_and_grad(f.spec, {theta}, x, y).grad + 1e-4 * theta;
      if (g.norm() > 1.0) g /= g.norm();
      return Vector(theta - 0.05 * g);
    };
    const Vector ta = sgd(f.base.values, a, ya), tap = sgd(f.base.values, ap, ya);
    const Vector tab = sgd(ta, b, yb), tapb = sgd(tap, b, yb);
    const auto pred = [&](const Vector& t) { return forward(f.spec, {t}, f.probe, "p"); };
    for (DivergenceKind k : kAllDivergences) {
      const double d1 = div_avg(k, pred(ta), pred(tap)), d2 = div_avg(k, pred(tab), pred(tapb));
      CHECK(std::abs(r.delta[div_index(k)] - (d2 - d1)) < 1e-12);
    }
  }

  TEST_CASE("swapping A and A' leaves the divergences unchanged") {
    const Fixture f;
    const auto x = run_repeat(f.ctx(), custom(AugKind::color, AugKind::blur, AugKind::weak, 0.9), false, {0, 0, 1});
    const auto y = run_repeat(f.ctx(), custom(AugKind::blur, AugKind::color, AugKind::weak, 0.9), false, {0, 0, 1});
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(std::abs(x.d1[i] - y.d1[i]) < 1e-15);
      CHECK(std::abs(x.d2[i] - y.d2[i]) < 1e-15);
    }
  }

  TEST_CASE("break makes the first B update momentum free") {
    const Fixture f;
    const Regime reg = custom(AugKind::color, AugKind::blur, AugKind::weak, 0.99, 3, 1.0);
    const auto out = run_micro_experiment(f.ctx(), reg, true, {0, 0, 2}, true);
    REQUIRE(out.endpoints);
    REQUIRE(out.first_b_update);

    const auto seed = [&](Stream s) { return derive_seed(0, 0, 2, s); };
    const auto plan = sample_batch_plan(f.dataset, 16, 1.0, true, seed(Stream::batch_plan));
    const Matrix b = apply_augmentation({AugKind::weak, seed(Stream::aug_second), {}},
                                        f.dataset.rows(plan.indices_b));
    ParamVector p = out.endpoints->theta_a;
    auto fresh = OptimizerState::zeros(p.size());
    step(p, fresh, loss_and_grad(f.spec, p, b, f.dataset.labels_of(plan.indices_b)).grad,
         {0.05, 0.0, 1e-4, 1.0});
    CHECK((p.values - out.endpoints->theta_a.values - *out.first_b_update).cwiseAbs().maxCoeff() <
          1e-15);

    const auto carried = run_micro_experiment(f.ctx(), reg, false, {0, 0, 2}, true);
    CHECK((*carried.first_b_update - *out.first_b_update).norm() > 1e-6);
    CHECK_FALSE(out.record.momentum_alignment);
  }

  TEST_CASE("mu = 0 collapses no-break onto break") {
    const Fixture f;
    for (std::uint64_t rep = 0; rep < 6; ++rep) {
      const Regime reg = custom(AugKind::weak, AugKind::color, AugKind::weak, 0.0, 3);
      const auto x = run_repeat(f.ctx(), reg, false, {0, 0, rep});
      const auto y = run_repeat(f.ctx(), reg, true, {0, 0, rep});
      CHECK(same_divergences(x, y));
    }
  }

  TEST_CASE("records are deterministic") {
    const Fixture f;
    const Regime reg = regime_preset("standard");
    const auto x = run_repeat(f.ctx(), reg, false, {4, 2, 9});
    const auto y = run_repeat(f.ctx(), reg, false, {4, 2, 9});
    CHECK(same_divergences(x, y));
    CHECK(x.momentum_alignment == y.momentum_alignment);
    const auto z = run_repeat(f.ctx(), reg, false, {4, 2, 10});
    CHECK_FALSE(same_divergences(x, z));
  }

  TEST_CASE("persistent NaN gives an error record") {
    Fixture f;
    f.dataset.features.setConstant(std::nan(""));
    const auto r = run_repeat(f.ctx(), regime_preset("standard"), false, {0, 0, 0});
    REQUIRE(r.error);
    CHECK(r.error->find("nan_guard") == 0);
    CHECK(r.lr_used == doctest::Approx(0.01));
  }

  TEST_CASE("non-commute curve with A = B is flat zero") {
    const Fixture f;
    const auto plan = sample_batch_plan(f.dataset, 16, 0.0, false, 5);
    const Instrument inst{plan.indices_a, {AugKind::weak, 3, {}}, 1, std::nullopt};
    const auto a = prepare_instrument(f.dataset, inst, {0.05, 0.9, 1e-4, 1.0});
    for (bool brk : {false, true}) {
      for (const auto& p : noncommute_curve(f.spec, f.base, a, a, brk, f.probe, 5)) {
        CHECK(p.tv == 0.0);
      }
    }
  }

  TEST_CASE("non-commutativity vanishes like eta squared") {
    const Fixture f({ModelKind::softmax_linear, 8, 4, 0, Activation::tanh});
    const auto plan = sample_batch_plan(f.dataset, 16, 0.0, false, 6);
    const auto curve_at = [&](double lr) {
      const OptimizerConfig cfg{lr, 0.0, 0.0, std::nullopt};
      const auto a = prepare_instrument(f.dataset, {plan.indices_a, {}, 1, std::nullopt}, cfg);
      const auto b = prepare_instrument(f.dataset, {plan.indices_b, {}, 1, std::nullopt}, cfg);
      return noncommute_curve(f.spec, f.base, a, b, false, f.probe, 3);
    };
    const auto big = curve_at(2e-3), small = curve_at(1e-3);
    for (std::size_t i = 0; i < big.size(); ++i) {
      CHECK(small[i].tv > 0.0);
      CHECK(big[i].tv / small[i].tv == doctest::Approx(4.0).epsilon(0.05));
    }
  }

  TEST_CASE("resonant curves grow with k") {
    const Fixture f({ModelKind::mlp1, 8, 4, 16, Activation::tanh}, 3.0);
    const Matrix subset = f.probe.topRows(32);
    int monotone = 0;
    const int runs = 10;
    for (int s = 0; s < runs; ++s) {
      const auto curve = run_noncommute_curve(f.ctx(), regime_preset("resonant_strong"), false,
                                              subset, {0, 0, static_cast<std::uint64_t>(s)}, 6);
      bool ok = true;
      for (std::size_t i = 1; i < curve.size(); ++i) ok = ok && curve[i].tv >= curve[i - 1].tv;
      monotone += ok;
    }
    CHECK(monotone >= 8);
  }

  TEST_CASE("non-commute probe subset is bounded") {
    const Fixture f;
    const Matrix big = Matrix::Zero(513, 8);
    CHECK_THROWS(run_noncommute_curve(f.ctx(), regime_preset("standard"), false, big, {}, 2));
  }

  TEST_CASE("regime validation") {
    Regime r = regime_preset("standard");
    r.momentum = 1.0;
    CHECK_THROWS(r.validate());
    r = regime_preset("standard");
    r.overlap = 1.5;
    CHECK_THROWS(r.validate());
    r = regime_preset("standard");
    r.k = 0;
    CHECK_THROWS(r.validate());
  }
}
