#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "backflow/diagnostics.hpp"
#include "backflow/optimizer.hpp"

using namespace backflow;

TEST_SUITE("diagnostics") {
  TEST_CASE("cosine") {
    Vector u(3), v(3);
    u << 1, 2, 3;
    CHECK(cosine(u, u).value == doctest::Approx(1.0));
    CHECK(cosine(u, -u).value == doctest::Approx(-1.0));
    v << 0, 0, 0;
    CHECK(cosine(u, v).degenerate);
    Vector e1 = Vector::Unit(3, 0), e2 = Vector::Unit(3, 1);
    CHECK(cosine(e1, e2).value == 0.0);
    CHECK_FALSE(cosine(e1, e2).degenerate);
  }

  TEST_CASE("linear CKA invariances") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n;
    Matrix x(20, 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    CHECK(linear_cka(x, x) == doctest::Approx(1.0).epsilon(1e-12));
    Eigen::MatrixXd r(5, 5);
    for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = n(rng);
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(r).householderQ();
    CHECK(linear_cka(x, x * q) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(linear_cka(x, x * -3.5) == doctest::Approx(1.0).epsilon(1e-12));
    Matrix y(20, 3);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = n(rng);
    const double c = linear_cka(x, y);
    CHECK(c >= 0.0);
    CHECK(c < 1.0);
  }

  TEST_CASE("PCA of identical matrices sits at the origin") {
    const Matrix m = Matrix::Constant(2, 3, 0.4);
    const auto p = pca_project({m, m, m, m});
    CHECK(p.points.isZero(0.0));
    CHECK(p.explained_variance[0] == 0.0);
  }

  TEST_CASE("PCA of collinear points has one component") {
    std::vector<Matrix> pts;
    for (double t : {0.0, 1.0, 2.5, 4.0}) {
      Matrix m(1, 3);
      m << 1 + t, 2 - 2 * t, 0.5 * t;
      pts.push_back(m);
    }
    const auto p = pca_project(pts);
    CHECK(p.explained_variance[0] > 0.0);
    CHECK(p.explained_variance[1] == 0.0);
    CHECK(p.points.col(1).isZero(0.0));
  }

  TEST_CASE("PCA distances match a full eigendecomposition") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<Matrix> pts;
      Eigen::MatrixXd data(4, 6);
      for (int i = 0; i < 4; ++i) {
        Matrix m(2, 3);
        for (Eigen::Index j = 0; j < 6; ++j) m.data()[j] = n(rng);
        pts.push_back(m);
        data.row(i) = Eigen::Map<Eigen::RowVectorXd>(m.data(), 6);
      }
      data.rowwise() -= data.colwise().mean();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(data * data.transpose());
      // Coordinates in the top-2 subspace are sqrt(lambda) * eigenvector.
      Eigen::MatrixXd coords(4, 2);
      for (int c = 0; c < 2; ++c) {
        coords.col(c) = eig.eigenvectors().col(3 - c) * std::sqrt(eig.eigenvalues()(3 - c));
      }
      const auto p = pca_project(pts);
      for (int i = 0; i < 4; ++i) {
        for (int j = i + 1; j < 4; ++j) {
          const double want = (coords.row(i) - coords.row(j)).norm();
          const double got = (p.points.row(i) - p.points.row(j)).norm();
          CHECK(std::abs(want - got) < 1e-9);
        }
      }
    }
  }

  TEST_CASE("PCA sign convention is deterministic") {
    std::vector<Matrix> pts;
    for (double t : {0.0, 1.0, -2.0}) {
      Matrix m(1, 2);
      m << t, 0.1 * t * t;
      pts.push_back(m);
    }
    const auto a = pca_project(pts);
    std::vector<Matrix> flipped;
    for (const auto& m : pts) flipped.push_back(m);
    CHECK(a.points == pca_project(flipped).points);
    CHECK_THROWS(pca_project({pts[0]}));
    CHECK_THROWS(pca_project({pts[0], Matrix::Zero(2, 2)}));
  }

  TEST_CASE("dose response recovers a noiseless model") {
    std::vector<DoseRecord> recs;
    const double alpha = 0.01, beta = 0.004, gamma = 0.02;
    int id = 0;
    for (double mu : {0.0, 0.9, 0.95, 0.99}) {
      for (double rho : {0.0, 0.5, 1.0}) {
        for (int k : {3, 6}) {
          recs.push_back({"r" + std::to_string(id), std::to_string(id), k, mu, rho, AugKind::weak,
                          alpha + beta * amplification_factor(mu, k) + gamma * rho});
          ++id;
        }
      }
    }
    recs.push_back({"ignored", "x", 6, 0.5, 0.5, AugKind::blur, 99.0});
    const auto rep = dose_response(recs);
    CHECK(rep.n == recs.size() - 1);
    REQUIRE(rep.regression);
    CHECK(std::abs(rep.regression->alpha - alpha) < 1e-6);
    CHECK(std::abs(rep.regression->beta - beta) < 1e-6);
    CHECK(std::abs(rep.regression->gamma - gamma) < 1e-6);
  }

  TEST_CASE("dose response pairs strong and mid") {
    std::vector<DoseRecord> recs;
    for (int s = 0; s < 5; ++s) {
      recs.push_back({"resonant_strong", std::to_string(s), 6, 0.99, 1.0, AugKind::weak, 0.02});
      recs.push_back({"resonant_mid", std::to_string(s), 6, 0.95, 0.75, AugKind::weak, 0.02});
    }
    const auto rep = dose_response(recs);
    REQUIRE(rep.paired);
    CHECK(rep.paired->pairs == 5);
    CHECK(rep.paired->lift.mean == 0.0);
    CHECK(rep.paired->test.p_value == 1.0);
    CHECK(rep.paired->increases == 0);
  }

  TEST_CASE("regime amplification factors") {
    CHECK(amplification_factor(0.9, 3) == doctest::Approx(2.71));
    CHECK(amplification_factor(0.95, 6) == doctest::Approx(5.2982).epsilon(1e-4));
    CHECK(amplification_factor(0.99, 6) == doctest::Approx(5.8520).epsilon(1e-4));
  }
}
