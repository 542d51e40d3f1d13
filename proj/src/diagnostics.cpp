// SPDX-License-Identifier: Apache-2.0

#include "backflow/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "backflow/optimizer.hpp"

namespace backflow {

namespace {

using Index = Eigen::Index;

Eigen::MatrixXd centered(const Matrix& x) {
  Eigen::MatrixXd c = x;
  c.rowwise() -= c.colwise().mean();
  return c;
}

}  // namespace

CosineResult cosine(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine: length mismatch");
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0) return {0.0, true};
  return {std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0), false};
}

double linear_cka(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) throw std::invalid_argument("linear_cka: row counts differ");
  if (x.rows() < 2) throw std::invalid_argument("linear_cka needs at least two rows");
  const Eigen::MatrixXd xc = centered(x), yc = centered(y);
  const double xx = (xc.transpose() * xc).norm();
  const double yy = (yc.transpose() * yc).norm();
  if (xx == 0.0 || yy == 0.0) throw std::invalid_argument("linear_cka: zero centered norm");
  const double xy = (xc.transpose() * yc).squaredNorm();
  return std::clamp(xy / (xx * yy), 0.0, 1.0);
}

TrajectoryProjection pca_project(const std::vector<Matrix>& matrices) {
  if (matrices.size() < 2) throw std::invalid_argument("pca_project needs at least two matrices");
  const Index rows = matrices.front().rows(), cols = matrices.front().cols();
  const auto m = static_cast<Index>(matrices.size());
  Eigen::MatrixXd data(m, rows * cols);
  for (Index i = 0; i < m; ++i) {
    const Matrix& mat = matrices[static_cast<std::size_t>(i)];
    if (mat.rows() != rows || mat.cols() != cols) {
      throw std::invalid_argument("pca_project: matrices differ in shape");
    }
    data.row(i) = Eigen::Map<const Eigen::RowVectorXd>(mat.data(), rows * cols);
  }
  data.rowwise() -= data.colwise().mean();

  // The set is tiny, so work with the m x m Gram matrix.
  const Eigen::MatrixXd gram = data * data.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const Eigen::VectorXd values = eig.eigenvalues();  // ascending
  const double top = std::max(0.0, values(m - 1));
  const double tol = std::max(top, 1.0) * 1e-12 * static_cast<double>(m);

  TrajectoryProjection proj;
  proj.points = Matrix::Zero(m, 2);
  for (Index comp = 0; comp < 2 && comp < m; ++comp) {
    const double lambda = values(m - 1 - comp);
    if (!(lambda > tol)) continue;
    Eigen::VectorXd u = eig.eigenvectors().col(m - 1 - comp);
    Eigen::VectorXd direction = data.transpose() * u / std::sqrt(lambda);
    Index arg = 0;
    direction.cwiseAbs().maxCoeff(&arg);
    if (direction(arg) < 0.0) direction = -direction;
    proj.points.col(comp) = data * direction;
    proj.explained_variance[static_cast<std::size_t>(comp)] =
        lambda / static_cast<double>(std::max<Index>(m - 1, 1));
  }
  return proj;
}

DoseResponseReport dose_response(const std::vector<DoseRecord>& records, const std::string& strong,
                                 const std::string& mid, std::uint64_t seed) {
  DoseResponseReport report;
  std::vector<double> delta, a_mu, rho;
  std::map<std::string, double> strong_by_pair, mid_by_pair;
  for (const auto& r : records) {
    if (r.aug_b != AugKind::weak) continue;
    delta.push_back(r.mean_delta);
    a_mu.push_back(amplification_factor(r.momentum, r.k));
    rho.push_back(r.overlap);
    if (r.k == 6 && r.regime == strong) strong_by_pair[r.pair_id] = r.mean_delta;
    if (r.k == 6 && r.regime == mid) mid_by_pair[r.pair_id] = r.mean_delta;
  }
  report.n = delta.size();
  report.a_mu = a_mu;
  try {
    report.regression = ols2(delta, a_mu, rho);
  } catch (const StatsError& e) {
    report.regression_error = e.what();
  }

  PairedLift lift;
  std::vector<double> xs, ys;
  for (const auto& [pair, s] : strong_by_pair) {
    const auto it = mid_by_pair.find(pair);
    if (it == mid_by_pair.end()) continue;
    xs.push_back(s);
    ys.push_back(it->second);
    lift.differences.push_back(s - it->second);
    if (s > it->second) ++lift.increases;
  }
  lift.pairs = xs.size();
  try {
    lift.test = paired_t(xs, ys);
    lift.lift = bootstrap_mean_ci(lift.differences, 2000, 0.95, seed);
    report.paired = std::move(lift);
  } catch (const StatsError& e) {
    report.paired_error = e.what();
  }
  return report;
}

}  // namespace backflow
