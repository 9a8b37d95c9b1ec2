#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <span>
#include <vector>

#include "earlystop/common/error.hpp"

namespace earlystop::dsp {

// Rows of `components` are orthonormal principal axes, strongest first.
struct PcaModel {
  std::vector<double> mean;
  std::vector<std::vector<double>> components;
  std::vector<double> eigenvalues;

  bool fitted() const { return !components.empty(); }
  std::size_t input_dim() const { return mean.size(); }
  std::size_t output_dim() const { return components.size(); }

  std::vector<double> project(std::span<const double> row) const {
    if (!fitted()) throw StateError("PCA model has not been fitted");
    if (row.size() != mean.size()) {
      throw DimensionError("PCA expects " + std::to_string(mean.size()) + " inputs, got " + std::to_string(row.size()));
    }
    std::vector<double> out(components.size(), 0.0);
    for (std::size_t c = 0; c < components.size(); ++c)
      for (std::size_t i = 0; i < row.size(); ++i) out[c] += components[c][i] * (row[i] - mean[i]);
    return out;
  }

  // Keeps the first `keep` inputs unchanged.
  static PcaModel identity(std::size_t keep, std::size_t dim) {
    if (keep > dim) throw ConfigError("identity projection cannot keep more inputs than it has");
    PcaModel m;
    m.mean.assign(dim, 0.0);
    m.components.assign(keep, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < keep; ++i) m.components[i][i] = 1.0;
    m.eigenvalues.assign(keep, 1.0);
    return m;
  }
};

inline void to_json(nlohmann::json& j, const PcaModel& m) {
  j = {{"mean", m.mean}, {"components", m.components}, {"eigenvalues", m.eigenvalues}};
}

inline void from_json(const nlohmann::json& j, PcaModel& m) {
  j.at("mean").get_to(m.mean);
  j.at("components").get_to(m.components);
  j.at("eigenvalues").get_to(m.eigenvalues);
  for (const auto& row : m.components)
    if (row.size() != m.mean.size()) throw CompatibilityError("PCA component width does not match mean");
}

// Top-k eigenvectors of the sample covariance of `rows`.
inline PcaModel fit_pca(const std::vector<std::vector<double>>& rows, std::size_t k) {
  if (rows.empty()) throw RankError("cannot fit PCA on zero rows");
  const std::size_t n = rows.size(), d = rows.front().size();
  if (k == 0 || k > d) throw ConfigError("cannot retain " + std::to_string(k) + " of " + std::to_string(d) + " dimensions");
  if (n <= k) {
    throw RankError("PCA needs more than " + std::to_string(k) + " rows to estimate " + std::to_string(k) +
                    " components, got " + std::to_string(n));
  }
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < n; ++r) {
    if (rows[r].size() != d) throw DimensionError("PCA rows have inconsistent widths");
    for (std::size_t c = 0; c < d; ++c) X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  if (!X.allFinite()) throw DataError("PCA input contains NaN or Inf");
  const Eigen::RowVectorXd mu = X.colwise().mean();
  X.rowwise() -= mu;
  const Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("covariance eigendecomposition failed");
  const auto& values = solver.eigenvalues();  // ascending
  const auto& vectors = solver.eigenvectors();
  const double top = values(static_cast<Eigen::Index>(d - 1));
  const double kth = values(static_cast<Eigen::Index>(d - k));
  if (!(top > 0.0) || kth <= 1e-12 * top) {
    throw RankError("training features have fewer than " + std::to_string(k) + " independent directions");
  }

  PcaModel m;
  m.mean.assign(mu.data(), mu.data() + d);
  for (std::size_t c = 0; c < k; ++c) {
    const auto col = static_cast<Eigen::Index>(d - 1 - c);
    Eigen::VectorXd v = vectors.col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    m.components.emplace_back(v.data(), v.data() + d);
    m.eigenvalues.push_back(values(col));
  }
  return m;
}

}  // namespace earlystop::dsp
