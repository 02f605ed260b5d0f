#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Eigenvalues>

#include "nsgmm/dataset.hpp"
#include "nsgmm/types.hpp"

namespace nsgmm {

/// Identifier recorded in every output file next to the base seed.
inline constexpr const char* kRngId = "mt19937_64/std::normal_distribution";

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

struct SeedSpec {
  std::uint64_t base_seed = 0;
  std::string scenario_id;
  std::uint64_t replication = 0;

  /// Stream seed; depends only on the triple, never on call order.
  std::uint64_t stream_seed() const {
    std::uint64_t h = detail::splitmix64(base_seed);
    h = detail::splitmix64(h ^ detail::fnv1a64(scenario_id));
    h = detail::splitmix64(h ^ (replication * 0xd1b54a32d192ed03ULL + 1));
    return h;
  }
  Rng engine() const { return Rng(stream_seed()); }
};

/// Symmetric positive semidefinite matrix with a lower-triangular factor.
class CovarianceMatrix {
 public:
  explicit CovarianceMatrix(Matrix sigma) : sigma_(std::move(sigma)) {
    const auto d = sigma_.rows();
    if (d < 1 || sigma_.cols() != d) throw Error("covariance must be a non-empty square matrix");
    if (!sigma_.allFinite()) throw Error("covariance has non-finite entries");
    if ((sigma_ - sigma_.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw Error("covariance not symmetric");
    if ((sigma_.diagonal().array() <= 0.0).any()) throw Error("covariance diagonal must be positive");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma_, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10 * sigma_.trace())
      throw Error("covariance not positive semidefinite");
    factor_ = semidefinite_cholesky(sigma_);
  }

  Eigen::Index dim() const { return sigma_.rows(); }
  const Matrix& matrix() const { return sigma_; }
  /// L with L * L^T == sigma.
  const Matrix& factor() const { return factor_; }

 private:
  // Column-wise Cholesky that zeroes a column whose pivot has vanished, so
  // singular PSD inputs still factor.
  static Matrix semidefinite_cholesky(const Matrix& a) {
    const auto d = a.rows();
    Matrix l = Matrix::Zero(d, d);
    const double tol = 1e-14 * a.diagonal().maxCoeff();
    for (Eigen::Index j = 0; j < d; ++j) {
      double pivot = a(j, j) - l.row(j).head(j).squaredNorm();
      if (pivot <= tol) continue;
      l(j, j) = std::sqrt(pivot);
      for (Eigen::Index i = j + 1; i < d; ++i)
        l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
    return l;
  }

  Matrix sigma_;
  Matrix factor_;
};

inline Matrix standard_normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

/// n draws from N(0, sigma), one per row.
inline Matrix mvn_sample(const CovarianceMatrix& sigma, Eigen::Index n, const SeedSpec& seed) {
  if (n < 1) throw Error("mvn_sample needs n >= 1");
  Rng rng = seed.engine();
  Matrix e = standard_normal_matrix(n, sigma.dim(), rng);
  return e * sigma.factor().transpose();
}

// ---------------------------------------------------------------------------
// Location design

/// Standard deviation of epsilon inside the joint (epsilon, x) draw used by
/// g3/g4. `Scaled` multiplies the unit-variance epsilon coordinate by 2 so
/// that var(y) = 4 for every family; `Unit` keeps the printed joint matrix.
enum class JointEpsilonScale { Scaled, Unit };

inline Matrix location_joint_correlation() {
  Matrix c(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) c(i, j) = i == j ? 1.0 : 0.6 - 0.1 * std::abs(i - j);
  return c;
}

inline Dataset gen_location(Eigen::Index n, Family variant, const SeedSpec& seed,
                            JointEpsilonScale scale = JointEpsilonScale::Scaled) {
  if (n < 1) throw Error("gen_location needs n >= 1");
  if (variant == Family::Ivqr) throw Error("gen_location needs a location family");
  constexpr double kTheta0 = 0.0;
  constexpr double kSigmaEps = 2.0;
  if (variant == Family::LocationG1 || variant == Family::LocationG2) {
    CovarianceMatrix sigma(Matrix::Constant(1, 1, kSigmaEps * kSigmaEps));
    Matrix draw = mvn_sample(sigma, n, seed);
    return Dataset::location(Vector::Constant(n, kTheta0) + draw.col(0));
  }
  CovarianceMatrix sigma(location_joint_correlation());
  Matrix draw = mvn_sample(sigma, n, seed);
  const double eps_sd = scale == JointEpsilonScale::Scaled ? kSigmaEps : 1.0;
  Vector y = Vector::Constant(n, kTheta0) + eps_sd * draw.col(0);
  return Dataset::location(std::move(y), draw.rightCols(5));
}

// ---------------------------------------------------------------------------
// IVQR design: (u, D, W) ~ N(0, Sigma(delta)), y = 1 + D + u.

inline constexpr double kIvqrAlpha0 = 1.0;
inline constexpr double kIvqrBeta0 = 1.0;

inline void check_ivqr_delta(double delta) {
  if (!std::isfinite(delta) || std::abs(delta) >= std::sqrt(0.75))
    throw Error("degenerate covariance: |delta| must be < sqrt(0.75)");
}

inline Matrix ivqr_covariance(double delta) {
  check_ivqr_delta(delta);
  Matrix s(3, 3);
  s << 1.0, 0.0, delta,
       0.0, 1.0, 0.5,
       delta, 0.5, 1.0;
  return s;
}

inline Dataset gen_ivqr(Eigen::Index n, double delta, const SeedSpec& seed) {
  if (n < 1) throw Error("gen_ivqr needs n >= 1");
  CovarianceMatrix sigma(ivqr_covariance(delta));
  Matrix draw = mvn_sample(sigma, n, seed);
  Vector y = Vector::Constant(n, kIvqrAlpha0) + kIvqrBeta0 * draw.col(1) + draw.col(0);
  return Dataset::ivqr(std::move(y), draw.col(1), draw.col(2));
}

}  // namespace nsgmm
