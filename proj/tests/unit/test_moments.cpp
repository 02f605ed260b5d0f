#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "nsgmm/moments.hpp"
#include "nsgmm/sampling.hpp"
#include "oracles.hpp"

using namespace nsgmm;

namespace {

Dataset one_y(double y) { return Dataset::location(Vector::Constant(1, y)); }

Dataset ivqr_rows(std::initializer_list<std::array<double, 3>> rows) {
  Vector y(rows.size()), d(rows.size()), w(rows.size());
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    y(i) = r[0];
    d(i) = r[1];
    w(i) = r[2];
    ++i;
  }
  return Dataset::ivqr(y, d, w);
}

ParamPoint ab(double a, double b) {
  ParamPoint p(2);
  p << a, b;
  return p;
}

// Standard normal CDF through erf, independent of the library's erfc path.
double phi_oracle(double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

TEST(EvalLocation, PointExamples) {
  const auto g1 = MomentSpec::location(1, 0.5);
  const Vector a = eval_location(g1, one_y(0.0), 0.0);
  EXPECT_DOUBLE_EQ(a(0), 0.5);
  EXPECT_DOUBLE_EQ(a(1), 0.0);

  Vector y(2);
  y << -1.0, 1.0;
  const Vector b = eval_location(g1, Dataset::location(y), 0.0);
  EXPECT_DOUBLE_EQ(b(0), 0.0);
  EXPECT_DOUBLE_EQ(b(1), 0.0);

  const Vector c = eval_location(MomentSpec::location(2, 0.5), one_y(0.0), 0.0);
  ASSERT_EQ(c.size(), 3);
  EXPECT_DOUBLE_EQ(c(0), 0.5);
  EXPECT_DOUBLE_EQ(c(1), 0.0);
  EXPECT_DOUBLE_EQ(c(2), -4.0);
}

TEST(EvalLocation, MatchesDirectSummation) {
  for (int g = 1; g <= 4; ++g) {
    const auto spec = MomentSpec::location(g, 0.3);
    const auto data = gen_location(40, spec.family, {1, "eval", static_cast<std::uint64_t>(g)});
    for (double t : {-3.0, -0.2, 0.0, 0.7, 2.5}) {
      const Vector lib = eval_location(spec, data, t);
      const Vector ref = oracle::location_moments(spec, data, t);
      ASSERT_EQ(lib.size(), spec.moment_dim());
      EXPECT_LE((lib - ref).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(EvalLocation, MissingCovariates) {
  EXPECT_THROW(eval_location(MomentSpec::location(3, 0.5), one_y(0.0), 0.0), Error);
  EXPECT_THROW(eval_location(MomentSpec::location(4, 0.5), one_y(0.0), 0.0), Error);
  EXPECT_THROW(eval_location(MomentSpec::ivqr(0.5), one_y(0.0), 0.0), Error);
}

TEST(EvalLocation, IndicatorIsMonotoneStepWithJumpsOneOverN) {
  const auto spec = MomentSpec::location(1, 0.2);
  const auto data = gen_location(30, spec.family, {1, "mono", 0});
  std::vector<double> ys(data.outcome.data(), data.outcome.data() + data.size());
  std::sort(ys.begin(), ys.end());
  double prev = eval_location(spec, data, -100.0)(0);
  EXPECT_DOUBLE_EQ(prev, -0.2);
  for (double y : ys) {
    const double before = eval_location(spec, data, std::nextafter(y, -1e300))(0);
    const double at = eval_location(spec, data, y)(0);
    EXPECT_DOUBLE_EQ(before, prev);
    EXPECT_NEAR(at - before, 1.0 / 30.0, 1e-15);
    prev = at;
  }
  EXPECT_NEAR(prev, 0.8, 1e-15);
}

TEST(EvalIvqr, PointExamples) {
  const Vector a = eval_ivqr(ivqr_rows({{0.0, 1.0, 2.0}}), ab(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(a(0), -0.5);
  EXPECT_DOUBLE_EQ(a(1), -0.5);
  EXPECT_DOUBLE_EQ(a(2), -1.0);
  const Vector b = eval_ivqr(ivqr_rows({{1.0, 1.0, 2.0}}), ab(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(b(0), 0.5);
  EXPECT_DOUBLE_EQ(b(1), 0.5);
  EXPECT_DOUBLE_EQ(b(2), 1.0);
}

TEST(EvalIvqr, AllIndicatorsOne) {
  const auto data = gen_ivqr(25, 0.6, {2, "all-one", 0});
  const double beta = 0.4;
  const double alpha = (data.outcome.array() - beta * data.regressor.array()).maxCoeff() + 0.1;
  const double tau = 0.3;
  const Vector g = eval_ivqr(data, ab(alpha, beta), tau);
  const Vector zbar = data.instruments.colwise().mean().transpose();
  EXPECT_LE((g - (tau - 1.0) * zbar).cwiseAbs().maxCoeff(), 1e-14);
  // direct summation oracle
  Vector ref = Vector::Zero(3);
  for (Eigen::Index i = 0; i < data.size(); ++i) ref += (tau - 1.0) * data.instruments.row(i).transpose();
  EXPECT_LE((g - ref / 25.0).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(EvalIvqr, SignFlipNegates) {
  const auto data = gen_ivqr(33, 0.2, {2, "sign", 0});
  const double tau = 0.7;
  const Vector g = eval_ivqr(data, ab(0.9, 1.2), tau);
  Vector flipped = Vector::Zero(3);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const double ind = data.outcome(i) <= 0.9 + 1.2 * data.regressor(i) ? 1.0 : 0.0;
    flipped += (ind - tau) * data.instruments.row(i).transpose();
  }
  flipped /= 33.0;
  EXPECT_LE((g + flipped).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(EvalIvqr, BoundaryIncluded) {
  // y = alpha + beta D exactly: the indicator is 1.
  const Vector g = eval_ivqr(ivqr_rows({{3.0, 1.0, 0.0}}), ab(1.0, 2.0), 0.25);
  EXPECT_DOUBLE_EQ(g(0), -0.75);
}

TEST(PopulationLocation, Examples) {
  const Vector a = population_location(MomentSpec::location(1, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(a(0), 0.0);
  EXPECT_DOUBLE_EQ(a(1), 0.0);

  const Vector b = population_location(MomentSpec::location(1, 0.5), 2.0);
  EXPECT_NEAR(b(0), phi_oracle(1.0) - 0.5, 1e-15);
  EXPECT_NEAR(b(0), 0.3413447460685429, 1e-15);
  EXPECT_DOUBLE_EQ(b(1), -2.0);

  const Vector c = population_location(MomentSpec::location(2, 0.5), 2.0);
  EXPECT_NEAR(c(2), 4.0, 1e-15);

  const Vector d = population_location(MomentSpec::location(4, 0.1), 1.0);
  ASSERT_EQ(d.size(), 7);
  for (int j = 2; j < 7; ++j) EXPECT_DOUBLE_EQ(d(j), 0.1 - 0.5);
}

TEST(PopulationLocation, VarianceComponentMonteCarlo) {
  const auto spec = MomentSpec::location(2, 0.5);
  const auto data = gen_location(1000000, spec.family, {5, "pop-g2", 0});
  const Matrix g = location_moment_matrix(spec, data, 2.0);
  const double mean = g.col(2).mean();
  const double sd = std::sqrt((g.col(2).array() - mean).square().mean());
  EXPECT_LE(std::abs(mean - 4.0), 5.0 * sd / 1000.0);
}

// Sample moments at n = 1e6 agree with the population moments within five
// Monte Carlo standard errors, componentwise, at 20 random theta.
TEST(PopulationLocation, ConsistencyAllFamilies) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  const long n = 1000000;
  for (int g = 1; g <= 4; ++g) {
    const auto spec = MomentSpec::location(g, 0.3);
    const auto data = gen_location(n, spec.family, {6, "consistency", static_cast<std::uint64_t>(g)});
    for (int k = 0; k < 20; ++k) {
      const double t = unif(rng);
      const Matrix m = location_moment_matrix(spec, data, t);
      const Vector mean = m.colwise().mean().transpose();
      const Vector pi = population_location(spec, t);
      for (Eigen::Index c = 0; c < mean.size(); ++c) {
        const double sd = std::sqrt((m.col(c).array() - mean(c)).square().mean());
        EXPECT_LE(std::abs(mean(c) - pi(c)), 5.0 * sd / std::sqrt(double(n)) + 1e-12) << g << " " << t << " " << c;
      }
    }
  }
}

TEST(PopulationIvqr, CorrectlySpecifiedAtTruth) {
  for (double tau : {0.25, 0.5, 0.8}) {
    const Vector pi = population_ivqr(ab(1, 1), 0.0, tau);
    EXPECT_NEAR(pi(0), tau - 0.5, 1e-12);
    EXPECT_NEAR(pi(1), 0.0, 1e-12);
    EXPECT_NEAR(pi(2), 0.0, 1e-12);
  }
}

TEST(PopulationIvqr, FirstComponentVanishesAtTruthUnderEndogeneity) {
  const Vector pi = population_ivqr(ab(1, 1), 0.6, 0.5);
  EXPECT_NEAR(pi(0), 0.0, 1e-12);
  EXPECT_GT(pi.tail(2).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(PopulationIvqr, QuadratureMatchesSimulation) {
  // Independent oracle: simulate the full design (u, D, W) and average the
  // moment function, rather than integrating the conditional probability.
  const long n = 1000000;
  for (double delta : {0.0, 0.6}) {
    const auto data = gen_ivqr(n, delta, {8, "quad-vs-mc", 0});
    for (const auto& t : {ab(1, 1), ab(0.7, 1.4), ab(1.3, 0.2)}) {
      for (double tau : {0.5, 0.2}) {
        const Vector q = population_ivqr(t, delta, tau);
        const Vector mc = eval_ivqr(data, t, tau);
        EXPECT_LE((q - mc).cwiseAbs().maxCoeff(), 1e-3) << delta << " " << t.transpose() << " " << tau;
      }
    }
  }
}

TEST(PopulationIvqr, MonteCarloRuleAgreesWithQuadrature) {
  const Vector q = population_ivqr(ab(0.8, 1.2), 0.4, 0.5);
  const Vector mc = population_ivqr(ab(0.8, 1.2), 0.4, 0.5, QuadratureRule::monte_carlo(1000000, 3));
  EXPECT_LE((q - mc).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(PopulationIvqr, RuleConverged) {
  // 64 and 96 nodes agree to far below the stated 1e-8 accuracy.
  QuadratureRule fine;
  fine.nodes = 96;
  const Vector a = population_ivqr(ab(0.5, 1.7), 0.6, 0.3);
  const Vector b = population_ivqr(ab(0.5, 1.7), 0.6, 0.3, fine);
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(PopulationIvqr, RejectsDegenerateDelta) {
  EXPECT_THROW(population_ivqr(ab(1, 1), 0.9, 0.5), Error);
}

TEST(GaussHermite, LowOrderMoments) {
  const GaussHermite gh(64);
  EXPECT_NEAR(gh.weights.sum(), 1.0, 1e-13);
  EXPECT_NEAR(gh.weights.dot(gh.nodes), 0.0, 1e-13);
  EXPECT_NEAR(gh.weights.dot(gh.nodes.array().square().matrix()), 1.0, 1e-12);
  EXPECT_NEAR(gh.weights.dot(gh.nodes.array().pow(4).matrix()), 3.0, 1e-11);
}
