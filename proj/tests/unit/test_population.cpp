#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nsgmm/population.hpp"
#include "nsgmm/sampling.hpp"
#include "oracles.hpp"

using namespace nsgmm;

namespace {

ParamPoint ab(double a, double b) {
  ParamPoint p(2);
  p << a, b;
  return p;
}

double phi_oracle(double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

WeightMatrix identity(int m) { return WeightMatrix{Matrix::Identity(m, m)}; }

// Sample second moment against its population value, entrywise within five
// Monte Carlo standard errors.
void expect_second_moment(const Matrix& g, const Matrix& pop) {
  const double n = static_cast<double>(g.rows());
  for (Eigen::Index a = 0; a < g.cols(); ++a)
    for (Eigen::Index b = a; b < g.cols(); ++b) {
      const Vector prod = g.col(a).cwiseProduct(g.col(b));
      const double mean = prod.mean();
      const double sd = std::sqrt((prod.array() - mean).square().mean());
      EXPECT_LE(std::abs(mean - pop(a, b)), 5.0 * sd / std::sqrt(n) + 1e-12) << a << "," << b;
      EXPECT_DOUBLE_EQ(pop(a, b), pop(b, a));
    }
}

}  // namespace

TEST(PseudoTrue, IvqrCorrectlySpecifiedAtMedian) {
  const auto spec = MomentSpec::ivqr(0.5);
  const PopulationSetting ps{0.0};
  Matrix spd(3, 3);
  spd << 2.0, 0.3, -0.1, 0.3, 1.0, 0.2, -0.1, 0.2, 0.5;
  for (const auto& w : {identity(3), population_weight({WeightKind::TauScaledInstrumentOuter}, spec, ps),
                        WeightMatrix{spd}}) {
    const auto r = pseudo_true(spec, ps, w);
    EXPECT_NEAR(r.theta_star(0), 1.0, 1e-4);
    EXPECT_NEAR(r.theta_star(1), 1.0, 1e-4);
    EXPECT_LE(r.q0_star, 1e-10);
    EXPECT_EQ(r.multistart_count, 16);
    EXPECT_EQ(r.method, "gauss-hermite-64x64/nelder-mead");
  }
}

TEST(PseudoTrue, LocationMedianBySymmetry) {
  const auto r = pseudo_true(MomentSpec::location(1, 0.5), {}, identity(2));
  EXPECT_NEAR(r.theta_star(0), 0.0, 1e-6);
  EXPECT_LE(r.q0_star, 1e-10);
  EXPECT_EQ(r.method, "closed-form/nelder-mead");
}

TEST(PseudoTrue, LocationLowQuantileMatchesGrid) {
  const auto r = pseudo_true(MomentSpec::location(1, 0.1), {}, identity(2));
  double best_t = 0.0, best_q = INFINITY;
  for (long k = -1000000; k <= 1000000; ++k) {
    const double t = k * 1e-6;
    const double a = phi_oracle(t / 2.0) - 0.1;
    const double q = a * a + t * t;
    if (q < best_q) {
      best_q = q;
      best_t = t;
    }
  }
  EXPECT_NEAR(r.theta_star(0), best_t, 1e-5);
  EXPECT_NEAR(r.q0_star, best_q, 1e-12);
  EXPECT_GT(r.q0_star, 1e-4);
}

TEST(PseudoTrue, ScalingInvariance) {
  const auto spec = MomentSpec::ivqr(0.5);
  const PopulationSetting ps{0.6};
  const auto w = population_weight({WeightKind::TauScaledInstrumentOuter}, spec, ps);
  const auto a = pseudo_true(spec, ps, w);
  const auto b = pseudo_true(spec, ps, WeightMatrix{5.0 * w.matrix});
  EXPECT_LE((a.theta_star - b.theta_star).cwiseAbs().maxCoeff(), 1e-8);

  const auto loc = MomentSpec::location(2, 0.2);
  const auto c = pseudo_true(loc, {}, identity(3));
  const auto d = pseudo_true(loc, {}, WeightMatrix{0.25 * Matrix::Identity(3, 3)});
  EXPECT_NEAR(c.theta_star(0), d.theta_star(0), 1e-8);
}

TEST(PseudoTrue, MisspecificationDetectedUnderEndogeneity) {
  const auto spec = MomentSpec::ivqr(0.5);
  const PopulationSetting ps{0.6};
  const auto tau_scaled = pseudo_true(spec, ps, population_weight({WeightKind::TauScaledInstrumentOuter}, spec, ps));
  EXPECT_GT(tau_scaled.q0_star, 1e-6);
  const auto ident = pseudo_true(spec, ps, identity(3));
  EXPECT_GT(ident.q0_star, 1e-6);
}

TEST(PseudoTrue, BestValueDominatesEveryStart) {
  const auto spec = MomentSpec::ivqr(0.5);
  const PopulationSetting ps{0.2};
  const ParamBox box{-4.0, 6.0};
  const auto w = identity(3);
  const auto r = pseudo_true(spec, ps, w, box);
  const double width = (box.hi - box.lo) / 4.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const Vector pi = population_ivqr(ab(box.lo + (i + 0.5) * width, box.lo + (j + 0.5) * width), 0.2, 0.5);
      EXPECT_LE(r.q0_star, pi.squaredNorm());
    }
  const auto loc = pseudo_true(MomentSpec::location(3, 0.3), {}, identity(8), box);
  for (int i = 0; i < 16; ++i) {
    const Vector pi = population_location(MomentSpec::location(3, 0.3), box.lo + (i + 0.5) * (box.hi - box.lo) / 16);
    EXPECT_LE(loc.q0_star, pi.squaredNorm());
  }
}

TEST(PseudoTrue, TwoStepPipeline) {
  const auto r = pseudo_true_pipeline(MomentSpec::location(1, 0.1), {}, {WeightKind::Identity}, true);
  EXPECT_NEAR(r.theta_star(0), -0.04946, 5e-5);
  const auto one = pseudo_true_pipeline(MomentSpec::location(1, 0.1), {}, {WeightKind::Identity}, false);
  EXPECT_NEAR(one.theta_star(0), -0.07668, 5e-5);
}

TEST(PseudoTrue, Errors) {
  const auto spec = MomentSpec::location(1, 0.5);
  EXPECT_THROW(pseudo_true(spec, {}, identity(3)), Error);
  EXPECT_THROW(pseudo_true(spec, {}, identity(2), ParamBox{1.0, 1.0}), Error);
  EXPECT_THROW(population_weight({WeightKind::InstrumentOuter}, spec), Error);
  EXPECT_THROW(population_weight({WeightKind::EfficientAtPreliminary}, spec), Error);
}

TEST(NelderMead, QuadraticBowl) {
  auto f = [](const ParamPoint& p) { return (p(0) - 1.0) * (p(0) - 1.0) + 10.0 * (p(1) + 2.0) * (p(1) + 2.0); };
  const auto r = nelder_mead(f, ab(0, 0), {}, 1.0);
  EXPECT_NEAR(r.x(0), 1.0, 1e-6);
  EXPECT_NEAR(r.x(1), -2.0, 1e-6);
  EXPECT_LE(r.f, 1e-10);
}

TEST(NelderMead, StaysInBox) {
  auto f = [](const ParamPoint& p) { return (p(0) - 20.0) * (p(0) - 20.0); };
  const auto r = nelder_mead(f, ParamPoint::Constant(1, 0.0), {-10.0, 10.0}, 1.0);
  EXPECT_NEAR(r.x(0), 10.0, 1e-8);
}

TEST(SecondMoment, LocationMatchesSimulation) {
  const long n = 1000000;
  for (int g : {1, 2, 3}) {
    const auto spec = MomentSpec::location(g, 0.3);
    const auto data = gen_location(n, spec.family, {9, "second-moment", static_cast<std::uint64_t>(g)});
    for (double t : {-1.0, 0.4}) {
      const Matrix pop = population_location_second_moment(spec, t, 2.0);
      expect_second_moment(location_moment_matrix(spec, data, t), pop);
    }
  }
}

TEST(SecondMoment, IvqrMatchesSimulation) {
  const long n = 1000000;
  const auto data = gen_ivqr(n, 0.6, {9, "second-moment-iv", 0});
  for (const auto& t : {ab(1, 1), ab(0.6, 1.5)}) {
    const Matrix pop = population_ivqr_second_moment(t, 0.6, 0.5);
    expect_second_moment(ivqr_moment_matrix(data, t, 0.5), pop);
  }
  const Matrix zz = population_instrument_second_moment();
  const Matrix sample = data.instruments.transpose() * data.instruments / static_cast<double>(n);
  EXPECT_LE((sample - zz).cwiseAbs().maxCoeff(), 0.01);
}

TEST(TransformedBeta, Examples) {
  EXPECT_DOUBLE_EQ(transformed_beta({1.0, 0.0, 0.7, 0.4, 2.0, 5.0}), 2.0);
  EXPECT_DOUBLE_EQ(transformed_beta({0.0, 1.3, 0.7, 0.4, 2.0, 5.0}), 5.0);
  EXPECT_DOUBLE_EQ(transformed_beta({2.0, 1.0, 0.5, 1.0, 2.0, 5.0}), 3.5);
  EXPECT_THROW(transformed_beta({1.0, 1.0, 0.5, -0.5, 2.0, 5.0}), Error);
  EXPECT_THROW(transformed_beta({0.0, 0.0, 0.5, 0.5, 2.0, 5.0}), Error);
}

TEST(TransformedBeta, ConvexCombination) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> pos(0.01, 3.0), any(-5.0, 5.0);
  for (int k = 0; k < 500; ++k) {
    const TransformInputs t{pos(rng), pos(rng), pos(rng), pos(rng), any(rng), any(rng)};
    const double b = transformed_beta(t);
    EXPECT_GE(b, std::min(t.beta0, t.beta_star) - 1e-12);
    EXPECT_LE(b, std::max(t.beta0, t.beta_star) + 1e-12);
    EXPECT_NE(b, t.beta0);
  }
}
