#include <gtest/gtest.h>

#include <cmath>

#include "tbp/renewal.hpp"

using namespace tbp;

namespace {

// Independent oracle: composite Simpson on [0, 40] plus plain bisection.
double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  double h = (b - a) / n, s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

double age_linear_root_oracle(double gamma) {
  auto F = [gamma](double al) {
    return simpson([al](double s) { return std::exp(-al * s - 0.5 * s * s) * s; }, 0.0, 40.0, 40000) - 1.0 / gamma;
  };
  double lo = 1e-9, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    (F(mid) > 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

// Computed once with the oracle above (and cross-checked against an adaptive
// quadrature root finder), then frozen.
constexpr double kAgeLinearAlpha = 0.6120031809624807;

TEST(Malthusian, AgeLinearOracleIsFrozen) { EXPECT_NEAR(age_linear_root_oracle(2.0), kAgeLinearAlpha, 1e-10); }

TEST(Malthusian, AgeLinearSolverMatchesOracle) {
  EXPECT_NEAR(malthusian_root(LifetimeLaw::age_linear(), 2.0), kAgeLinearAlpha, 1e-10);
  auto generic = LifetimeLaw::from_rate([](double s) { return s; });
  EXPECT_NEAR(malthusian_root(generic, 2.0), kAgeLinearAlpha, 1e-9);
}

TEST(Malthusian, ExponentialClosedForm) {
  for (double b1 : {0.5, 1.0, 3.0})
    for (double g : {1.2, 1.4801, 2.0}) EXPECT_NEAR(malthusian_root(LifetimeLaw::exponential(b1), g), b1 * (g - 1), 1e-10);
}

TEST(Laplace, GridMatchesClosedForm) {
  auto law = LifetimeLaw::age_linear();
  auto g = law.render(1e-3, 20.0);
  for (double p : {0.0, 0.5, 2.0}) EXPECT_NEAR(laplace(g, p), laplace(law, p), 1e-6);
}

TEST(BellmanHarris, ExponentialYuleMean) {
  auto g = LifetimeLaw::exponential(1.0).render(1e-3, 10.0);
  auto m = bh_mean(g, 2.0);
  double worst = 0;
  for (std::size_t i = 0; i < m.size(); ++i) worst = std::max(worst, std::abs(m[i] / std::exp(g.t(i)) - 1.0));
  EXPECT_LT(worst, 1e-3);
}

TEST(BellmanHarris, SeriesAgreesWithDirectScheme) {
  auto g = LifetimeLaw::age_linear().render(1e-2, 6.0);
  auto a = bh_mean(g, 2.0);
  auto b = bh_mean_series(g, 2.0);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9 * a[i]);
}

TEST(BellmanHarris, AgeLinearGrowsAtAlpha) {
  auto m = bh_mean(LifetimeLaw::age_linear(), 2.0, 1e-3, 30.0);
  double slope = (std::log(m[30000]) - std::log(m[25000])) / 5.0;
  EXPECT_NEAR(slope, kAgeLinearAlpha, 1e-3);
}

TEST(ConvolutionIdentity, ExponentialAndAgeLinear) {
  auto ge = LifetimeLaw::exponential(1.0).render(1e-3, 8.0);
  for (int n = 1; n <= 3; ++n) EXPECT_LT(identity_check_max(ge, n, 8.0), 1e-6) << "n=" << n;
  auto ga = LifetimeLaw::age_linear().render(1e-3, 8.0);
  EXPECT_LT(identity_check_max(ga, 4, 8.0), 1e-5);
  EXPECT_LT(identity_check(ga, 4, 3.0), 1e-5);
}

TEST(ConvolutionIdentity, RejectsPointsOffTheGrid) {
  auto g = LifetimeLaw::exponential(1.0).render(1e-2, 1.0);
  EXPECT_THROW(identity_check(g, 2, 2.0), NumericError);
  EXPECT_THROW(convolution_power(g, 0), ParameterError);
}

TEST(Coupling, OrderHoldsPathwise) {
  auto b1 = BirthRate::age_linear(0.0, 1.0);
  auto b2 = BirthRate::age_linear(1.0, 1.0);
  for (int p = 0; p < 200; ++p) {
    auto c = coupled_jump_times(b1, b2, {}, {1.0, 1.0}, 50, Stream::from(3, p));
    for (std::size_t n = 0; n < c.times1.size(); ++n) ASSERT_LE(c.times2[n], c.times1[n]);
  }
  EXPECT_THROW(coupled_jump_times(b2, b1, {}, {1.0, 1.0}, 1, Stream(1)), ParameterError);
}

TEST(Coupling, NumericInversionMatchesClosedForm) {
  auto b = BirthRate::polynomial({0.3, 0.0, 2.0}, BirthRate::Kind::Poly);
  for (double e : {0.01, 1.0, 7.0}) {
    double s = invert_hazard(b, {}, 0.5, e);
    EXPECT_NEAR(b.cumulative({}, 0.5, s), e, 1e-10);
  }
}

TEST(Order, Model2AlphaAboveBeta) {
  auto m = build_model2(1, 1.0, 100.0);
  double alpha = solve_alpha(m, m.eps0, m.D);
  EXPECT_NEAR(alpha, 0.33075532394298807, 1e-9);  // independent quadrature root at gamma = 1.4801
  double beta = solve_beta(m, 0.2);
  auto r = check_order(m, alpha, beta);
  EXPECT_TRUE(r.beta_below_alpha);
  EXPECT_TRUE(r.second_condition);
  EXPECT_GE(r.inf_integral, 0.0);
  EXPECT_FALSE(check_order(m, alpha, alpha * 1.1).pass());
}
