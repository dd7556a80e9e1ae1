#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "tbp/particle.hpp"

using namespace tbp;

namespace {

struct Fixture {
  ModelSpec m = build_model2(1, 1.0, 100.0);
  PsiWeight psi;
  Fixture() {
    auto c = search_lyapunov_parameters(m, 1.0 + m.eps0);
    auto V = lyapunov_build(m, c.lambda0, c.L);
    psi = PsiWeight{1, V, compute_lambda_psi(m, V, 1, 0.1).value};
  }
};

}  // namespace

TEST(LambdaPsi, ExceedsBothLowerBounds) {
  Fixture f;
  auto lp = compute_lambda_psi(f.m, f.psi.V, 1, 0.1);
  EXPECT_DOUBLE_EQ(lp.C_psi, 1.0);   // sup of 1/(1+a)
  EXPECT_DOUBLE_EQ(lp.C_prime, 1.0); // sup of (1+a)/(1+a)
  const double bt = f.m.birth.b_tilde;
  EXPECT_GT(lp.value, lp.C_psi + 2 * bt * lp.C_prime * (1 + f.psi.V.eps1));
  EXPECT_GT(lp.value, lp.C_psi + 2 * bt * lp.C_prime / f.psi.V.V_min);
  EXPECT_THROW(compute_lambda_psi(f.m, f.psi.V, 0, 0.1), ParameterError);
}

TEST(LambdaPsi, JumpCountConstantClosedForm) {
  // d_b = 1: int (1 + A + s) e^{-l s} ds = (1 + A)/l + 1/l^2
  double c = jump_count_constant(1.0, 0.2, 1, 2.0, 10.0);
  EXPECT_NEAR(c, 2.0 * 1.2 * (3.0 / 10.0 + 1.0 / 100.0), 1e-14);
  Fixture f;
  auto lp = compute_lambda_psi(f.m, f.psi.V, 1, 0.1, 1.0);
  EXPECT_LT(lp.c_lambda, 1.0);
}

TEST(JumpTypes, MassesFormADistribution) {
  Fixture f;
  for (TelomereVector x : {TelomereVector{0.0, 0.0}, TelomereVector{50.0, 80.0}, TelomereVector{9900.0, 100.0}}) {
    auto p = jump_type_probs(f.m, f.psi, x, 0.7, 20000, Stream(4));
    EXPECT_NEAR(p.total, 1.0, 1e-12);
    EXPECT_GE(p.cemetery, 0.0);
    for (const auto& e : p.entries) {
      EXPECT_GE(e.q, 0.0);
      EXPECT_FALSE(e.label.cemetery);
    }
  }
}

TEST(JumpRate, PositiveAndRejectsSmallLambda) {
  Fixture f;
  EXPECT_GT(jump_rate(f.m, f.psi, {1, 1}, 0.0), 0.0);
  PsiWeight weak = f.psi;
  weak.lambda_psi = 0.5;
  EXPECT_THROW(jump_rate(f.m, weak, {1, 1}, 0.0), NumericError);
}

TEST(Particle, PathInvariants) {
  Fixture f;
  for (std::size_t i = 0; i < 300; ++i) {
    auto p = simulate_particle(f.m, f.psi, {50.0, 50.0}, 0.0, 2.0, Stream::from(1, i));
    ASSERT_EQ(p.T.size(), p.X.size());
    ASSERT_EQ(p.T.size(), p.labels.size());
    for (std::size_t n = 1; n < p.T.size(); ++n) EXPECT_LE(p.T[n - 1], p.T[n]);
    EXPECT_LE(p.T.back(), 2.0);
    if (p.absorbed) {
      EXPECT_TRUE(p.labels.back().cemetery);
      EXPECT_DOUBLE_EQ(p.tau, p.T.back());
    }
    EXPECT_EQ(p.clipped, 0u);
  }
}

TEST(Particle, OneJumpLawMatchesQuadratureOracle) {
  Fixture f;
  BoxEvent ev{{0.0, 0.0}, {60.0, 60.0}, std::nullopt, 0.1, 0.6};
  auto r = one_jump_law_check(f.m, f.psi, {50.0, 50.0}, 0.0, 1.0, ev, 100000, 12);
  EXPECT_GT(r.mc.mean, 0.0);
  EXPECT_LT(r.z, 4.0);
}

TEST(Particle, NoJumpSurvival) {
  Fixture f;
  // with b = a, H0(y, r) = exp(-r^2/2 - lambda r) (1 + r)
  double r = 0.4;
  EXPECT_NEAR(particle_survival(f.m, f.psi, {1, 1}, r), std::exp(-0.08 - f.psi.lambda_psi * r) * 1.4, 1e-14);
}

TEST(Particle, SemigroupIdentitySmall) {
  Fixture f;
  auto cv = cross_validate_semigroup(f.m, f.psi, {50.0, 50.0}, 0.0, [](const TelomereVector&, double) { return 1.0; },
                                     0.5, 20000, 3);
  EXPECT_LT(cv.z, 4.0);
}

TEST(Particle, PathsCsvHeader) {
  Fixture f;
  std::vector<ParticlePath> ps{simulate_particle(f.m, f.psi, {5, 5}, 0.0, 1.0, Stream(2))};
  std::ostringstream os;
  write_paths_csv(os, ps, 2);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "path_id,n,T_n,I_n,J_n,x_1,x_2,absorbed");
}

TEST(Particle, TailOfCoverageTime) {
  Fixture f;
  std::vector<ParticlePath> ps;
  for (std::size_t i = 0; i < 200; ++i) ps.push_back(simulate_particle(f.m, f.psi, {50, 50}, 0.0, 3.0, Stream::from(8, i)));
  auto tail = tail_T_all(ps, {0.0, 1.0, 2.0, 3.0});
  EXPECT_DOUBLE_EQ(tail[0], 1.0);
  for (std::size_t i = 1; i < tail.size(); ++i) EXPECT_LE(tail[i], tail[i - 1]);
}

TEST(Particle, ZeroBirthRateMatchesNoJumpSurvival) {
  auto m = build_model2(1, 1.0, 100.0, {}, {BirthRate::Kind::Constant, {0.0}});
  auto V = lyapunov_build(m, 0.01, 2);
  PsiWeight psi{1, V, 2.0};
  EXPECT_DOUBLE_EQ(jump_rate(m, psi, {1, 1}, 0.0), 1.0);  // lambda_psi - 1/(1+0)
  auto cv = cross_validate_semigroup(m, psi, {5, 5}, 0.0, [](const TelomereVector&, double) { return 1.0; }, 1.0, 40000, 4);
  const double exact = std::exp(-2.0) * 2.0;
  EXPECT_NEAR(cv.rhs.mean, exact, 1e-12);
  EXPECT_NEAR(cv.lhs.mean, exact, 4 * cv.lhs.se);
}

TEST(JumpTypes, Model1OnlyFullLengtheningSets) {
  auto m = build_model1(1, 1.0, 100.0, 0.3);
  auto V = lyapunov_build(m, 0.01, 2);
  PsiWeight psi{1, V, compute_lambda_psi(m, V, 1, 0.1).value};
  auto p = jump_type_probs(m, psi, {30.0, 30.0}, 1.0, 5000, Stream(3));
  for (const auto& e : p.entries) EXPECT_EQ(e.label.J, full_mask(2));
}

TEST(Particle, OneJumpEmptyWindowIsZero) {
  Fixture f;
  BoxEvent ev{{0.0, 0.0}, {1e9, 1e9}, std::nullopt, 0.5, 0.5};
  auto r = one_jump_law_check(f.m, f.psi, {50.0, 50.0}, 0.0, 1.0, ev, 2000, 1);
  EXPECT_EQ(r.mc.mean, 0.0);
  EXPECT_EQ(r.oracle.mean, 0.0);
}
