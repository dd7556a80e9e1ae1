#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "tbp/population.hpp"
#include "tbp/renewal.hpp"

using namespace tbp;

namespace {

ModelSpec yule_model() {
  BirthParams b{BirthRate::Kind::Constant, {1.0}};
  return build_model2(1, 1.0, 100.0, {}, b);
}

CellState long_cell(int dim, double len = 1e5) { return CellState::alive(TelomereVector(dim, len)); }

}  // namespace

TEST(SimulateTree, ZeroBirthRateKeepsTheRoot) {
  auto m = build_model2(1, 1.0, 100.0, {}, {BirthRate::Kind::Constant, {0.0}});
  auto r = simulate_tree(m, CellState::alive({5, 5}, 2.0), 10.0, 100, 1, 0, true);
  ASSERT_EQ(r.alive.size(), 1u);
  EXPECT_EQ(label_to_string(r.alive[0].label), "0");
  EXPECT_DOUBLE_EQ(r.alive[0].age, 12.0);
  EXPECT_TRUE(r.events.empty());
}

TEST(SimulateTree, AccountingAndLabels) {
  auto m = build_model2(1, 1.0, 100.0);
  for (std::size_t rep = 0; rep < 20; ++rep) {
    auto r = simulate_tree(m, CellState::alive({3.0, 3.0}), 6.0, 100000, 42, rep, true);
    EXPECT_TRUE(r.accounting_holds());
    std::set<std::string> labels;
    for (const auto& c : r.alive) {
      EXPECT_TRUE(labels.insert(label_to_string(c.label)).second);
      for (int d : c.label) EXPECT_TRUE(d == 1 || d == 2);
      EXPECT_GE(c.age, 0.0);
      EXPECT_TRUE(valid_trait(c.x));
    }
    for (std::size_t i = 1; i < r.events.size(); ++i) EXPECT_LE(r.events[i - 1].time, r.events[i].time);
  }
}

TEST(SimulateTree, CapFlagsTheReplicate) {
  auto m = yule_model();
  auto r = simulate_tree(m, long_cell(2), 30.0, 50, 1, 0);
  EXPECT_TRUE(r.capped);
}

TEST(SimulateTree, ReproducibleAcrossThreadCounts) {
  auto m = build_model2(1, 1.0, 100.0);
  auto a = estimate_counts(m, CellState::alive({20, 20}), {1, 2, 3, 4}, 64, 9, 100000, 1);
  auto b = estimate_counts(m, CellState::alive({20, 20}), {1, 2, 3, 4}, 64, 9, 100000, 4);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a.counts[i].mean, b.counts[i].mean);
}

TEST(SimulateTree, YuleMeanAtShortHorizon) {
  auto m = yule_model();
  auto e = estimate_M_t(m, long_cell(2), [](const TelomereVector&, double) { return 1.0; }, 2.0, 20000, 5);
  EXPECT_NEAR(e.mean, std::exp(2.0), 4 * e.se);
}

TEST(SimulateTree, AgesAtObservationFollowTheStableLaw) {
  // Yule: a uniformly chosen alive cell at time t has P[age > a] = e^{-2a} for a < t (approximately, large t)
  auto m = yule_model();
  std::vector<double> ages;
  for (std::size_t rep = 0; rep < 200; ++rep) {
    auto r = simulate_tree(m, long_cell(2), 6.0, 100000, 77, rep);
    for (const auto& c : r.alive) ages.push_back(c.age);
  }
  double ks = ks_statistic(ages, [](double a) { return -std::expm1(-2.0 * a); });
  EXPECT_LT(ks, 0.03);
}

TEST(GrowthRate, RecoversYuleRate) {
  auto m = yule_model();
  auto g = estimate_growth_rate(m, long_cell(2), {2, 3, 4, 5, 6}, 2000, 3);
  EXPECT_NEAR(g.lambda, 1.0, 0.05);
  EXPECT_LT(g.ci_lo, g.ci_hi);
  EXPECT_THROW(estimate_growth_rate(m, long_cell(2), {1, 2, 3}, 10, 3), ParameterError);
}

TEST(Csv, HeadersAreStable) {
  auto m = build_model2(1, 1.0, 100.0);
  auto r = simulate_tree(m, CellState::alive({1.0, 1.0}), 3.0, 1000, 2, 0, true);
  std::ostringstream ev, al, es;
  write_events_csv(ev, r.events, 2);
  write_alive_csv(al, r.alive, 2);
  write_estimates_csv(es, CountSeries{{1.0}, {{1.0, 0.0, 1, 0}}});
  EXPECT_EQ(ev.str().substr(0, ev.str().find('\n')), "time,parent,kind,I,J,M");
  EXPECT_EQ(al.str().substr(0, al.str().find('\n')), "label,x_1,x_2,age");
  EXPECT_EQ(es.str().substr(0, es.str().find('\n')), "t,mean,stderr,n_valid");
}

TEST(Rng, StreamsAreOrderIndependent) {
  Stream a = Stream::from(1, 2, 3), b = Stream::from(1, 2, 3);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a(), b());
  EXPECT_NE(Stream::from(1, 2, 3)(), Stream::from(1, 2, 4)());
  EXPECT_NE(Stream(5).split(0)(), Stream(5).split(1)());
}

TEST(Stats, WelfordAndKs) {
  RunningStats s;
  for (double v : {1.0, 2.0, 3.0, 4.0}) s.add(v);
  EXPECT_DOUBLE_EQ(s.mean(), 2.5);
  EXPECT_NEAR(s.variance(), 5.0 / 3.0, 1e-15);
  EXPECT_NEAR(ks_statistic({0.5}, [](double x) { return x; }), 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(ks_two_sample({1, 2, 3}, {1, 2, 3}), 0.0);
}

TEST(Stats, ParallelForRethrows) {
  EXPECT_THROW(parallel_for(100, 4,
                            [](std::size_t i) {
                              if (i == 57) throw EstimationError("boom");
                            }),
               EstimationError);
}

TEST(SimulateTree, AgeLinearMeanMatchesRenewalSolver) {
  auto m = build_model2(1, 1.0, 100.0);  // b(a) = a
  auto e = estimate_M_t(m, long_cell(2), [](const TelomereVector&, double) { return 1.0; }, 4.0, 20000, 12);
  auto bh = bh_mean(LifetimeLaw::age_linear(), 2.0, 1e-3, 4.0);
  EXPECT_NEAR(e.mean, bh.back(), 3.5 * e.se);
}

TEST(SimulateTree, SmallTelomeresSenesce) {
  auto m = build_model1(1, 1.0, 100.0, 0.3);
  std::uint64_t sen = 0;
  for (std::size_t r = 0; r < 1000; ++r) sen += simulate_tree(m, CellState::alive({0.0, 0.0}), 2.0, 100000, 3, r).senescent_daughters;
  EXPECT_GT(sen, 0u);
}

TEST(SimulateTree, LargerBirthRateGivesLargerMean) {
  auto slow = build_model2(1, 1.0, 100.0, {}, {BirthRate::Kind::AgeLinear, {0.0, 1.0}});
  auto fast = build_model2(1, 1.0, 100.0, {}, {BirthRate::Kind::AgeLinear, {1.0, 1.0}});
  auto one = [](const TelomereVector&, double) { return 1.0; };
  auto a = estimate_M_t(slow, CellState::alive({20, 20}), one, 3.0, 4000, 8);
  auto b = estimate_M_t(fast, CellState::alive({20, 20}), one, 3.0, 4000, 8);
  EXPECT_GT(b.mean + 3 * std::hypot(a.se, b.se), a.mean);
  EXPECT_GT(b.mean, a.mean);
}
