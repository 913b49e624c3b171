#include <cmath>

#include <gtest/gtest.h>

#include "dtsp/solvers.hpp"
#include "oracles.hpp"

using namespace dtsp;

namespace {

Instance square() { return Instance({{0, 0}, {0, 1}, {1, 1}, {1, 0}}); }
// The 2x1 rectangle scaled by 1/2 to fit the unit square.
Instance rectangle() { return Instance({{0, 0}, {1, 0}, {1, 0.5}, {0, 0.5}}); }
Instance triangle() { return Instance({{0.1, 0.2}, {0.9, 0.3}, {0.4, 0.8}}); }

double mean_gap(Method m, int n, int count, std::uint64_t seed0) {
  double sum = 0.0;
  for (int i = 0; i < count; ++i) {
    const Instance inst = generate_instance(n, seed0 + static_cast<std::uint64_t>(i));
    const double opt = tour_cost(inst, solve_exact(inst));
    const double got = tour_cost(inst, solve(m, inst));
    EXPECT_GE(got, opt - 1e-12);
    sum += optimality_gap(got, opt);
  }
  return sum / count;
}

}  // namespace

TEST(NearestNeighbor, Rectangle) {
  const Instance r = rectangle();
  const Tour t = solve_nearest_neighbor(r);
  EXPECT_EQ(t, (Tour{0, 3, 2, 1}));
  EXPECT_DOUBLE_EQ(tour_cost(r, t) * 2.0, 6.0);
  EXPECT_EQ(t, oracle::greedy_walk(r));
}

TEST(NearestNeighbor, MatchesGreedyOracle) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Instance inst = generate_instance(12, seed);
    EXPECT_EQ(solve_nearest_neighbor(inst), oracle::greedy_walk(inst)) << "seed " << seed;
  }
}

TEST(Heuristics, ThreeNodesAreOptimal) {
  const Instance t = triangle();
  const double opt = oracle::brute_force_optimum(t);
  for (Method m : {Method::NearestNeighbor, Method::NearestInsertion, Method::FarthestInsertion, Method::SimulatedAnnealing}) {
    EXPECT_NEAR(tour_cost(t, solve(m, t)), opt, 1e-12) << method_name(m);
  }
}

TEST(Heuristics, SquareIsOptimal) {
  for (Method m : {Method::NearestInsertion, Method::FarthestInsertion}) EXPECT_DOUBLE_EQ(tour_cost(square(), solve(m, square())), 4.0);
  EXPECT_DOUBLE_EQ(oracle::brute_force_optimum(square()), 4.0);
  EXPECT_DOUBLE_EQ(tour_cost(square(), solve_exact(square())), 4.0);
}

TEST(Heuristics, OutputsAreValidAndCanonical) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Instance inst = generate_instance(15, seed);
    for (Method m : {Method::NearestNeighbor, Method::NearestInsertion, Method::FarthestInsertion, Method::SimulatedAnnealing}) {
      SaConfig sa = sa_presets::desk();
      sa.seed = seed;
      const Tour t = solve(m, inst, sa);
      EXPECT_FALSE(validate_tour(inst, t)) << method_name(m);
      if (m != Method::NearestNeighbor) EXPECT_EQ(t, canonicalize(t)) << method_name(m);
    }
  }
}

TEST(Heuristics, FarthestBeatsNearestInsertionAtN10) {
  const double fi = mean_gap(Method::FarthestInsertion, 10, 1000, 5000);
  const double ni = mean_gap(Method::NearestInsertion, 10, 1000, 5000);
  EXPECT_LT(fi, ni);
}

TEST(Heuristics, Deterministic) {
  const Instance inst = generate_instance(20, 3);
  SaConfig sa = sa_presets::desk();
  sa.seed = 9;
  for (Method m : {Method::NearestNeighbor, Method::NearestInsertion, Method::FarthestInsertion, Method::SimulatedAnnealing})
    EXPECT_EQ(solve(m, inst, sa), solve(m, inst, sa));
}

TEST(SimulatedAnnealing, ReachesOptimumAtN8) {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Instance inst = generate_instance(8, 100 + seed);
    const SaConfig sa{2.5, 0.025, 20000, seed};
    if (std::fabs(tour_cost(inst, solve_simulated_annealing(inst, sa)) - tour_cost(inst, solve_exact(inst))) < 1e-9) ++hits;
  }
  EXPECT_GE(hits, 95);
}

TEST(SimulatedAnnealing, ColdScheduleIsHillClimbing) {
  const Instance inst = generate_instance(12, 77);
  const SaConfig sa{1e-12, 1e-13, 5000, 3};
  double last = std::numeric_limits<double>::infinity();
  int accepted = 0;
  solve_simulated_annealing(inst, sa, [&](std::int64_t, double, double cost) {
    EXPECT_LE(cost, last + 1e-12);
    last = cost;
    ++accepted;
  });
  EXPECT_GT(accepted, 0);
}

TEST(SimulatedAnnealing, SingleColdStepOnTriangle) {
  const Instance t = triangle();
  EXPECT_NEAR(tour_cost(t, solve_simulated_annealing(t, {1e-12, 1e-13, 1, 0})), oracle::brute_force_optimum(t), 1e-12);
}

TEST(SimulatedAnnealing, RejectsBadConfig) {
  EXPECT_THROW(solve_simulated_annealing(square(), {0.0, 0.0, 10, 0}), Error);
  EXPECT_THROW(solve_simulated_annealing(square(), {1.0, 2.0, 10, 0}), Error);
  EXPECT_THROW(solve_simulated_annealing(square(), {1.0, 0.1, 0, 0}), Error);
}

TEST(SimulatedAnnealing, Presets) {
  const auto p = sa_presets::full_n20();
  EXPECT_EQ(p.t_max, 2.5);
  EXPECT_EQ(p.t_min, 0.025);
  EXPECT_EQ(p.steps, 50000);
}

TEST(Exact, MatchesBruteForce) {
  for (int n = 4; n <= 9; ++n) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const Instance inst = generate_instance(n, 1000 * static_cast<std::uint64_t>(n) + seed);
      const Tour t = solve_exact(inst);
      ASSERT_FALSE(validate_tour(inst, t));
      // Both sides sum the same edges in a possibly different order.
      EXPECT_NEAR(tour_cost(inst, t), oracle::brute_force_optimum(inst), 1e-12) << "n " << n << " seed " << seed;
    }
  }
}

TEST(Exact, TooLarge) {
  try {
    solve_exact(generate_instance(17, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooLarge);
  }
  EXPECT_NO_THROW(solve_exact(generate_instance(kExactMaxNodes, 0)));
}

TEST(Methods, ParseListsValidNames) {
  EXPECT_EQ(parse_method("fi"), Method::FarthestInsertion);
  try {
    parse_method("xyz");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownMethod);
    EXPECT_NE(std::string(e.what()).find("nn, ni, fi, sa"), std::string::npos);
  }
}
