#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "dtsp/core.hpp"
#include "dtsp/error.hpp"
#include "dtsp/random.hpp"

namespace dtsp {

/// Exponential-cooling simulated annealing schedule.
struct SaConfig {
  double t_max = 2.5;
  double t_min = 0.025;
  std::int64_t steps = 50000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(t_max > 0.0) || !(t_min > 0.0)) fail(ErrorCode::InvalidArg, "SA temperatures must be positive");
    if (!(t_min < t_max)) fail(ErrorCode::InvalidArg, "SA requires t_min < t_max");
    if (steps < 1) fail(ErrorCode::InvalidArg, "SA requires steps >= 1");
  }
};

namespace sa_presets {
// Generation recipes from the original experiments, by node count.
inline SaConfig full_n20() { return {2.5, 0.025, 50000, 0}; }
inline SaConfig full_n50() { return {2.5, 0.0025, 5000000, 0}; }
inline SaConfig full_n100() { return {2.5, 0.0025, 5000000, 0}; }
// Cheaper schedule for laptop-sized corpora.
inline SaConfig desk() { return {2.5, 0.025, 20000, 0}; }
}  // namespace sa_presets

enum class Method { NearestNeighbor, NearestInsertion, FarthestInsertion, SimulatedAnnealing };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::NearestNeighbor: return "nn";
    case Method::NearestInsertion: return "ni";
    case Method::FarthestInsertion: return "fi";
    case Method::SimulatedAnnealing: return "sa";
  }
  return "?";
}

inline Method parse_method(std::string_view name) {
  if (name == "nn") return Method::NearestNeighbor;
  if (name == "ni") return Method::NearestInsertion;
  if (name == "fi") return Method::FarthestInsertion;
  if (name == "sa") return Method::SimulatedAnnealing;
  fail(ErrorCode::UnknownMethod, "unknown method '" + std::string(name) + "' (valid: nn, ni, fi, sa)");
}

/// Greedy walk from the depot to the closest unvisited node (lowest index on ties).
/// The result keeps construction order and is not canonicalized.
inline Tour solve_nearest_neighbor(const Instance& instance) {
  const int n = instance.n();
  std::vector<char> visited(static_cast<std::size_t>(n), 0);
  Tour tour{0};
  visited[0] = 1;
  int current = 0;
  for (int step = 1; step < n; ++step) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int v = 0; v < n; ++v) {
      if (visited[static_cast<std::size_t>(v)]) continue;
      const double d = instance.dist(current, v);
      if (d < best_d) {
        best_d = d;
        best = v;
      }
    }
    visited[static_cast<std::size_t>(best)] = 1;
    tour.push_back(best);
    current = best;
  }
  return tour;
}

namespace detail {

/// Shared insertion driver. `farthest` switches node selection from the
/// minimum to the maximum of each node's distance to the partial tour.
inline Tour solve_insertion(const Instance& instance, bool farthest) {
  const int n = instance.n();
  std::vector<char> in_tour(static_cast<std::size_t>(n), 0);
  std::vector<double> to_tour(static_cast<std::size_t>(n));
  Tour tour{0};
  in_tour[0] = 1;
  for (int v = 0; v < n; ++v) to_tour[static_cast<std::size_t>(v)] = instance.dist(0, v);

  for (int added = 1; added < n; ++added) {
    int pick = -1;
    for (int v = 1; v < n; ++v) {
      if (in_tour[static_cast<std::size_t>(v)]) continue;
      const double d = to_tour[static_cast<std::size_t>(v)];
      if (pick < 0 || (farthest ? d > to_tour[static_cast<std::size_t>(pick)] : d < to_tour[static_cast<std::size_t>(pick)])) {
        pick = v;
      }
    }

    const std::size_t m = tour.size();
    std::size_t best_pos = 0;
    double best_inc = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      const int a = tour[i];
      const int b = tour[(i + 1) % m];
      const double inc = instance.dist(a, pick) + instance.dist(pick, b) - instance.dist(a, b);
      if (inc < best_inc) {
        best_inc = inc;
        best_pos = i;
      }
    }
    tour.insert(tour.begin() + static_cast<std::ptrdiff_t>(best_pos + 1), pick);
    in_tour[static_cast<std::size_t>(pick)] = 1;
    for (int v = 0; v < n; ++v) {
      to_tour[static_cast<std::size_t>(v)] = std::min(to_tour[static_cast<std::size_t>(v)], instance.dist(pick, v));
    }
  }
  return canonicalize(std::move(tour));
}

}  // namespace detail

inline Tour solve_nearest_insertion(const Instance& instance) { return detail::solve_insertion(instance, false); }

inline Tour solve_farthest_insertion(const Instance& instance) { return detail::solve_insertion(instance, true); }

/// Called after every accepted SA move with (iteration, temperature, current cost).
using SaAcceptHook = std::function<void(std::int64_t, double, double)>;

/// Pair-swap annealing from the identity tour. Returns the best tour seen, canonicalized.
inline Tour solve_simulated_annealing(const Instance& instance, const SaConfig& cfg, const SaAcceptHook& on_accept = {}) {
  cfg.validate();
  const int n = instance.n();
  Tour tour(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) tour[static_cast<std::size_t>(i)] = i;

  auto at = [&](int pos) { return tour[static_cast<std::size_t>(((pos % n) + n) % n)]; };
  auto swap_delta = [&](int i, int j) {
    const int a = at(i);
    const int b = at(j);
    const int p = at(i - 1);
    const int q = at(j + 1);
    if (j == i + 1) {
      return instance.dist(p, b) + instance.dist(a, q) - instance.dist(p, a) - instance.dist(b, q);
    }
    const int ni = at(i + 1);
    const int pj = at(j - 1);
    return instance.dist(p, b) + instance.dist(b, ni) + instance.dist(pj, a) + instance.dist(a, q) -
           instance.dist(p, a) - instance.dist(a, ni) - instance.dist(pj, b) - instance.dist(b, q);
  };

  Rng rng(cfg.seed);
  double cost = tour_cost(instance, tour);
  Tour best = tour;
  double best_cost = cost;
  const double log_ratio = std::log(cfg.t_min / cfg.t_max);
  const auto slots = static_cast<std::uint64_t>(n - 1);

  for (std::int64_t k = 0; k < cfg.steps; ++k) {
    const double temperature = cfg.t_max * std::exp(log_ratio * static_cast<double>(k) / static_cast<double>(cfg.steps));
    int i = 1 + static_cast<int>(uniform_index(rng, slots));
    int j = 1 + static_cast<int>(uniform_index(rng, slots - 1));
    if (j >= i) ++j;
    if (i > j) std::swap(i, j);

    const double delta = swap_delta(i, j);
    if (delta <= 0.0 || uniform01(rng) < std::exp(-delta / temperature)) {
      std::swap(tour[static_cast<std::size_t>(i)], tour[static_cast<std::size_t>(j)]);
      cost += delta;
      if (on_accept) on_accept(k, temperature, cost);
      if (cost < best_cost) {
        best_cost = cost;
        best = tour;
      }
    }
  }
  return canonicalize(std::move(best));
}

inline constexpr int kExactMaxNodes = 16;

/// Held-Karp over subsets of non-depot nodes. The walk takes the lowest-index
/// successor attaining the optimum; since a tour and its reversal can differ in
/// the last bit, the result is canonicalized afterwards.
inline Tour solve_exact(const Instance& instance) {
  const int n = instance.n();
  if (n > kExactMaxNodes) {
    fail(ErrorCode::TooLarge, "exact solver supports N <= " + std::to_string(kExactMaxNodes) + ", got " + std::to_string(n));
  }
  const int m = n - 1;  // node v <-> bit v-1
  const std::size_t full = (std::size_t{1} << m) - 1;
  const auto cell = [m](std::size_t set, int v) { return set * static_cast<std::size_t>(m) + static_cast<std::size_t>(v - 1); };

  // remaining[S][v]: cheapest way to finish from v having visited S (v in S), back to the depot.
  std::vector<double> remaining((full + 1) * static_cast<std::size_t>(m), std::numeric_limits<double>::infinity());
  for (int v = 1; v < n; ++v) remaining[cell(full, v)] = instance.dist(v, 0);
  for (std::size_t set = full; set-- > 1;) {
    for (int v = 1; v < n; ++v) {
      if (!(set >> (v - 1) & 1U)) continue;
      double best = std::numeric_limits<double>::infinity();
      for (int k = 1; k < n; ++k) {
        if (set >> (k - 1) & 1U) continue;
        best = std::min(best, instance.dist(v, k) + remaining[cell(set | std::size_t{1} << (k - 1), k)]);
      }
      remaining[cell(set, v)] = best;
    }
  }

  // Forward walk, taking the lowest-index successor that attains the stored optimum.
  Tour tour{0};
  std::size_t set = 0;
  int current = 0;
  double target = std::numeric_limits<double>::infinity();
  for (int k = 1; k < n; ++k) target = std::min(target, instance.dist(0, k) + remaining[cell(std::size_t{1} << (k - 1), k)]);
  for (int step = 1; step < n; ++step) {
    for (int k = 1; k < n; ++k) {
      if (set >> (k - 1) & 1U) continue;
      const std::size_t next_set = set | std::size_t{1} << (k - 1);
      const double value = instance.dist(current, k) + remaining[cell(next_set, k)];
      if (value == target) {
        tour.push_back(k);
        set = next_set;
        current = k;
        target = remaining[cell(next_set, k)];
        break;
      }
    }
  }
  return canonicalize(std::move(tour));
}

/// Dispatch by method; `sa` uses `sa_cfg` (its seed included).
inline Tour solve(Method method, const Instance& instance, const SaConfig& sa_cfg = {}) {
  switch (method) {
    case Method::NearestNeighbor: return solve_nearest_neighbor(instance);
    case Method::NearestInsertion: return solve_nearest_insertion(instance);
    case Method::FarthestInsertion: return solve_farthest_insertion(instance);
    case Method::SimulatedAnnealing: return solve_simulated_annealing(instance, sa_cfg);
  }
  fail(ErrorCode::UnknownMethod, "unhandled method");
}

}  // namespace dtsp
