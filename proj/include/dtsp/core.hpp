#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtsp/error.hpp"
#include "dtsp/random.hpp"

namespace dtsp {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// A 2D Euclidean TSP instance in the unit square. Node 0 is the depot.
class Instance {
 public:
  Instance() = default;

  explicit Instance(std::vector<Point> coords, std::string id = {}) : coords_(std::move(coords)), id_(std::move(id)) {
    if (coords_.size() < 3) fail(ErrorCode::InvalidArg, "instance needs at least 3 nodes, got " + std::to_string(coords_.size()));
    for (std::size_t i = 0; i < coords_.size(); ++i) {
      const auto& p = coords_[i];
      if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
        fail(ErrorCode::InvalidArg, "node " + std::to_string(i) + " lies outside the unit square");
      }
    }
  }

  int n() const { return static_cast<int>(coords_.size()); }
  const std::vector<Point>& coords() const { return coords_; }
  const Point& operator[](int i) const { return coords_[static_cast<std::size_t>(i)]; }
  const std::string& id() const { return id_; }
  void set_id(std::string id) { id_ = std::move(id); }

  double dist(int i, int j) const { return distance((*this)[i], (*this)[j]); }

  friend bool operator==(const Instance&, const Instance&) = default;

 private:
  std::vector<Point> coords_;
  std::string id_;
};

using Tour = std::vector<int>;

/// Returns the first violated tour invariant, or nullopt when the tour is valid.
inline std::optional<std::string> validate_tour(const Instance& instance, std::span<const int> tour) {
  const int n = instance.n();
  if (static_cast<int>(tour.size()) != n) {
    return "wrong length: expected " + std::to_string(n) + ", got " + std::to_string(tour.size());
  }
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (int v : tour) {
    if (v < 0 || v >= n || seen[static_cast<std::size_t>(v)]) return std::string("not a permutation");
    seen[static_cast<std::size_t>(v)] = 1;
  }
  if (tour[0] != 0) return std::string("depot not first");
  return std::nullopt;
}

inline void require_valid_tour(const Instance& instance, std::span<const int> tour) {
  if (auto violation = validate_tour(instance, tour)) fail(ErrorCode::InvalidTour, *violation);
}

/// Closed-cycle Euclidean length, including the return edge to the depot.
inline double tour_cost(const Instance& instance, std::span<const int> tour) {
  require_valid_tour(instance, tour);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < tour.size(); ++i) total += instance.dist(tour[i], tour[i + 1]);
  return total + instance.dist(tour.back(), tour.front());
}

/// Depot first, and the second node is the smaller of the depot's two neighbours.
inline Tour canonicalize(Tour tour) {
  if (tour.empty()) return tour;
  auto depot = std::find(tour.begin(), tour.end(), 0);
  if (depot == tour.end()) fail(ErrorCode::InvalidTour, "depot missing");
  std::rotate(tour.begin(), depot, tour.end());
  if (tour.size() > 2 && tour[1] > tour.back()) std::reverse(tour.begin() + 1, tour.end());
  return tour;
}

/// n points i.i.d. uniform on [0,1]^2; a pure function of (n, seed).
inline Instance generate_instance(int n, std::uint64_t seed) {
  if (n < 3) fail(ErrorCode::InvalidArg, "n must be >= 3, got " + std::to_string(n));
  Rng rng(seed);
  std::vector<Point> coords(static_cast<std::size_t>(n));
  for (auto& p : coords) {
    p.x = uniform01(rng);
    p.y = uniform01(rng);
  }
  return Instance(std::move(coords));
}

/// Percent excess of pred_cost over opt_cost.
inline double optimality_gap(double pred_cost, double opt_cost) {
  if (!(opt_cost > 0.0)) fail(ErrorCode::InvalidArg, "optimal cost must be positive");
  return 100.0 * (pred_cost - opt_cost) / opt_cost;
}

}  // namespace dtsp
