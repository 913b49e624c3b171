#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dtsp/error.hpp"

namespace dtsp {

/// Masked logits are pinned to this value instead of -inf so gradients stay finite.
inline constexpr double kMaskedLogit = -1e9;

struct PointerDistribution {
  std::vector<double> probs;
  std::vector<char> mask;  // 1 = visited
};

inline void require_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::InvalidArg, "expectile level must lie in (0,1)");
}

/// Asymmetric squared error |alpha - 1(target < pred)| * (target - pred)^2.
inline double expectile_loss(double target, double pred, double alpha) {
  require_alpha(alpha);
  const double diff = target - pred;
  const double weight = std::abs(alpha - (target < pred ? 1.0 : 0.0));
  return weight * diff * diff;
}

/// d/d(pred) of expectile_loss.
inline double expectile_loss_grad(double target, double pred, double alpha) {
  const double weight = std::abs(alpha - (target < pred ? 1.0 : 0.0));
  return -2.0 * weight * (target - pred);
}

/// Scalar r minimising the mean expectile loss over `samples`. Solved exactly:
/// r is the weighted mean with weights alpha above r and 1-alpha below it.
inline double fit_expectile(std::span<const double> samples, double alpha) {
  require_alpha(alpha);
  if (samples.empty()) fail(ErrorCode::InvalidArg, "cannot fit an expectile to an empty sample");
  std::vector<double> x(samples.begin(), samples.end());
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  // Split k: x[0..k) lie below r, x[k..n) at or above r.
  for (std::size_t k = 0; k <= n; ++k) {
    const double below_w = (1.0 - alpha) * static_cast<double>(k);
    const double above_w = alpha * static_cast<double>(n - k);
    const double r = ((1.0 - alpha) * prefix[k] + alpha * (prefix[n] - prefix[k])) / (below_w + above_w);
    const bool lo_ok = k == 0 || x[k - 1] <= r;
    const bool hi_ok = k == n || r <= x[k];
    if (lo_ok && hi_ok) return r;
  }
  // Unreachable for finite samples: the objective is strictly convex.
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
}

/// Scaled dot-product pointer over node embeddings with visited nodes masked out.
/// `embeddings` is row-major n x d; h_a has d entries.
inline PointerDistribution pointer_distribution(std::span<const double> h_a, std::span<const double> embeddings,
                                                std::span<const char> visited) {
  const std::size_t n = visited.size();
  const std::size_t d = h_a.size();
  if (d == 0 || embeddings.size() != n * d) fail(ErrorCode::ShapeError, "embedding matrix does not match n x d");
  if (std::all_of(visited.begin(), visited.end(), [](char v) { return v != 0; })) {
    fail(ErrorCode::AllVisited, "every node is already visited");
  }
  PointerDistribution dist;
  dist.mask.assign(visited.begin(), visited.end());
  std::vector<double> logits(n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t k = 0; k < d; ++k) dot += h_a[k] * embeddings[i * d + k];
    logits[i] = visited[i] ? kMaskedLogit : dot * scale;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  dist.probs.assign(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (visited[i]) continue;
    dist.probs[i] = std::exp(logits[i] - mx);
    total += dist.probs[i];
  }
  for (auto& p : dist.probs) p /= total;
  return dist;
}

/// Cross-entropy of the pointer distribution at `target`.
inline double action_loss(const PointerDistribution& dist, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= dist.probs.size()) fail(ErrorCode::InvalidArg, "target out of range");
  if (dist.mask[static_cast<std::size_t>(target)]) fail(ErrorCode::TargetVisited, "target node " + std::to_string(target) + " is visited");
  return -std::log(dist.probs[static_cast<std::size_t>(target)]);
}

inline double total_loss(double ce, double ex, double c) {
  if (!(c >= 0.0)) fail(ErrorCode::InvalidArg, "loss balance c must be >= 0");
  return ce + c * ex;
}

}  // namespace dtsp
