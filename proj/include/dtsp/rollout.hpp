#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "dtsp/checkpoint.hpp"
#include "dtsp/core.hpp"
#include "dtsp/error.hpp"
#include "dtsp/io.hpp"
#include "dtsp/model.hpp"
#include "dtsp/random.hpp"

namespace dtsp {

/// How the RTG token is formed at inference, and how actions are decoded.
struct RtgMode {
  enum class Variant { Predicted, PredictedOffset, Fixed, BcZero };

  Variant variant = Variant::Predicted;
  /// Offset for PredictedOffset, constant for Fixed.
  double value = 0.0;
  bool sample = false;
  std::uint64_t seed = 0;

  static RtgMode predicted() { return {}; }
  static RtgMode predicted_offset(double offset) { return {Variant::PredictedOffset, offset}; }
  static RtgMode fixed(double value) { return {Variant::Fixed, value}; }
  static RtgMode bc_zero() { return {Variant::BcZero, 0.0}; }

  std::string name() const {
    switch (variant) {
      case Variant::Predicted: return "predicted";
      case Variant::PredictedOffset: return "predicted_offset(" + io::format_double(value) + ")";
      case Variant::Fixed: return "fixed(" + io::format_double(value) + ")";
      case Variant::BcZero: return "bc_zero";
    }
    return "?";
  }

  void validate() const {
    if (!std::isfinite(value)) fail(ErrorCode::InvalidArg, "RTG offset/value must be finite");
  }
};

struct RolloutResult {
  Tour tour;
  /// Predicted RTG before each of the N-1 decisions.
  std::vector<double> rtg_pred;
  /// Pointer distribution used at each decision, when requested.
  std::vector<std::vector<double>> step_probs;
};

/// Greedy or sampled autoregressive construction from the depot. Per step the
/// decoder first predicts the RTG at the obs token, the RTG token is formed
/// from the mode, and the pointer head chooses among unvisited nodes.
inline RolloutResult rollout(const DecisionTransformer<float>& model, const Instance& instance, const RtgMode& mode,
                             bool keep_probs = false) {
  mode.validate();
  const int n = instance.n();
  if (n > model.config().context_len) {
    fail(ErrorCode::ContextOverflow, "instance has " + std::to_string(n) + " nodes, context_len is " + std::to_string(model.config().context_len));
  }
  const auto emb = model.encode_nodes(instance);
  Rng rng(mode.seed);
  RolloutResult out;
  std::vector<int> obs{0};
  std::vector<int> act{0};
  std::vector<double> rtg{0.0};
  std::vector<char> visited(static_cast<std::size_t>(n), 0);
  visited[0] = 1;

  for (int t = 0; t + 1 < n; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    rtg[ts] = 0.0;
    act[ts] = 0;
    const double predicted = static_cast<double>(model.decode(emb, obs, rtg, act).rtg_pred[ts]);
    if (!std::isfinite(predicted)) fail(ErrorCode::NonFiniteOutput, "predicted RTG is not finite at step " + std::to_string(t));
    out.rtg_pred.push_back(predicted);
    switch (mode.variant) {
      case RtgMode::Variant::Predicted: rtg[ts] = predicted; break;
      case RtgMode::Variant::PredictedOffset: rtg[ts] = predicted + mode.value; break;
      case RtgMode::Variant::Fixed: rtg[ts] = mode.value; break;
      case RtgMode::Variant::BcZero: rtg[ts] = 0.0; break;
    }
    const auto dec = model.decode(emb, obs, rtg, act);
    const auto dist = model.pointer(emb, dec.action_hidden, t, visited);
    int pick = -1;
    if (mode.sample) {
      const double u = uniform01(rng);
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        if (visited[static_cast<std::size_t>(i)]) continue;
        acc += dist.probs[static_cast<std::size_t>(i)];
        pick = i;
        if (u < acc) break;
      }
    } else {
      double best = -1.0;
      for (int i = 0; i < n; ++i) {
        const double p = dist.probs[static_cast<std::size_t>(i)];
        if (!std::isfinite(p)) fail(ErrorCode::NonFiniteOutput, "pointer probability is not finite at step " + std::to_string(t));
        if (!visited[static_cast<std::size_t>(i)] && p > best) {
          best = p;
          pick = i;
        }
      }
    }
    if (keep_probs) out.step_probs.push_back(dist.probs);
    visited[static_cast<std::size_t>(pick)] = 1;
    act[ts] = pick;
    obs.push_back(pick);
    act.push_back(0);
    rtg.push_back(0.0);
  }
  out.tour = std::move(obs);
  return out;
}

inline RolloutResult rollout(const Checkpoint& ck, const Instance& instance, const RtgMode& mode) {
  const DecisionTransformer<float> model(ck.model, ck.params);
  return rollout(model, instance, mode);
}

struct SweepRow {
  double offset = 0.0;
  double mean_cost = 0.0;
  double std_cost = 0.0;
  std::optional<double> mean_gap;
  std::optional<double> std_gap;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  /// Row with the lowest mean cost; ties go to the offset closest to zero.
  std::size_t argmin = 0;
};

/// Greedy predicted-offset rollouts for every offset. `optima`, when given,
/// must align with `instances` and adds per-instance-averaged gaps.
inline SweepReport offset_sweep(const DecisionTransformer<float>& model, const std::vector<Instance>& instances,
                                const std::vector<double>& offsets, const std::optional<std::vector<double>>& optima = std::nullopt) {
  if (offsets.empty()) fail(ErrorCode::InvalidArg, "offset list is empty");
  if (instances.empty()) fail(ErrorCode::InvalidArg, "no instances to sweep");
  if (optima && optima->size() != instances.size()) fail(ErrorCode::Mismatch, "optima do not align with instances");
  SweepReport report;
  const auto m = static_cast<double>(instances.size());
  for (double offset : offsets) {
    SweepRow row;
    row.offset = offset;
    std::vector<double> costs;
    std::vector<double> gaps;
    for (std::size_t i = 0; i < instances.size(); ++i) {
      const auto res = rollout(model, instances[i], RtgMode::predicted_offset(offset));
      costs.push_back(tour_cost(instances[i], res.tour));
      if (optima) gaps.push_back(optimality_gap(costs.back(), (*optima)[i]));
    }
    auto mean_std = [m](const std::vector<double>& xs) {
      double mean = 0.0;
      for (double x : xs) mean += x;
      mean /= m;
      double sq = 0.0;
      for (double x : xs) sq += (x - mean) * (x - mean);
      return std::pair{mean, std::sqrt(sq / m)};
    };
    std::tie(row.mean_cost, row.std_cost) = mean_std(costs);
    if (optima) {
      const auto [mg, sg] = mean_std(gaps);
      row.mean_gap = mg;
      row.std_gap = sg;
    }
    report.rows.push_back(row);
  }
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    const auto& cur = report.rows[i];
    const auto& best = report.rows[report.argmin];
    if (cur.mean_cost < best.mean_cost || (cur.mean_cost == best.mean_cost && std::abs(cur.offset) < std::abs(best.offset))) {
      report.argmin = i;
    }
  }
  return report;
}

}  // namespace dtsp
