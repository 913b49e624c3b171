#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtsp/checkpoint.hpp"
#include "dtsp/dataset.hpp"
#include "dtsp/error.hpp"
#include "dtsp/io.hpp"
#include "dtsp/model.hpp"
#include "dtsp/optimizer.hpp"
#include "dtsp/random.hpp"

namespace dtsp {

struct TrainConfig {
  double lr = 0.0025;
  int batch_size = 1000;
  int max_epochs = 2000;
  double c = 0.5;
  double alpha = 0.99;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::string checkpoint_dir;
  bool bc_mode = false;
  std::string optimizer = "adamw";
  long warmup_steps = 0;
  /// Global-norm gradient clip; 0 disables.
  double grad_clip = 1.0;
  bool include_final_action = false;
  /// Random dihedral symmetry of the unit square per record and epoch.
  bool augment = false;
  /// Records per forward/backward chunk; bounds activation memory only.
  int micro_batch = 250;

  void validate() const {
    if (!(lr >= 0.0)) fail(ErrorCode::InvalidArg, "lr must be >= 0");
    if (batch_size < 1 || micro_batch < 1) fail(ErrorCode::InvalidArg, "batch sizes must be >= 1");
    if (max_epochs < 0) fail(ErrorCode::InvalidArg, "max_epochs must be >= 0");
    if (!(c >= 0.0)) fail(ErrorCode::InvalidArg, "c must be >= 0");
    require_alpha(alpha);
    if (!(grad_clip >= 0.0)) fail(ErrorCode::InvalidArg, "grad_clip must be >= 0");
  }

  LossOptions loss_options() const { return {c, alpha, bc_mode, include_final_action}; }

  OptimizerConfig optimizer_config() const { return {optimizer, lr, beta1, beta2, eps, weight_decay, warmup_steps}; }
};

struct EpochStats {
  int epoch = 0;
  LossBreakdown train;
  double val_total = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_val = 0.0;
};

inline nlohmann::json to_json_line(const EpochStats& e, bool best) {
  return {{"epoch", e.epoch},           {"train_ce", e.train.ce}, {"train_expectile", e.train.expectile},
          {"train_total", e.train.total}, {"val_total", e.val_total}, {"seconds", e.seconds}, {"best", best}};
}

struct TrainResult {
  Checkpoint best;
  TrainReport report;
};

/// Records converted to model inputs once, up front.
class TrajectorySet {
 public:
  TrajectorySet(const Dataset& ds, bool zero_rtg) {
    instances_.reserve(ds.records.size());
    trajectories_.reserve(ds.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      instances_.push_back(ds.records[i].instance);
      trajectories_.push_back(tour_to_trajectory(instances_.back(), ds.tour(i)));
      if (zero_rtg) std::fill(trajectories_.back().rtg.begin(), trajectories_.back().rtg.end(), 0.0);
    }
  }

  std::size_t size() const { return instances_.size(); }
  const Instance& instance(std::size_t i) const { return instances_[i]; }
  const Trajectory& trajectory(std::size_t i) const { return trajectories_[i]; }
  BatchItem item(std::size_t i) const { return {&instances_[i], &trajectories_[i]}; }

 private:
  std::vector<Instance> instances_;
  std::vector<Trajectory> trajectories_;
};

namespace detail {

inline Point dihedral(const Point& p, unsigned g) {
  double x = p.x, y = p.y;
  if (g & 1U) x = 1.0 - x;
  if (g & 2U) y = 1.0 - y;
  if (g & 4U) std::swap(x, y);
  return {x, y};
}

inline Instance transform_instance(const Instance& inst, unsigned g) {
  std::vector<Point> coords;
  coords.reserve(inst.coords().size());
  for (const auto& p : inst.coords()) coords.push_back(dihedral(p, g));
  return Instance(std::move(coords), inst.id());
}

template <typename T>
double global_norm(const ModelParams<T>& g) {
  double sq = 0.0;
  for (const auto& [name, m] : g.tensors()) sq += static_cast<double>(m->squaredNorm());
  return std::sqrt(sq);
}

template <typename T>
void scale_params(ModelParams<T>& g, double s) {
  for (auto& [name, m] : g.tensors()) *m *= static_cast<T>(s);
}

template <typename T>
void add_scaled(ModelParams<T>& acc, const ModelParams<T>& g, double s) {
  auto a = acc.tensors();
  const auto b = g.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) *a[i].second += static_cast<T>(s) * *b[i].second;
}

}  // namespace detail

/// Mean loss over a set, evaluated in chunks; never touches parameters.
template <typename T>
LossBreakdown evaluate_loss(const DecisionTransformer<T>& model, const TrajectorySet& set, const LossOptions& opt, int chunk = 250) {
  LossBreakdown sum;
  std::vector<BatchItem> batch;
  for (std::size_t start = 0; start < set.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(set.size(), start + static_cast<std::size_t>(chunk));
    batch.clear();
    for (std::size_t i = start; i < end; ++i) batch.push_back(set.item(i));
    const auto part = model.loss(batch, opt);
    const auto w = static_cast<double>(end - start);
    sum.ce += part.ce * w;
    sum.expectile += part.expectile * w;
    sum.total += part.total * w;
  }
  const auto n = static_cast<double>(set.size());
  return {sum.ce / n, sum.expectile / n, sum.total / n};
}

/// Validation total loss of a checkpoint using its own training-time c and alpha.
inline double validate(const Checkpoint& ck, const Dataset& val_set) {
  if (val_set.records.empty()) fail(ErrorCode::DatasetMismatch, "validation set is empty");
  if (val_set.meta.n != ck.model.context_len) {
    fail(ErrorCode::DatasetMismatch, "checkpoint expects N=" + std::to_string(ck.model.context_len) + ", dataset has N=" + std::to_string(val_set.meta.n));
  }
  const DecisionTransformer<float> model(ck.model, ck.params);
  const TrajectorySet set(val_set, ck.loss.bc_mode);
  return evaluate_loss(model, set, ck.loss).total;
}

using EpochCallback = std::function<void(const EpochStats&, bool is_best)>;

/// Mini-batch training with per-epoch validation; keeps the checkpoint with the
/// lowest validation total loss. With a checkpoint_dir, writes best.ckpt and
/// train_report.jsonl there after every epoch.
inline TrainResult train(const Dataset& train_set, const Dataset& val_set, ModelConfig model_cfg, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}, std::optional<ModelParams<float>> initial = std::nullopt) {
  cfg.validate();
  if (train_set.records.empty() || val_set.records.empty()) fail(ErrorCode::DatasetMismatch, "train and validation sets must be non-empty");
  if (train_set.meta.n != val_set.meta.n) {
    fail(ErrorCode::DatasetMismatch, "train N=" + std::to_string(train_set.meta.n) + " but validation N=" + std::to_string(val_set.meta.n));
  }
  model_cfg.context_len = train_set.meta.n;
  model_cfg.alpha = cfg.alpha;
  model_cfg.validate();

  const LossOptions loss_opt = cfg.loss_options();
  const TrajectorySet train_data(train_set, cfg.bc_mode);
  const TrajectorySet val_data(val_set, cfg.bc_mode);

  DecisionTransformer<float> model(model_cfg, initial ? std::move(*initial) : ModelParams<float>::init(model_cfg, derive_seed(cfg.seed, 0x1417)));
  auto optimizer = make_optimizer(model_cfg, model.params(), cfg.optimizer_config());
  auto grads = ModelParams<float>::zeros(model_cfg);
  auto micro_grads = ModelParams<float>::zeros(model_cfg);

  TrainResult result;
  result.best = {model_cfg, loss_opt, optimizer->eval_params(model.params())};
  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Instance> augmented;
  std::vector<BatchItem> micro;
  const std::filesystem::path dir = cfg.checkpoint_dir;
  std::string report_text;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    shuffle(std::span<std::size_t>(order), rng);

    LossBreakdown epoch_sum;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const auto batch_n = static_cast<double>(end - start);
      grads.set_zero();
      for (std::size_t ms = start; ms < end; ms += static_cast<std::size_t>(cfg.micro_batch)) {
        const std::size_t me = std::min(end, ms + static_cast<std::size_t>(cfg.micro_batch));
        micro.clear();
        augmented.clear();
        augmented.reserve(me - ms);
        for (std::size_t i = ms; i < me; ++i) {
          BatchItem item = train_data.item(order[i]);
          if (cfg.augment) {
            augmented.push_back(detail::transform_instance(*item.instance, static_cast<unsigned>(uniform_index(rng, 8))));
            item.instance = &augmented.back();
          }
          micro.push_back(item);
        }
        micro_grads.set_zero();
        const auto part = model.loss(micro, loss_opt, &micro_grads);
        if (!std::isfinite(part.total)) {
          fail(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", batch at record " + std::to_string(start) +
                                             ": ce=" + std::to_string(part.ce) + " expectile=" + std::to_string(part.expectile));
        }
        const double w = static_cast<double>(me - ms);
        detail::add_scaled(grads, micro_grads, w / batch_n);
        epoch_sum.ce += part.ce * w;
        epoch_sum.expectile += part.expectile * w;
        epoch_sum.total += part.total * w;
      }
      if (cfg.grad_clip > 0.0) {
        const double norm = detail::global_norm(grads);
        if (!std::isfinite(norm)) fail(ErrorCode::NonFiniteLoss, "non-finite gradient norm in epoch " + std::to_string(epoch));
        if (norm > cfg.grad_clip) detail::scale_params(grads, cfg.grad_clip / norm);
      }
      optimizer->step(model.params(), grads);
    }

    EpochStats stats;
    stats.epoch = epoch;
    const auto n = static_cast<double>(order.size());
    stats.train = {epoch_sum.ce / n, epoch_sum.expectile / n, epoch_sum.total / n};
    const DecisionTransformer<float> eval_model(model_cfg, optimizer->eval_params(model.params()));
    stats.val_total = evaluate_loss(eval_model, val_data, loss_opt).total;
    if (!std::isfinite(stats.val_total)) fail(ErrorCode::NonFiniteLoss, "validation loss is not finite in epoch " + std::to_string(epoch));
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    const bool is_best = result.report.best_epoch < 0 || stats.val_total < result.report.best_val;
    if (is_best) {
      result.report.best_epoch = epoch;
      result.report.best_val = stats.val_total;
      result.best.params = eval_model.params();
    }
    result.report.epochs.push_back(stats);
    if (!dir.empty()) {
      if (is_best) save_checkpoint(dir / "best.ckpt", result.best);
      report_text += to_json_line(stats, is_best).dump() + "\n";
      io::write_file_atomic(dir / "train_report.jsonl", report_text);
    }
    if (on_epoch) on_epoch(stats, is_best);
  }
  return result;
}

}  // namespace dtsp
