#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "dtsp/error.hpp"
#include "dtsp/model.hpp"

namespace dtsp {

struct OptimizerConfig {
  /// "adamw" or "schedule_free_adamw".
  std::string kind = "adamw";
  double lr = 0.0025;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// Linear warmup length for the schedule-free variant.
  long warmup_steps = 0;
};

/// Updates parameters in place from a gradient of the same shape.
template <typename T>
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(ModelParams<T>& params, const ModelParams<T>& grads) = 0;
  /// Parameters to evaluate or checkpoint; differs from the training iterate
  /// for averaging optimizers.
  virtual ModelParams<T> eval_params(const ModelParams<T>& params) const { return params; }
};

/// Adam with decoupled weight decay and constant learning rate.
template <typename T>
class AdamW final : public Optimizer<T> {
 public:
  AdamW(const ModelConfig& model, OptimizerConfig cfg)
      : cfg_(std::move(cfg)), m_(ModelParams<T>::zeros(model)), v_(ModelParams<T>::zeros(model)) {}

  void step(ModelParams<T>& params, const ModelParams<T>& grads) override {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto step_size = static_cast<T>(cfg_.lr / bc1);
    const auto decay = static_cast<T>(1.0 - cfg_.lr * cfg_.weight_decay);
    const auto b1 = static_cast<T>(cfg_.beta1);
    const auto b2 = static_cast<T>(cfg_.beta2);
    const auto inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<T>(cfg_.eps);
    auto p = params.tensors();
    const auto g = grads.tensors();
    auto m = m_.tensors();
    auto v = v_.tensors();
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto pa = p[i].second->array();
      const auto ga = g[i].second->array();
      auto ma = m[i].second->array();
      auto va = v[i].second->array();
      if (cfg_.weight_decay != 0.0) pa *= decay;
      ma = b1 * ma + (T(1) - b1) * ga;
      va = b2 * va + (T(1) - b2) * ga.square();
      pa -= step_size * ma / (va.sqrt() * inv_sqrt_bc2 + eps);
    }
  }

 private:
  OptimizerConfig cfg_;
  ModelParams<T> m_;
  ModelParams<T> v_;
  long t_ = 0;
};

/// Schedule-free AdamW: gradients are taken at an interpolation y between
/// the base iterate z and its running average x; x is what gets evaluated.
/// `params` holds y between steps.
template <typename T>
class ScheduleFreeAdamW final : public Optimizer<T> {
 public:
  ScheduleFreeAdamW(const ModelConfig& model, const ModelParams<T>& initial, OptimizerConfig cfg)
      : cfg_(std::move(cfg)), z_(initial), v_(ModelParams<T>::zeros(model)) {}

  void step(ModelParams<T>& params, const ModelParams<T>& grads) override {
    const double warm = cfg_.warmup_steps > 0 ? std::min(1.0, static_cast<double>(k_ + 1) / static_cast<double>(cfg_.warmup_steps)) : 1.0;
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(k_ + 1));
    const double lr = cfg_.lr * warm * std::sqrt(bc2);
    lr_max_ = std::max(lr_max_, lr);
    const double weight = lr_max_ * lr_max_;
    weight_sum_ += weight;
    const double ckp1 = weight_sum_ > 0.0 ? weight / weight_sum_ : 0.0;
    const auto y_step = static_cast<T>(lr * (cfg_.beta1 * (1.0 - ckp1) - 1.0));
    const auto z_step = static_cast<T>(lr);
    const auto mix = static_cast<T>(ckp1);
    const auto b2 = static_cast<T>(cfg_.beta2);
    const auto eps = static_cast<T>(cfg_.eps);
    const auto wd = static_cast<T>(cfg_.weight_decay);

    auto y = params.tensors();
    const auto g = grads.tensors();
    auto z = z_.tensors();
    auto v = v_.tensors();
    for (std::size_t i = 0; i < y.size(); ++i) {
      auto ya = y[i].second->array();
      const auto ga = g[i].second->array();
      auto za = z[i].second->array();
      auto va = v[i].second->array();
      va = b2 * va + (T(1) - b2) * ga.square();
      auto normalized = (ga / (va.sqrt() + eps) + wd * ya).eval();
      ya += mix * (za - ya);
      ya += y_step * normalized;
      za -= z_step * normalized;
    }
    ++k_;
  }

  ModelParams<T> eval_params(const ModelParams<T>& params) const override {
    ModelParams<T> x = params;
    auto xs = x.tensors();
    const auto z = z_.tensors();
    const auto w = static_cast<T>(1.0 - 1.0 / cfg_.beta1);
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i].second->array() += w * (z[i].second->array() - xs[i].second->array());
    return x;
  }

 private:
  OptimizerConfig cfg_;
  ModelParams<T> z_;
  ModelParams<T> v_;
  long k_ = 0;
  double lr_max_ = 0.0;
  double weight_sum_ = 0.0;
};

template <typename T>
std::unique_ptr<Optimizer<T>> make_optimizer(const ModelConfig& model, const ModelParams<T>& initial, const OptimizerConfig& cfg) {
  if (cfg.kind == "adamw") return std::make_unique<AdamW<T>>(model, cfg);
  if (cfg.kind == "schedule_free_adamw") return std::make_unique<ScheduleFreeAdamW<T>>(model, initial, cfg);
  fail(ErrorCode::ConfigError, "unknown optimizer '" + cfg.kind + "' (valid: adamw, schedule_free_adamw)");
}

}  // namespace dtsp
