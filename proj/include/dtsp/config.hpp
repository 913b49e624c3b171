#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtsp/error.hpp"
#include "dtsp/model.hpp"
#include "dtsp/solvers.hpp"
#include "dtsp/trainer.hpp"

namespace dtsp {

/// Everything a pipeline run can be configured with. Resolution order, lowest
/// first: built-in defaults, named preset, config file, command-line flags.
struct RunConfig {
  std::string preset;
  ModelConfig model;
  TrainConfig train;
  SaConfig sa;
};

inline std::vector<std::string> preset_names() { return {"full-n20", "full-n50", "full-n100", "desk-n10", "desk-n5"}; }

inline RunConfig make_preset(const std::string& name) {
  RunConfig rc;
  rc.preset = name;
  auto full = [&rc](int n, SaConfig sa) {
    rc.model.context_len = n;
    rc.sa = sa;
  };
  if (name == "full-n20") {
    full(20, sa_presets::full_n20());
  } else if (name == "full-n50") {
    full(50, sa_presets::full_n50());
  } else if (name == "full-n100") {
    full(100, sa_presets::full_n100());
  } else if (name == "desk-n10" || name == "desk-n5") {
    rc.model.d_model = 64;
    rc.model.context_len = name == "desk-n10" ? 10 : 5;
    rc.train.lr = 1e-3;
    rc.train.batch_size = 100;
    rc.train.max_epochs = 100;
    rc.sa = sa_presets::desk();
  } else {
    std::string valid;
    for (const auto& p : preset_names()) valid += (valid.empty() ? "" : ", ") + p;
    fail(ErrorCode::ConfigError, "unknown preset '" + name + "' (valid: " + valid + ")");
  }
  return rc;
}

inline void apply_train_json(TrainConfig& t, const nlohmann::json& j) {
  for (const auto& [key, v] : j.items()) {
    if (key == "lr") t.lr = v.get<double>();
    else if (key == "batch_size") t.batch_size = v.get<int>();
    else if (key == "max_epochs") t.max_epochs = v.get<int>();
    else if (key == "c") t.c = v.get<double>();
    else if (key == "alpha") t.alpha = v.get<double>();
    else if (key == "weight_decay") t.weight_decay = v.get<double>();
    else if (key == "betas") {
      const auto b = v.get<std::vector<double>>();
      if (b.size() != 2) fail(ErrorCode::ConfigError, "betas must have two entries");
      t.beta1 = b[0];
      t.beta2 = b[1];
    } else if (key == "eps") t.eps = v.get<double>();
    else if (key == "seed") t.seed = v.get<std::uint64_t>();
    else if (key == "checkpoint_dir") t.checkpoint_dir = v.get<std::string>();
    else if (key == "bc_mode") t.bc_mode = v.get<bool>();
    else if (key == "optimizer") t.optimizer = v.get<std::string>();
    else if (key == "warmup_steps") t.warmup_steps = v.get<long>();
    else if (key == "grad_clip") t.grad_clip = v.get<double>();
    else if (key == "include_final_action") t.include_final_action = v.get<bool>();
    else if (key == "augment") t.augment = v.get<bool>();
    else if (key == "micro_batch") t.micro_batch = v.get<int>();
    else fail(ErrorCode::ConfigError, "unknown train key '" + key + "'");
  }
}

inline void apply_sa_json(SaConfig& s, const nlohmann::json& j) {
  for (const auto& [key, v] : j.items()) {
    if (key == "t_max") s.t_max = v.get<double>();
    else if (key == "t_min") s.t_min = v.get<double>();
    else if (key == "steps") s.steps = v.get<std::int64_t>();
    else if (key == "seed") s.seed = v.get<std::uint64_t>();
    else fail(ErrorCode::ConfigError, "unknown sa key '" + key + "'");
  }
}

/// Resolves preset + config-file layers. `preset_override` (from the command
/// line) wins over a "preset" key inside the file.
inline RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const std::optional<std::string>& preset_override) {
  nlohmann::json j = nlohmann::json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) fail(ErrorCode::IoError, "cannot open config " + file->string());
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ConfigError, file->string() + ": " + e.what());
    }
    if (!j.is_object()) fail(ErrorCode::ConfigError, file->string() + ": top level must be an object");
  }
  std::optional<std::string> preset = preset_override;
  if (!preset && j.contains("preset")) preset = j.at("preset").get<std::string>();
  RunConfig rc = preset ? make_preset(*preset) : RunConfig{};
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "preset") continue;
      if (key == "model") from_json(v, rc.model);
      else if (key == "train") apply_train_json(rc.train, v);
      else if (key == "sa") apply_sa_json(rc.sa, v);
      else fail(ErrorCode::ConfigError, "unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("bad value type: ") + e.what());
  }
  try {
    rc.model.validate();
    rc.train.validate();
    rc.sa.validate();
  } catch (const Error& e) {
    fail(ErrorCode::ConfigError, e.what());
  }
  return rc;
}

}  // namespace dtsp
