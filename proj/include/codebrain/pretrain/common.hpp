#pragma once

// Shared training configuration, divergence handling and per-step seeding.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "codebrain/config.hpp"
#include "codebrain/errors.hpp"
#include "codebrain/nn/optim.hpp"

namespace codebrain::pretrain {

struct TrainConfig {
  std::size_t batch = 8;  // stage 1: window pairs; stage 2: sequences
  std::size_t steps = 200;
  std::size_t steps_per_epoch = 50;
  double peak_lr = 1e-3;
  double min_lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double weight_decay = 0.01;
  double clip_norm = 5.0;
  double mask_ratio = 0.5;
  std::size_t max_epochs = 10;  // early stop
  std::uint64_t seed = 0;

  void validate() const {
    if (batch == 0 || steps == 0 || steps_per_epoch == 0) throw ConfigError("train: batch, steps and steps_per_epoch must be positive");
    if (!(peak_lr >= min_lr && min_lr >= 0.0)) throw ConfigError("train: need peak_lr >= min_lr >= 0");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("train: mask_ratio must lie in (0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must lie in [0, 1)");
    if (clip_norm < 0.0 || weight_decay < 0.0) throw ConfigError("train: negative clip_norm or weight_decay");
  }

  // Steps actually run once the epoch cap applies.
  std::size_t effective_steps() const { return std::min(steps, max_epochs * steps_per_epoch); }

  nlohmann::json to_json() const {
    return {{"batch", batch},           {"steps", steps},         {"steps_per_epoch", steps_per_epoch},
            {"peak_lr", peak_lr},       {"min_lr", min_lr},       {"beta1", beta1},
            {"beta2", beta2},           {"weight_decay", weight_decay}, {"clip_norm", clip_norm},
            {"mask_ratio", mask_ratio}, {"max_epochs", max_epochs}, {"seed", seed}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch = j.at("batch");
    c.steps = j.at("steps");
    c.steps_per_epoch = j.at("steps_per_epoch");
    c.peak_lr = j.at("peak_lr");
    c.min_lr = j.at("min_lr");
    c.beta1 = j.at("beta1");
    c.beta2 = j.at("beta2");
    c.weight_decay = j.at("weight_decay");
    c.clip_norm = j.at("clip_norm");
    c.mask_ratio = j.at("mask_ratio");
    c.max_epochs = j.at("max_epochs");
    c.seed = j.at("seed");
    return c;
  }

  void apply(const KeyValueConfig& kv, const std::string& prefix) {
    auto sz = [&](const char* key, std::size_t& f) {
      f = static_cast<std::size_t>(kv.get_int(prefix + key, static_cast<long long>(f)));
    };
    sz("batch", batch);
    sz("steps", steps);
    sz("steps_per_epoch", steps_per_epoch);
    sz("max_epochs", max_epochs);
    peak_lr = kv.get_double(prefix + "peak_lr", peak_lr);
    min_lr = kv.get_double(prefix + "min_lr", min_lr);
    beta1 = kv.get_double(prefix + "beta1", beta1);
    beta2 = kv.get_double(prefix + "beta2", beta2);
    weight_decay = kv.get_double(prefix + "weight_decay", weight_decay);
    clip_norm = kv.get_double(prefix + "clip_norm", clip_norm);
    mask_ratio = kv.get_double(prefix + "mask_ratio", mask_ratio);
  }

  static std::vector<std::string> keys(const std::string& prefix) {
    std::vector<std::string> out;
    for (const char* k : {"batch", "steps", "steps_per_epoch", "max_epochs", "peak_lr", "min_lr", "beta1", "beta2",
                          "weight_decay", "clip_norm", "mask_ratio"})
      out.push_back(prefix + k);
    return out;
  }

  nn::CosineSchedule schedule() const { return {peak_lr, min_lr, effective_steps()}; }
  nn::AdamWConfig adam() const { return {beta1, beta2, 1e-8, weight_decay}; }
};

// Non-finite loss or gradient. `checkpoint` names the last good state written
// before aborting (empty when no output directory was given).
struct Divergence : NumericError {
  Divergence(std::size_t s, std::string ckpt)
      : NumericError("training diverged at step " + std::to_string(s) +
                     (ckpt.empty() ? std::string() : "; last good checkpoint: " + ckpt)),
        step(s),
        checkpoint(std::move(ckpt)) {}
  std::size_t step;
  std::string checkpoint;
};

// Stream for step `step` of a run; batches and masks depend only on
// (seed, step, purpose), which makes resumed runs replay exactly.
inline std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t step, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32), purpose};
  return std::mt19937_64(seq);
}

template <class T>
struct ParamSnapshot {
  std::vector<std::vector<T>> values;

  static ParamSnapshot take(const nn::ParamList<T>& params) {
    ParamSnapshot s;
    for (const auto& [n, p] : params) s.values.emplace_back(p.values());
    return s;
  }
  void restore(const nn::ParamList<T>& params) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto dst = params[i].second.node()->value.data();
      std::copy(values[i].begin(), values[i].end(), dst);
    }
  }
};

template <class T>
bool grads_finite(const nn::ParamList<T>& params) {
  for (const auto& [n, p] : params)
    for (T g : p.grad())
      if (!std::isfinite(static_cast<double>(g))) return false;
  return true;
}

}  // namespace codebrain::pretrain
