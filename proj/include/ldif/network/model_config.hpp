#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ldif/conditioning/composition_mlp.hpp"
#include "ldif/conditioning/embedder.hpp"
#include "ldif/conditioning/time_lora.hpp"
#include "ldif/errors.hpp"

namespace ldif {

// Which hooks carry the conditioning signal.
//   baseline    scale-and-shift on residual conv blocks
//   only_lora   LoRA composition on attention projections
//   with_lora   both of the above
//   adaln_only  adaLN modulation of the attention input
//   unconditioned  no hooks at all (reference network)
enum class ConditioningMode { Baseline, OnlyLoRA, WithLoRA, AdaLNOnly, Unconditioned };

// Discrete timesteps t = 1..T, or continuous noise levels sigma > 0.
enum class Setting { Discrete, Continuous };

inline const char* to_string(ConditioningMode m) {
  switch (m) {
    case ConditioningMode::Baseline: return "baseline";
    case ConditioningMode::OnlyLoRA: return "only_lora";
    case ConditioningMode::WithLoRA: return "with_lora";
    case ConditioningMode::AdaLNOnly: return "adaln_only";
    case ConditioningMode::Unconditioned: return "unconditioned";
  }
  return "?";
}

inline ConditioningMode parse_mode(const std::string& s) {
  for (auto m : {ConditioningMode::Baseline, ConditioningMode::OnlyLoRA, ConditioningMode::WithLoRA,
                 ConditioningMode::AdaLNOnly, ConditioningMode::Unconditioned}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown conditioning mode '" + s + "'");
}

inline const char* to_string(Setting s) { return s == Setting::Discrete ? "discrete" : "continuous"; }

inline Setting parse_setting(const std::string& s) {
  if (s == "discrete") return Setting::Discrete;
  if (s == "continuous") return Setting::Continuous;
  throw ConfigError("unknown setting '" + s + "' (discrete | continuous)");
}

struct UNetConfig {
  std::size_t resolution = 28;
  std::size_t in_channels = 1;
  std::size_t base_channels = 32;
  std::vector<std::size_t> channel_mult{1, 2};
  std::vector<std::size_t> attention_levels{1};
  bool mid_attention = true;
  std::size_t heads = 2;
  std::size_t groups = 8;
  bool use_skips = false;
};

struct LoRAConfig {
  std::size_t rank = 4;
  std::size_t bases = 0;  // 0: 11 for discrete, 18 for continuous
  bool compositional = true;
  TableInit init = TableInit::Interpolation;
  std::array<bool, 4> projections{true, true, true, true};  // q, k, v, o
  bool class_adapters = true;
  CompositionMLPConfig mlp;
};

struct ModelConfig {
  ConditioningMode mode = ConditioningMode::Baseline;
  Setting setting = Setting::Continuous;
  std::size_t steps = 0;  // discrete T; 0: 4001 with LoRA, 4000 otherwise
  std::uint64_t seed = 0;
  UNetConfig unet;
  EmbedderConfig embed;
  LoRAConfig lora;

  bool uses_lora() const { return mode == ConditioningMode::OnlyLoRA || mode == ConditioningMode::WithLoRA; }
  bool uses_scale_shift() const { return mode == ConditioningMode::Baseline || mode == ConditioningMode::WithLoRA; }
  bool uses_adaln() const { return mode == ConditioningMode::AdaLNOnly; }
  bool uses_class_adapters() const {
    return uses_lora() && setting == Setting::Discrete && lora.class_adapters && embed.num_classes > 0;
  }
  bool uses_embedder() const {
    return uses_scale_shift() || uses_adaln() || (uses_lora() && setting == Setting::Continuous);
  }

  std::size_t resolved_steps() const {
    if (steps) return steps;
    return uses_lora() ? 4001 : 4000;
  }

  std::size_t resolved_bases() const {
    if (setting == Setting::Discrete && !lora.compositional) return resolved_steps();
    if (lora.bases) return lora.bases;
    return setting == Setting::Discrete ? 11 : 18;
  }
};

}  // namespace ldif
