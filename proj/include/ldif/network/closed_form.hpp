#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "ldif/network/model_config.hpp"

namespace ldif {

// Channel width of every attention block the config creates, in forward order.
inline std::vector<std::size_t> attention_widths(const ModelConfig& cfg) {
  const auto& u = cfg.unet;
  auto has_attn = [&](std::size_t l) {
    return std::find(u.attention_levels.begin(), u.attention_levels.end(), l) != u.attention_levels.end();
  };
  std::vector<std::size_t> w;
  for (std::size_t l = 0; l < u.channel_mult.size(); ++l) {
    if (has_attn(l)) w.push_back(u.base_channels * u.channel_mult[l]);
  }
  if (u.mid_attention && !u.channel_mult.empty()) w.push_back(u.base_channels * u.channel_mult.back());
  for (std::size_t l = u.channel_mult.size(); l-- > 0;) {
    if (has_attn(l)) w.push_back(u.base_channels * u.channel_mult[l]);
  }
  return w;
}

// LoRA matrix parameters implied by the config: m r (din + dout) per adapted
// projection, plus C r (din + dout) for class adapters.
inline std::size_t closed_form_lora_params(const ModelConfig& cfg) {
  if (!cfg.uses_lora()) return 0;
  const std::size_t r = cfg.lora.rank;
  const std::size_t m = cfg.resolved_bases();
  const std::size_t c = cfg.uses_class_adapters() ? cfg.embed.num_classes : 0;
  const std::size_t adapted = static_cast<std::size_t>(std::count(cfg.lora.projections.begin(),
                                                                  cfg.lora.projections.end(), true));
  std::size_t n = 0;
  for (std::size_t d : attention_widths(cfg)) n += adapted * (m + c) * r * (d + d);
  return n;
}

}  // namespace ldif
