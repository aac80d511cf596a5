#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "ldif/conditioning/class_lora.hpp"
#include "ldif/conditioning/composition_mlp.hpp"
#include "ldif/conditioning/heads.hpp"
#include "ldif/conditioning/lora.hpp"
#include "ldif/conditioning/time_lora.hpp"
#include "ldif/network/model_config.hpp"
#include "ldif/numerics/layers.hpp"
#include "ldif/numerics/ops.hpp"

namespace ldif {

// Conditioning signals available to every block during one forward pass.
template <class T>
struct HookInputs {
  Var<T> embedding;                            // shared v [batch, emb], or null
  const std::vector<std::size_t>* t = nullptr;  // discrete timesteps
  Var<T> class_weights;                        // [batch, C] for class adapters, or null
};

// Dense projection W x + b of an attention block, optionally carrying a
// time/condition LoRA bank (TimeLoRA table, per-step adapters, or UC-LoRA
// composition MLP) and a class adapter set.
template <class T>
class AdaptedDense {
 public:
  enum class Composer { None, Table, PerStep, Mlp };

  AdaptedDense() = default;
  AdaptedDense(const Builder<T>& b, const std::string& name, std::size_t d, const ModelConfig& cfg, bool adapt)
      : base_(b, name, d, d) {
    if (!adapt) return;
    const std::size_t m = cfg.resolved_bases();
    bank_ = LoRABank<T>(b, name + ".lora", m, cfg.lora.rank, d, d);
    if (cfg.setting == Setting::Continuous) {
      composer_ = Composer::Mlp;
      mlp_ = CompositionMLP<T>(b, name + ".omega_mlp", cfg.embed.emb_dim, m, cfg.lora.mlp);
    } else if (cfg.lora.compositional) {
      composer_ = Composer::Table;
      table_ = TimeWeightTable<T>(b, name + ".omega_table", cfg.resolved_steps(),
                                  basis_timesteps(m, cfg.resolved_steps()), cfg.lora.init);
    } else {
      composer_ = Composer::PerStep;
    }
    if (cfg.uses_class_adapters()) {
      classes_ = ClassAdapterSet<T>(b, name + ".class_lora", cfg.embed.num_classes, cfg.lora.rank, d, d);
    }
  }

  Composer composer() const noexcept { return composer_; }
  const LoRABank<T>& bank() const noexcept { return bank_; }
  const ClassAdapterSet<T>& class_adapters() const noexcept { return classes_; }
  const Linear<T>& base() const noexcept { return base_; }
  const TimeWeightTable<T>& table() const noexcept { return table_; }

  // Composition weights of the main bank for this batch (null when the layer
  // is not adapted or uses per-step adapters).
  Var<T> omega(const HookInputs<T>& in) const {
    switch (composer_) {
      case Composer::Table:
        if (!in.t) throw Error("TimeLoRA needs discrete timesteps");
        return table_.weights(*in.t);
      case Composer::Mlp:
        if (!in.embedding) throw Error("UC-LoRA needs the shared condition embedding");
        return mlp_(in.embedding);
      default:
        return nullptr;
    }
  }

  // x [batch, d, S] -> [batch, d, S]
  Var<T> operator()(const Var<T>& x, const HookInputs<T>& in) const {
    Var<T> y = base_.channels(x);
    if (composer_ == Composer::PerStep) {
      if (!in.t) throw Error("per-step LoRA needs discrete timesteps");
      std::vector<std::size_t> idx(in.t->size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if ((*in.t)[i] < 1 || (*in.t)[i] > bank_.bases()) throw Error("timestep out of range for per-step LoRA");
        idx[i] = (*in.t)[i] - 1;
      }
      y = ops::add(y, bank_.delta_selected(x, idx));
    } else if (composer_ != Composer::None) {
      y = ops::add(y, bank_.delta(x, omega(in)));
    }
    if (!classes_.bank().empty()) {
      if (!in.class_weights) throw Error("class adapters need class weights");
      y = ops::add(y, classes_.bank().delta(x, in.class_weights));
    }
    return y;
  }

 private:
  Linear<T> base_;
  Composer composer_ = Composer::None;
  LoRABank<T> bank_;
  TimeWeightTable<T> table_;
  CompositionMLP<T> mlp_;
  ClassAdapterSet<T> classes_;
};

// Pre-norm multi-head self-attention with a residual connection. The input
// is layer-normalized over channels at each position (adaLN-modulated in
// adaln_only mode) before the q/k/v projections.
template <class T>
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(const Builder<T>& b, const std::string& name, std::size_t channels, const ModelConfig& cfg)
      : channels_(channels), heads_(cfg.unet.heads) {
    if (heads_ == 0 || channels % heads_ != 0) {
      throw ConfigError(name + ": " + std::to_string(channels) + " channels not divisible by " +
                        std::to_string(heads_) + " heads");
    }
    const bool lora = cfg.uses_lora();
    const char* proj[4] = {"q", "k", "v", "o"};
    for (int i = 0; i < 4; ++i) {
      dense_[i] = AdaptedDense<T>(b, name + "." + proj[i], channels, cfg, lora && cfg.lora.projections[i]);
    }
    if (cfg.uses_adaln()) adaln_ = std::make_shared<AdaLNHead<T>>(b, name + ".adaln", cfg.embed.emb_dim, channels);
  }

  std::size_t channels() const noexcept { return channels_; }
  std::size_t heads() const noexcept { return heads_; }
  const AdaptedDense<T>& projection(int i) const { return dense_[i]; }

  // h [batch, C, H, W] -> same shape
  Var<T> operator()(const Var<T>& h, const HookInputs<T>& in) const {
    const Shape shape = h->shape();
    if (shape.size() != 4 || shape[1] != channels_) {
      throw ShapeError("attention block expects [B, " + std::to_string(channels_) + ", H, W], got " +
                       shape_str(shape));
    }
    Var<T> x = ops::reshape(h, {shape[0], shape[1], shape[2] * shape[3]});
    Var<T> xn;
    if (adaln_) {
      if (!in.embedding) throw Error("adaLN needs the shared condition embedding");
      xn = adaln_apply(x, *adaln_, in.embedding);
    } else {
      xn = ops::layer_norm_channels(x);
    }
    Var<T> q = dense_[0](xn, in);
    Var<T> k = dense_[1](xn, in);
    Var<T> v = dense_[2](xn, in);
    Var<T> a = ops::attention(q, k, v, heads_);
    Var<T> out = ops::add(x, dense_[3](a, in));
    return ops::reshape(out, shape);
  }

 private:
  std::size_t channels_ = 0, heads_ = 1;
  AdaptedDense<T> dense_[4];
  std::shared_ptr<AdaLNHead<T>> adaln_;
};

}  // namespace ldif
