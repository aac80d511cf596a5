#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ldif/conditioning/embedder.hpp"
#include "ldif/conditioning/heads.hpp"
#include "ldif/network/attention.hpp"
#include "ldif/network/model_config.hpp"
#include "ldif/numerics/layers.hpp"
#include "ldif/numerics/ops.hpp"

namespace ldif {

// GN -> SiLU -> conv -> GN -> [gamma, beta] -> SiLU -> conv, plus skip path
// (1x1 projection when channel counts differ).
template <class T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(const Builder<T>& b, const std::string& name, std::size_t cin, std::size_t cout, const ModelConfig& cfg)
      : cin_(cin), cout_(cout) {
    n1_ = GroupNorm<T>(b, name + ".gn1", std::min(cfg.unet.groups, cin), cin);
    c1_ = Conv2d<T>(b, name + ".conv1", cin, cout);
    n2_ = GroupNorm<T>(b, name + ".gn2", std::min(cfg.unet.groups, cout), cout);
    c2_ = Conv2d<T>(b, name + ".conv2", cout, cout);
    if (cin != cout) skip_ = Linear<T>(b, name + ".skip", cin, cout);
    if (cfg.uses_scale_shift()) ss_ = std::make_shared<ScaleShiftHead<T>>(b, name + ".ss_head", cfg.embed.emb_dim, cout);
  }

  std::size_t in_channels() const noexcept { return cin_; }
  std::size_t out_channels() const noexcept { return cout_; }
  bool has_scale_shift() const noexcept { return static_cast<bool>(ss_); }

  Var<T> operator()(const Var<T>& x, const HookInputs<T>& in) const {
    check_channels(x, cin_, "ResBlock");
    Var<T> h = c1_(ops::silu(n1_(x)));
    h = n2_(h);
    if (ss_) {
      if (!in.embedding) throw Error("scale-and-shift needs the shared condition embedding");
      h = scale_shift_apply(h, *ss_, in.embedding);
    }
    h = c2_(ops::silu(h));
    return ops::add(cin_ == cout_ ? x : skip_.channels(x), h);
  }

 private:
  std::size_t cin_ = 0, cout_ = 0;
  GroupNorm<T> n1_, n2_;
  Conv2d<T> c1_, c2_;
  Linear<T> skip_;
  std::shared_ptr<ScaleShiftHead<T>> ss_;
};

// Small epsilon-prediction U-Net. Conditioning enters only through hooks:
// scale-and-shift on residual blocks, LoRA or adaLN on attention blocks.
template <class T>
class NanoUNet {
 public:
  struct Level {
    ResBlock<T> res;
    std::optional<AttentionBlock<T>> attn;
  };

  explicit NanoUNet(const ModelConfig& cfg) : cfg_(cfg), store_(std::make_unique<ParamStore<T>>()) {
    const auto& u = cfg.unet;
    if (u.channel_mult.empty()) throw ConfigError("unet: channel_mult is empty");
    const std::size_t levels = u.channel_mult.size();
    if (u.resolution == 0 || u.resolution % (std::size_t{1} << (levels - 1)) != 0) {
      throw ConfigError("unet: resolution " + std::to_string(u.resolution) + " not divisible by 2^" +
                        std::to_string(levels - 1));
    }
    for (std::size_t l : u.attention_levels) {
      if (l >= levels) throw ConfigError("unet: attention level " + std::to_string(l) + " does not exist");
    }
    if (cfg.uses_lora() && cfg.setting == Setting::Discrete && cfg.lora.compositional) {
      basis_timesteps(cfg.resolved_bases(), cfg.resolved_steps());  // validates divisibility up front
    }
    Builder<T> b{*store_, cfg.seed};
    if (cfg.uses_embedder()) embedder_ = SharedConditionEmbedder<T>(b, "cond.embed", cfg.embed);

    auto ch = [&](std::size_t l) { return u.base_channels * u.channel_mult[l]; };
    auto has_attn = [&](std::size_t l) {
      return std::find(u.attention_levels.begin(), u.attention_levels.end(), l) != u.attention_levels.end();
    };
    in_conv_ = Conv2d<T>(b, "unet.in_conv", u.in_channels, u.base_channels);
    std::size_t cur = u.base_channels;
    for (std::size_t l = 0; l < levels; ++l) {
      const std::string n = "unet.down" + std::to_string(l);
      Level lv{ResBlock<T>(b, n + ".res", cur, ch(l), cfg), std::nullopt};
      if (has_attn(l)) lv.attn.emplace(b, n + ".attn", ch(l), cfg);
      down_.push_back(std::move(lv));
      cur = ch(l);
    }
    mid1_ = ResBlock<T>(b, "unet.mid.res0", cur, cur, cfg);
    if (u.mid_attention) mid_attn_.emplace(b, "unet.mid.attn", cur, cfg);
    mid2_ = ResBlock<T>(b, "unet.mid.res1", cur, cur, cfg);
    for (std::size_t l = levels; l-- > 0;) {
      const std::string n = "unet.up" + std::to_string(l);
      const std::size_t cin = cur + (u.use_skips ? ch(l) : 0);
      Level lv{ResBlock<T>(b, n + ".res", cin, ch(l), cfg), std::nullopt};
      if (has_attn(l)) lv.attn.emplace(b, n + ".attn", ch(l), cfg);
      up_.push_back(std::move(lv));
      cur = ch(l);
    }
    out_norm_ = GroupNorm<T>(b, "unet.out_norm", std::min(u.groups, cur), cur);
    out_conv_ = Conv2d<T>(b, "unet.out_conv", cur, u.in_channels);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamStore<T>& params() noexcept { return *store_; }
  const ParamStore<T>& params() const noexcept { return *store_; }
  const std::optional<SharedConditionEmbedder<T>>& embedder() const noexcept { return embedder_; }

  // Every attention block with a stable label, in forward order.
  std::vector<std::pair<std::string, const AttentionBlock<T>*>> attention_blocks() const {
    std::vector<std::pair<std::string, const AttentionBlock<T>*>> out;
    for (std::size_t l = 0; l < down_.size(); ++l) {
      if (down_[l].attn) out.emplace_back("down" + std::to_string(l), &*down_[l].attn);
    }
    if (mid_attn_) out.emplace_back("mid", &*mid_attn_);
    for (std::size_t i = 0; i < up_.size(); ++i) {
      if (up_[i].attn) out.emplace_back("up" + std::to_string(up_.size() - 1 - i), &*up_[i].attn);
    }
    return out;
  }

  // Validates the conditions against the setting and builds the hook inputs.
  HookInputs<T> hook_inputs(const Conditions<T>& c, std::size_t batch) const {
    if (cfg_.setting == Setting::Discrete) {
      if (c.t.size() != batch) throw Error("discrete model needs one timestep per sample");
      const std::size_t T_ = cfg_.resolved_steps();
      for (std::size_t t : c.t) {
        if (t < 1 || t > T_) throw Error("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T_) + "]");
      }
    } else {
      if (c.sigma.size() != batch) throw Error("continuous model needs one noise level per sample");
      for (double s : c.sigma) {
        if (!(s > 0.0)) throw Error("noise level must be positive");
      }
    }
    HookInputs<T> in;
    if (embedder_) in.embedding = (*embedder_)(c);
    if (cfg_.setting == Setting::Discrete) in.t = &c.t;
    if (cfg_.uses_class_adapters()) in.class_weights = constant(class_weights(c, batch));
    return in;
  }

  Var<T> operator()(const Var<T>& x, const Conditions<T>& c) const {
    const auto& u = cfg_.unet;
    const Shape& s = x->shape();
    if (s.size() != 4 || s[1] != u.in_channels || s[2] != u.resolution || s[3] != u.resolution) {
      throw ShapeError("unet expects [B, " + std::to_string(u.in_channels) + ", " + std::to_string(u.resolution) +
                       ", " + std::to_string(u.resolution) + "], got " + shape_str(s));
    }
    const HookInputs<T> in = hook_inputs(c, s[0]);
    std::vector<Var<T>> skips;
    Var<T> h = in_conv_(x);
    for (std::size_t l = 0; l < down_.size(); ++l) {
      h = down_[l].res(h, in);
      if (down_[l].attn) h = (*down_[l].attn)(h, in);
      skips.push_back(h);
      if (l + 1 < down_.size()) h = ops::avg_pool2(h);
    }
    h = mid1_(h, in);
    if (mid_attn_) h = (*mid_attn_)(h, in);
    h = mid2_(h, in);
    for (std::size_t i = 0; i < up_.size(); ++i) {
      const std::size_t l = up_.size() - 1 - i;
      if (u.use_skips) h = ops::concat_channels(h, skips[l]);
      h = up_[i].res(h, in);
      if (up_[i].attn) h = (*up_[i].attn)(h, in);
      if (l > 0) h = ops::upsample2(h);
    }
    return out_conv_(ops::silu(out_norm_(h)));
  }

 private:
  Tensor<T> class_weights(const Conditions<T>& c, std::size_t batch) const {
    const std::size_t C = cfg_.embed.num_classes;
    const Tensor<T>* src = c.class_adapter_weights ? &*c.class_adapter_weights : (c.has_class() ? &c.class_vec : nullptr);
    Tensor<T> w({batch, C});
    if (!src) return w;
    if (src->rank() != 2 || src->dim(1) != C || (src->dim(0) != batch && src->dim(0) != 1)) {
      throw ShapeError("class weights must be [" + std::to_string(batch) + ", " + std::to_string(C) + "] or [1, " +
                       std::to_string(C) + "], got " + shape_str(src->shape()));
    }
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t r = src->dim(0) == 1 ? 0 : b;
      for (std::size_t k = 0; k < C; ++k) w.at(b, k) = src->at(r, k);
    }
    return w;
  }

  ModelConfig cfg_;
  std::unique_ptr<ParamStore<T>> store_;
  std::optional<SharedConditionEmbedder<T>> embedder_;
  Conv2d<T> in_conv_, out_conv_;
  std::vector<Level> down_, up_;
  ResBlock<T> mid1_, mid2_;
  std::optional<AttentionBlock<T>> mid_attn_;
  GroupNorm<T> out_norm_;
};

}  // namespace ldif
