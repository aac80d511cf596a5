#pragma once

#include <cstddef>
#include <string>

#include "ldif/numerics/layers.hpp"
#include "ldif/numerics/ops.hpp"

namespace ldif {

struct CompositionMLPConfig {
  std::size_t hidden1 = 50;
  std::size_t hidden2 = 50;
  std::size_t groups = 1;
  bool zero_init_output = false;
};

// Linear -> GroupNorm -> SiLU -> Linear -> GroupNorm -> SiLU -> Linear,
// mapping the shared embedding v to m composition weights.
template <class T>
class CompositionMLP {
 public:
  CompositionMLP() = default;
  CompositionMLP(const Builder<T>& b, const std::string& name, std::size_t emb_dim, std::size_t bases,
                 const CompositionMLPConfig& cfg)
      : bases_(bases),
        l1_(b, name + ".l1", emb_dim, cfg.hidden1),
        n1_(b, name + ".gn1", cfg.groups, cfg.hidden1, 1e-6),
        l2_(b, name + ".l2", cfg.hidden1, cfg.hidden2),
        n2_(b, name + ".gn2", cfg.groups, cfg.hidden2, 1e-6),
        l3_(b, name + ".l3", cfg.hidden2, bases, true, cfg.zero_init_output) {}

  std::size_t bases() const noexcept { return bases_; }

  // v [batch, emb_dim] -> omega [batch, m]
  Var<T> operator()(const Var<T>& v) const {
    Var<T> h = ops::silu(n1_(l1_(v)));
    h = ops::silu(n2_(l2_(h)));
    return l3_(h);
  }

 private:
  std::size_t bases_ = 0;
  Linear<T> l1_;
  GroupNorm<T> n1_;
  Linear<T> l2_;
  GroupNorm<T> n2_;
  Linear<T> l3_;
};

}  // namespace ldif
