#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ldif/errors.hpp"
#include "ldif/numerics/layers.hpp"
#include "ldif/numerics/ops.hpp"

namespace ldif {

// Per-sample conditioning attributes for one batch. Exactly one of `t`
// (discrete timesteps) or `sigma` (continuous noise levels) drives the
// network; class and auxiliary vectors are optional.
template <class T>
struct Conditions {
  std::vector<std::size_t> t;
  std::vector<double> sigma;
  Tensor<T> class_vec;  // [batch, C] or empty
  Tensor<T> aux;        // [batch, K] or empty
  // Explicit class-adapter weights [batch, C]; replaces class_vec for the
  // class adapters only.
  std::optional<Tensor<T>> class_adapter_weights;

  std::size_t batch() const { return t.empty() ? sigma.size() : t.size(); }
  bool has_class() const { return !class_vec.empty(); }
  bool has_aux() const { return !aux.empty(); }
};

// Scalar fed to the sinusoidal embedding for a continuous noise level.
inline double noise_level_scalar(double sigma) { return 250.0 * std::log(sigma); }

// Transformer-style embedding: first half sin(v f_i), second half cos(v f_i)
// with f_i = 10000^(-i / half).
template <class T>
Tensor<T> sinusoidal_embedding(const std::vector<double>& values, std::size_t dim) {
  if (dim < 2 || dim % 2 != 0) throw ConfigError("sinusoidal embedding dim must be even and >= 2");
  const std::size_t half = dim / 2;
  Tensor<T> out({values.size(), dim});
  for (std::size_t b = 0; b < values.size(); ++b) {
    for (std::size_t i = 0; i < half; ++i) {
      const double f = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
      out.at(b, i) = static_cast<T>(std::sin(values[b] * f));
      out.at(b, half + i) = static_cast<T>(std::cos(values[b] * f));
    }
  }
  return out;
}

struct EmbedderConfig {
  std::size_t sin_dim = 64;
  std::size_t emb_dim = 128;
  std::size_t num_classes = 0;
  std::size_t aux_dim = 0;
};

// v = Linear(SiLU(Linear(sin(time)) + P_c c + P_a a)). Absent class or
// auxiliary inputs contribute nothing, so v always has emb_dim entries.
template <class T>
class SharedConditionEmbedder {
 public:
  SharedConditionEmbedder() = default;
  SharedConditionEmbedder(const Builder<T>& b, const std::string& name, const EmbedderConfig& cfg) : cfg_(cfg) {
    time_in_ = Linear<T>(b, name + ".time", cfg.sin_dim, cfg.emb_dim);
    if (cfg.num_classes) class_in_ = Linear<T>(b, name + ".class", cfg.num_classes, cfg.emb_dim, false);
    if (cfg.aux_dim) aux_in_ = Linear<T>(b, name + ".aux", cfg.aux_dim, cfg.emb_dim, false);
    out_ = Linear<T>(b, name + ".out", cfg.emb_dim, cfg.emb_dim);
  }

  const EmbedderConfig& config() const { return cfg_; }
  std::size_t dim() const { return cfg_.emb_dim; }

  Var<T> operator()(const Conditions<T>& c) const {
    std::vector<double> scalars;
    if (!c.t.empty()) {
      scalars.assign(c.t.begin(), c.t.end());
    } else if (!c.sigma.empty()) {
      for (double s : c.sigma) {
        if (!(s > 0.0)) throw Error("noise level must be positive");
        scalars.push_back(noise_level_scalar(s));
      }
    } else {
      throw Error("conditioning needs a timestep or noise level per sample");
    }
    const std::size_t n = scalars.size();
    Var<T> h = time_in_(constant(sinusoidal_embedding<T>(scalars, cfg_.sin_dim)));
    if (c.has_class() && cfg_.num_classes) {
      check_rows(c.class_vec, n, cfg_.num_classes, "class vector");
      h = ops::add(h, class_in_(constant(c.class_vec)));
    }
    if (c.has_aux() && cfg_.aux_dim) {
      check_rows(c.aux, n, cfg_.aux_dim, "auxiliary condition");
      h = ops::add(h, aux_in_(constant(c.aux)));
    }
    return out_(ops::silu(h));
  }

 private:
  static void check_rows(const Tensor<T>& v, std::size_t n, std::size_t width, const char* what) {
    if (v.rank() != 2 || v.dim(0) != n || v.dim(1) != width) {
      throw ShapeError(std::string(what) + " must be [" + std::to_string(n) + ", " + std::to_string(width) +
                       "], got " + shape_str(v.shape()));
    }
  }

  EmbedderConfig cfg_;
  Linear<T> time_in_, class_in_, aux_in_, out_;
};

}  // namespace ldif
