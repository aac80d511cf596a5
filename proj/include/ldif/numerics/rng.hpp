#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <string_view>

#include "ldif/errors.hpp"
#include "ldif/numerics/tensor.hpp"

namespace ldif {

// PCG32 (XSH-RR output, 64-bit LCG state). Satisfies
// UniformRandomBitGenerator so it plugs into <random> distributions.
class SeededRng {
 public:
  using result_type = std::uint32_t;

  explicit SeededRng(std::uint64_t seed = 0, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), inc_((stream << 1u) | 1u) {
    state_ = 0;
    next();
    state_ += seed;
    next();
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return next(); }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  // Independent generator for a named consumer (parameter init, data, ...).
  SeededRng derive(std::string_view label) const { return SeededRng(seed_, stream_ ^ fnv1a(label)); }
  SeededRng derive(std::uint64_t index) const {
    return SeededRng(seed_ + 0x9E3779B97F4A7C15ull * (index + 1), stream_);
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(*this); }

  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(*this);
  }

  double normal() { return normal_(*this); }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

 private:
  result_type next() {
    const std::uint64_t old = state_;
    state_ = old * 6364136223846793005ull + inc_;
    const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t inc_;
  std::uint64_t state_ = 0;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

template <class T>
Tensor<T> gaussian_sample(SeededRng& rng, const Shape& shape, T mean, T std) {
  if (!(std >= T{0})) throw Error("gaussian_sample: std must be non-negative");
  Tensor<T> out(shape);
  for (auto& v : out.data()) v = mean + std * static_cast<T>(rng.normal());
  return out;
}

template <class T>
Tensor<T> uniform_sample(SeededRng& rng, const Shape& shape, T lo, T hi) {
  Tensor<T> out(shape);
  for (auto& v : out.data()) v = lo + (hi - lo) * static_cast<T>(rng.uniform());
  return out;
}

}  // namespace ldif
