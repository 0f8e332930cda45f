#pragma once

#include <random>

#include "dtmm/fwcs.hpp"
#include "dtmm/importance.hpp"
#include "dtmm/tensor.hpp"

namespace testutil {

using namespace dtmm;

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Small random layer: input <= max_in, filters and channels <= max_nc.
inline ConvLayerSpec random_spec(std::mt19937_64& rng, std::size_t max_in = 8, std::size_t max_nc = 8) {
  ConvLayerSpec s;
  s.input_h = pick(rng, 1, max_in);
  s.input_w = pick(rng, 1, max_in);
  s.kernel_h = pick(rng, 1, s.input_h);
  s.kernel_w = pick(rng, 1, s.input_w);
  s.stride = pick(rng, 1, 2);
  s.n_filters = pick(rng, 1, max_nc);
  s.channels = pick(rng, 1, max_nc);
  return s;
}

inline TensorQ random_q(std::mt19937_64& rng, TensorQ t) {
  std::uniform_int_distribution<int> d(-128, 127);
  for (auto& v : t.data()) v = static_cast<std::int8_t>(d(rng));
  return t;
}

inline TensorF random_f(std::mt19937_64& rng, TensorF t) {
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Each filterlet kept with probability `density`.
inline FilterletMask random_mask(std::mt19937_64& rng, const ConvLayerSpec& spec, double density) {
  std::bernoulli_distribution keep(density);
  FilterletMask m = FilterletMask::all(spec, false);
  for (auto& k : m.kept) k = keep(rng) ? 1 : 0;
  return m;
}

inline WeightMask random_weight_mask(std::mt19937_64& rng, const ConvLayerSpec& spec, double density) {
  std::bernoulli_distribution keep(density);
  WeightMask m = WeightMask::all(spec, false);
  for (auto& k : m.kept) k = keep(rng) ? 1 : 0;
  return m;
}

}  // namespace testutil
