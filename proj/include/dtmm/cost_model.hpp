// cost_model.hpp: analytic flash, SRAM and latency models over strategy
// vectors, and least-squares fitting of the latency time constants.
#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dtmm/fwcs.hpp"
#include "dtmm/strategy.hpp"
#include "dtmm/tensor.hpp"

namespace dtmm {

// Cycles per unit operation of the latency model.
struct LatencyParams {
  double t_mem = 0;   // fetch one input value into the patch
  double t_idx = 0;   // index one filterlet
  double t_com = 0;   // one lane-chunk MAC
  double t_post = 0;  // bias + requantize one output value
  std::size_t lanes = 16;

  void validate() const;
};

// Flash bytes: (m * A_w + A_idx) / 8 with A_w = sum (1 - a_i) |K_i| and
// A_idx = m0 * sum (1 - a_i) N_i H_i W_i. Continuous in alpha.
double model_size(std::span<const ConvLayerSpec> specs, const StrategyVector& s, unsigned m,
                  unsigned m0 = 16);

// Peak SRAM bytes over adjacent layer pairs, max_i (M_{i-1} + M_i), with
// M_0 the input map and M_i = live_filters_i * FH_i * FW_i * m / 8. A filter
// counts as live while any of its filterlets is retained. Throws
// TopologyError unless each layer consumes the previous layer's channels.
double runtime_memory(std::span<const ConvLayerSpec> specs, std::span<const std::size_t> live_filters,
                      unsigned m);
double runtime_memory(std::span<const ConvLayerSpec> specs, std::span<const FilterletMask> masks,
                      unsigned m);
// Mask-free upper bound: live_i = min(N_i, retained filterlets).
double runtime_memory(std::span<const ConvLayerSpec> specs, const StrategyVector& s, unsigned m);

// (T_ft + T_cm + T_ps) * FH * FW with T_ft = H W C t_mem,
// T_cm = N H W (1 - alpha)(t_idx + ceil(C / l) t_com), T_ps = N t_post.
double layer_latency(const ConvLayerSpec& spec, double alpha, const LatencyParams& p);
double total_time(std::span<const ConvLayerSpec> specs, const StrategyVector& s,
                  const LatencyParams& p);

struct LatencySample {
  ConvLayerSpec spec;
  double alpha = 0;
  double cycles = 0;
};

struct LatencyFit {
  LatencyParams params;
  double train_mse = 0;  // on min-max normalized latencies
};

// Non-negative least squares over the four time constants (the model is
// linear in them). Throws FitError naming the unidentifiable direction when
// the design matrix is rank deficient.
LatencyFit fit_latency_params(std::span<const LatencySample> samples, std::size_t lanes);

// MSE between predicted and measured latencies after min-max normalizing
// both with the measured range of `samples`.
double normalized_mse(std::span<const LatencySample> samples, const LatencyParams& p);

// `t_mem=...` lines plus `lanes=...`.
void write_latency_params(std::ostream& os, const LatencyParams& p);
LatencyParams read_latency_params(std::istream& is);

// CSV `N,H,W,C,alpha,cycles,FH,FW`; the trailing output extents make the
// rows self-contained.
void write_samples_csv(std::ostream& os, std::span<const LatencySample> samples);
std::vector<LatencySample> read_samples_csv(std::istream& is);

}  // namespace dtmm
