// conv.hpp: convolution operators over channel-major tensors.
//
// conv_dense is the reference every sparse path is checked against. The FWCS
// operators walk retained filterlets in lane-sized chunks (masked tail when
// C % lanes != 0); conv_fwcs follows the per-output-position order,
// conv_fwcs_reordered pins each filterlet and sweeps all output positions.
//
// int8 inputs accumulate into int32 with saturation; every operator adds
// contributions one product at a time in (filter, kernel position, channel)
// order, so all formats and schedules agree bit for bit.
#pragma once

#include <cstdint>
#include <span>
#include <type_traits>
#include <vector>

#include "dtmm/fwcs.hpp"
#include "dtmm/tensor.hpp"

namespace dtmm {

template <typename T>
using AccOf = std::conditional_t<std::is_same_v<T, float>, float, std::int32_t>;

struct LaneConfig {
  std::size_t lanes = 16;
  std::size_t register_count = 8;

  // Throws ConfigError unless lanes is 2, 4, 8 or 16.
  void validate() const;
};

enum class ComputeSchedule { kDefaultOrder, kReordered };

// Work performed by an operator, in the units the lowering emits.
struct ExecStats {
  std::uint64_t macs = 0;             // vector MACs (scalar MACs for CSR)
  std::uint64_t weight_loads = 0;
  std::uint64_t feature_loads = 0;
  std::uint64_t index_reads = 0;      // c_ptr entries read
  std::uint64_t prefetch_values = 0;  // input values copied into patch buffers
  std::uint64_t stores = 0;           // output values written
  bool saturated = false;

  std::uint64_t loads() const { return weight_loads + feature_loads; }
};

template <typename T>
struct ConvOutput {
  Tensor<AccOf<T>> values;
  ExecStats stats;
};

// `input_zero_point` is subtracted from every input value (affine int8
// activations); float callers leave it at 0.
template <typename T>
ConvOutput<T> conv_dense(const Tensor<T>& input, const Tensor<T>& filters,
                         const ConvLayerSpec& spec, std::int32_t input_zero_point = 0);

template <typename T>
ConvOutput<T> conv_fwcs(const Tensor<T>& input, const FwcsLayer<T>& layer,
                        const ConvLayerSpec& spec, const LaneConfig& lanes,
                        std::int32_t input_zero_point = 0);

template <typename T>
ConvOutput<T> conv_fwcs_reordered(const Tensor<T>& input, const FwcsLayer<T>& layer,
                                  const ConvLayerSpec& spec, const LaneConfig& lanes,
                                  std::int32_t input_zero_point = 0);

template <typename T>
ConvOutput<T> conv_fwcs_scheduled(const Tensor<T>& input, const FwcsLayer<T>& layer,
                                  const ConvLayerSpec& spec, const LaneConfig& lanes,
                                  ComputeSchedule schedule, std::int32_t input_zero_point = 0) {
  return schedule == ComputeSchedule::kReordered
             ? conv_fwcs_reordered(input, layer, spec, lanes, input_zero_point)
             : conv_fwcs(input, layer, spec, lanes, input_zero_point);
}

template <typename T>
ConvOutput<T> conv_csr(const Tensor<T>& input, const CsrLayer<T>& layer,
                       const ConvLayerSpec& spec, std::int32_t input_zero_point = 0);

// Only kept filters are computed; the output has one channel per kept
// filter. Throws DataError when nothing is kept.
template <typename T>
ConvOutput<T> conv_structured(const Tensor<T>& input, const Tensor<T>& filters,
                              std::span<const std::uint8_t> kept_filters,
                              const ConvLayerSpec& spec, std::int32_t input_zero_point = 0);

// Bias add, rescale by `multiplier` (input_scale * weight_scale /
// output_scale), optional ReLU and saturation to int8.
TensorQ requantize(const TensorAcc& acc, std::span<const std::int32_t> bias, double multiplier,
                   const QuantParams& output, bool relu);

TensorF add_bias(const TensorF& acc, std::span<const float> bias, bool relu);

}  // namespace dtmm
