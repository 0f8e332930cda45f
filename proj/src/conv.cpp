#include "dtmm/conv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dtmm {

void LaneConfig::validate() const {
  if (lanes != 2 && lanes != 4 && lanes != 8 && lanes != 16)
    throw ConfigError("lane count must be 2, 4, 8 or 16");
  if (register_count < 3) throw ConfigError("at least three vector registers are required");
}

namespace {

// One product-accumulate step; int32 saturates and raises `sat`.
inline void mac(float& acc, float x, float w, float zp, bool&) { acc += (x - zp) * w; }

inline void mac(std::int32_t& acc, std::int8_t x, std::int8_t w, std::int32_t zp, bool& sat) {
  const std::int64_t next = static_cast<std::int64_t>(acc) +
                            static_cast<std::int64_t>(x - zp) * static_cast<std::int64_t>(w);
  constexpr std::int64_t lo = std::numeric_limits<std::int32_t>::min();
  constexpr std::int64_t hi = std::numeric_limits<std::int32_t>::max();
  if (next < lo || next > hi) sat = true;
  acc = static_cast<std::int32_t>(std::clamp(next, lo, hi));
}

// A lane chunk: a <- a + x[0:len] . w[0:len] with len <= lanes.
template <typename T>
inline void mac_chunk(AccOf<T>& acc, const T* x, const T* w, std::size_t len, AccOf<T> zp,
                      bool& sat) {
  for (std::size_t i = 0; i < len; ++i) mac(acc, x[i], w[i], zp, sat);
}

template <typename T>
void check_input(const Tensor<T>& input, const ConvLayerSpec& spec) {
  spec.validate();
  if (input.rank() != 3 || input.height() != spec.input_h || input.width() != spec.input_w ||
      input.channels() != spec.channels)
    throw DataError("conv: input tensor does not match layer spec");
}

template <typename T>
void check_filters(const Tensor<T>& filters, const ConvLayerSpec& spec) {
  if (filters.rank() != 4 || filters.count() != spec.n_filters ||
      filters.height() != spec.kernel_h || filters.width() != spec.kernel_w ||
      filters.channels() != spec.channels)
    throw DataError("conv: filter bank does not match layer spec");
}

template <typename T>
Tensor<AccOf<T>> output_tensor(const ConvLayerSpec& spec, std::size_t channels) {
  return Tensor<AccOf<T>>::feature(spec.out_h(), spec.out_w(), channels);
}

// Offset of receptive-field element `k` (filter-local flat index) in the input.
inline std::size_t input_offset(const ConvLayerSpec& spec, std::size_t oy, std::size_t ox,
                                std::size_t k) {
  const std::size_t c = k % spec.channels;
  const std::size_t hw = k / spec.channels;
  const std::size_t y = oy * spec.stride + hw / spec.kernel_w;
  const std::size_t x = ox * spec.stride + hw % spec.kernel_w;
  return (y * spec.input_w + x) * spec.channels + c;
}

template <typename T>
ConvOutput<T> dense_subset(const Tensor<T>& input, const Tensor<T>& filters,
                           const ConvLayerSpec& spec, std::span<const std::size_t> which,
                           std::int32_t input_zero_point) {
  ConvOutput<T> out{output_tensor<T>(spec, which.size()), {}};
  const auto zp = static_cast<AccOf<T>>(input_zero_point);
  const std::size_t len = spec.filter_size();
  auto dst = out.values.data();
  for (std::size_t oy = 0; oy < spec.out_h(); ++oy) {
    for (std::size_t ox = 0; ox < spec.out_w(); ++ox) {
      const auto patch = extract_patch(input, spec, oy, ox);
      out.stats.prefetch_values += len;
      for (std::size_t o = 0; o < which.size(); ++o) {
        const auto filter = filters.block(which[o]);
        AccOf<T> acc{};
        mac_chunk<T>(acc, patch.data(), filter.data(), len, zp, out.stats.saturated);
        out.stats.macs += len;
        dst[(oy * spec.out_w() + ox) * which.size() + o] = acc;
        ++out.stats.stores;
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
ConvOutput<T> conv_dense(const Tensor<T>& input, const Tensor<T>& filters,
                         const ConvLayerSpec& spec, std::int32_t input_zero_point) {
  check_input(input, spec);
  check_filters(filters, spec);
  std::vector<std::size_t> all(spec.n_filters);
  for (std::size_t n = 0; n < all.size(); ++n) all[n] = n;
  return dense_subset(input, filters, spec, all, input_zero_point);
}

template <typename T>
ConvOutput<T> conv_fwcs(const Tensor<T>& input, const FwcsLayer<T>& layer,
                        const ConvLayerSpec& spec, const LaneConfig& lanes,
                        std::int32_t input_zero_point) {
  check_input(input, spec);
  validate_fwcs(layer, spec);
  lanes.validate();

  const std::size_t n_out = spec.n_filters;
  ConvOutput<T> out{output_tensor<T>(spec, n_out), {}};
  const auto zp = static_cast<AccOf<T>>(input_zero_point);
  const std::size_t l = lanes.lanes;
  auto dst = out.values.data();

  for (std::size_t oy = 0; oy < spec.out_h(); ++oy) {
    for (std::size_t ox = 0; ox < spec.out_w(); ++ox) {
      const auto buf = extract_patch(input, spec, oy, ox);
      out.stats.prefetch_values += buf.size();
      std::size_t i = 0;
      for (std::size_t c = 0; c < n_out; ++c) {
        AccOf<T> acc{};
        for (std::size_t j = layer.f_idx[c]; j < layer.f_idx[c + 1]; ++j) {
          ++out.stats.index_reads;
          const std::size_t end = layer.c_ptr[j] + layer.size;
          for (std::size_t k = layer.c_ptr[j]; k < end; k += l) {
            const std::size_t len = std::min(l, end - k);
            mac_chunk<T>(acc, buf.data() + k, layer.arr.data() + i, len, zp, out.stats.saturated);
            i += len;
            ++out.stats.macs;
            ++out.stats.feature_loads;
            ++out.stats.weight_loads;
          }
        }
        dst[(oy * spec.out_w() + ox) * n_out + c] = acc;
        ++out.stats.stores;
      }
    }
  }
  return out;
}

template <typename T>
ConvOutput<T> conv_fwcs_reordered(const Tensor<T>& input, const FwcsLayer<T>& layer,
                                  const ConvLayerSpec& spec, const LaneConfig& lanes,
                                  std::int32_t input_zero_point) {
  check_input(input, spec);
  validate_fwcs(layer, spec);
  lanes.validate();

  const std::size_t n_out = spec.n_filters;
  ConvOutput<T> out{output_tensor<T>(spec, n_out), {}};
  const auto zp = static_cast<AccOf<T>>(input_zero_point);
  const std::size_t l = lanes.lanes;
  // Two registers alternate feature loads; the rest hold pinned weight chunks.
  const std::size_t pinned = lanes.register_count - 2;
  const std::size_t chunks = (layer.size + l - 1) / l;
  const T* src = input.data().data();
  auto dst = out.values.data();

  for (std::size_t c = 0; c < n_out; ++c) {
    for (std::size_t j = layer.f_idx[c]; j < layer.f_idx[c + 1]; ++j) {
      ++out.stats.index_reads;
      const T* weights = layer.arr.data() + j * layer.size;
      for (std::size_t g = 0; g < chunks; g += pinned) {
        const std::size_t g_end = std::min(chunks, g + pinned);
        out.stats.weight_loads += g_end - g;
        for (std::size_t oy = 0; oy < spec.out_h(); ++oy) {
          for (std::size_t ox = 0; ox < spec.out_w(); ++ox) {
            AccOf<T>& acc = dst[(oy * spec.out_w() + ox) * n_out + c];
            const T* field = src + input_offset(spec, oy, ox, layer.c_ptr[j]);
            for (std::size_t k = g; k < g_end; ++k) {
              const std::size_t len = std::min(l, layer.size - k * l);
              mac_chunk<T>(acc, field + k * l, weights + k * l, len, zp, out.stats.saturated);
              ++out.stats.macs;
              ++out.stats.feature_loads;
            }
          }
        }
      }
    }
  }
  out.stats.stores = n_out * spec.output_positions();
  return out;
}

template <typename T>
ConvOutput<T> conv_csr(const Tensor<T>& input, const CsrLayer<T>& layer,
                       const ConvLayerSpec& spec, std::int32_t input_zero_point) {
  check_input(input, spec);
  validate_csr(layer, spec);

  const std::size_t n_out = spec.n_filters;
  ConvOutput<T> out{output_tensor<T>(spec, n_out), {}};
  const auto zp = static_cast<AccOf<T>>(input_zero_point);
  const T* src = input.data().data();
  auto dst = out.values.data();

  for (std::size_t oy = 0; oy < spec.out_h(); ++oy) {
    for (std::size_t ox = 0; ox < spec.out_w(); ++ox) {
      for (std::size_t c = 0; c < n_out; ++c) {
        AccOf<T> acc{};
        for (std::size_t j = layer.f_idx[c]; j < layer.f_idx[c + 1]; ++j) {
          // Each retained weight is gathered by its own index.
          const T x = src[input_offset(spec, oy, ox, layer.c_ptr[j])];
          mac(acc, x, layer.arr[j], zp, out.stats.saturated);
          ++out.stats.index_reads;
          ++out.stats.feature_loads;
          ++out.stats.weight_loads;
          ++out.stats.macs;
        }
        dst[(oy * spec.out_w() + ox) * n_out + c] = acc;
        ++out.stats.stores;
      }
    }
  }
  return out;
}

template <typename T>
ConvOutput<T> conv_structured(const Tensor<T>& input, const Tensor<T>& filters,
                              std::span<const std::uint8_t> kept_filters,
                              const ConvLayerSpec& spec, std::int32_t input_zero_point) {
  check_input(input, spec);
  check_filters(filters, spec);
  if (kept_filters.size() != spec.n_filters) throw DataError("conv_structured: kept mask length");
  std::vector<std::size_t> which;
  for (std::size_t n = 0; n < kept_filters.size(); ++n)
    if (kept_filters[n]) which.push_back(n);
  if (which.empty()) throw DataError("conv_structured: every filter pruned, output would be empty");
  return dense_subset(input, filters, spec, which, input_zero_point);
}

TensorQ requantize(const TensorAcc& acc, std::span<const std::int32_t> bias, double multiplier,
                   const QuantParams& output, bool relu) {
  const std::size_t c = acc.channels();
  if (!bias.empty() && bias.size() != c) throw DataError("requantize: bias length != channels");
  std::vector<std::int8_t> out(acc.size());
  const auto src = acc.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::int64_t v = src[i];
    if (!bias.empty()) v += bias[i % c];
    if (relu) v = std::max<std::int64_t>(v, 0);
    const double r = std::round(static_cast<double>(v) * multiplier) + output.zero_point;
    out[i] = static_cast<std::int8_t>(std::clamp(r, -128.0, 127.0));
  }
  return TensorQ::from_data(acc.rank(), acc.dims(), std::move(out));
}

TensorF add_bias(const TensorF& acc, std::span<const float> bias, bool relu) {
  const std::size_t c = acc.channels();
  if (!bias.empty() && bias.size() != c) throw DataError("add_bias: bias length != channels");
  TensorF out = acc;
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!bias.empty()) d[i] += bias[i % c];
    if (relu) d[i] = std::max(d[i], 0.0f);
  }
  return out;
}

#define DTMM_INSTANTIATE_CONV(T)                                                               \
  template ConvOutput<T> conv_dense(const Tensor<T>&, const Tensor<T>&, const ConvLayerSpec&,  \
                                    std::int32_t);                                             \
  template ConvOutput<T> conv_fwcs(const Tensor<T>&, const FwcsLayer<T>&, const ConvLayerSpec&, \
                                   const LaneConfig&, std::int32_t);                           \
  template ConvOutput<T> conv_fwcs_reordered(const Tensor<T>&, const FwcsLayer<T>&,            \
                                             const ConvLayerSpec&, const LaneConfig&,          \
                                             std::int32_t);                                    \
  template ConvOutput<T> conv_csr(const Tensor<T>&, const CsrLayer<T>&, const ConvLayerSpec&,  \
                                  std::int32_t);                                               \
  template ConvOutput<T> conv_structured(const Tensor<T>&, const Tensor<T>&,                   \
                                         std::span<const std::uint8_t>, const ConvLayerSpec&,  \
                                         std::int32_t);

DTMM_INSTANTIATE_CONV(float)
DTMM_INSTANTIATE_CONV(std::int8_t)

#undef DTMM_INSTANTIATE_CONV

}  // namespace dtmm
