// fwcs.hpp: filterlet weight compressed storage (FWCS) and the per-weight
// CSR baseline.
//
// FWCS for a layer of N filters, each H x W x C (channel-major):
//   arr   : retained weights, filter order, then filterlet order, then channel
//   size  : filterlet length (= C)
//   c_ptr : per retained filterlet, index of its first weight in its filter
//   f_idx : N + 1 entries; f_idx[n] is the c_ptr position of filter n's first
//           retained filterlet, f_idx[N] the total retained count
//
// CSR uses the same arrays at single-weight granularity and has no size field.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dtmm/tensor.hpp"

namespace dtmm {

// Filterlets kept out of `count` when a fraction `alpha` is pruned
// (round-half-up of the retained share, so alpha = 1 keeps nothing).
std::size_t kept_count(std::size_t count, double alpha);

// kept[n * H*W + p] is true when filterlet p of filter n is retained.
struct FilterletMask {
  ConvLayerSpec spec;
  std::vector<std::uint8_t> kept;

  static FilterletMask all(const ConvLayerSpec& spec, bool value);

  bool is_kept(std::size_t filter, std::size_t position) const {
    return kept[filter * spec.filterlets_per_filter() + position] != 0;
  }
  void set(std::size_t filter, std::size_t position, bool value) {
    kept[filter * spec.filterlets_per_filter() + position] = value ? 1 : 0;
  }
  std::size_t kept_total() const;
  // Filters with at least one retained filterlet.
  std::size_t live_filters() const;
};

// kept[n * H*W*C + i] is true when weight i of filter n is retained.
struct WeightMask {
  ConvLayerSpec spec;
  std::vector<std::uint8_t> kept;

  static WeightMask all(const ConvLayerSpec& spec, bool value);
  static WeightMask from_filterlets(const FilterletMask& mask);
  std::size_t kept_total() const;
};

template <typename T>
struct FwcsLayer {
  std::vector<T> arr;
  std::uint32_t size = 0;
  std::vector<std::uint32_t> c_ptr;
  std::vector<std::uint32_t> f_idx;

  std::size_t filters() const { return f_idx.empty() ? 0 : f_idx.size() - 1; }
  std::size_t retained() const { return f_idx.empty() ? 0 : f_idx.back(); }
  friend bool operator==(const FwcsLayer&, const FwcsLayer&) = default;
};

template <typename T>
struct CsrLayer {
  std::vector<T> arr;
  std::vector<std::uint32_t> c_ptr;
  std::vector<std::uint32_t> f_idx;

  std::size_t filters() const { return f_idx.empty() ? 0 : f_idx.size() - 1; }
  friend bool operator==(const CsrLayer&, const CsrLayer&) = default;
};

// Throws FormatError if the filter bank does not match mask.spec.
template <typename T>
FwcsLayer<T> encode_fwcs(const Tensor<T>& weights, const FilterletMask& mask);

// Throws CorruptionError when any FWCS invariant is violated for `spec`.
template <typename T>
void validate_fwcs(const FwcsLayer<T>& layer, const ConvLayerSpec& spec);

template <typename T>
Tensor<T> decode_fwcs(const FwcsLayer<T>& layer, const ConvLayerSpec& spec);

template <typename T>
CsrLayer<T> encode_csr(const Tensor<T>& weights, const WeightMask& mask);

template <typename T>
void validate_csr(const CsrLayer<T>& layer, const ConvLayerSpec& spec);

template <typename T>
Tensor<T> decode_csr(const CsrLayer<T>& layer, const ConvLayerSpec& spec);

// Storage in bytes for m-bit weights and m0-bit index entries (bits / 8,
// rounded up). FWCS counts arr, c_ptr, f_idx and the size field; CSR the
// first three; dense is m * |K|.
std::size_t fwcs_footprint(std::size_t arr_len, std::size_t c_ptr_len, std::size_t f_idx_len,
                           unsigned m, unsigned m0 = 16);
std::size_t csr_footprint(std::size_t arr_len, std::size_t c_ptr_len, std::size_t f_idx_len,
                          unsigned m, unsigned m0 = 16);
std::size_t dense_footprint(const ConvLayerSpec& spec, unsigned m);

template <typename T>
std::size_t storage_footprint(const FwcsLayer<T>& layer, unsigned m, unsigned m0 = 16) {
  return fwcs_footprint(layer.arr.size(), layer.c_ptr.size(), layer.f_idx.size(), m, m0);
}
template <typename T>
std::size_t storage_footprint(const CsrLayer<T>& layer, unsigned m, unsigned m0 = 16) {
  return csr_footprint(layer.arr.size(), layer.c_ptr.size(), layer.f_idx.size(), m, m0);
}

// Magic plus the three u32 length fields of a serialized FWCS / CSR block.
inline constexpr std::size_t kBlockHeaderBytes = 16;

// FWCS block: "FWCS", u16 size, u32 arr length, arr values, u32 c_ptr length,
// u16 entries, u32 f_idx length, u16 entries. Index values above 0xFFFF throw
// FormatError.
template <typename T>
std::vector<std::uint8_t> serialize_fwcs(const FwcsLayer<T>& layer);
template <typename T>
FwcsLayer<T> parse_fwcs(std::span<const std::uint8_t> blob);

// CSR block: "CSRW", u32 arr length, arr values, u32 c_ptr length, u16
// entries, u32 f_idx length, u16 entries.
template <typename T>
std::vector<std::uint8_t> serialize_csr(const CsrLayer<T>& layer);
template <typename T>
CsrLayer<T> parse_csr(std::span<const std::uint8_t> blob);

}  // namespace dtmm
