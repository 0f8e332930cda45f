#include "dtmm/fwcs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dtmm/bytes.hpp"

namespace dtmm {

std::size_t kept_count(std::size_t count, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("alpha outside [0, 1]");
  const auto kept = static_cast<std::size_t>(std::floor((1.0 - alpha) * static_cast<double>(count) + 0.5));
  return std::min(kept, count);
}

FilterletMask FilterletMask::all(const ConvLayerSpec& spec, bool value) {
  return {spec, std::vector<std::uint8_t>(spec.filterlet_count(), value ? 1 : 0)};
}

std::size_t FilterletMask::kept_total() const {
  return static_cast<std::size_t>(std::count(kept.begin(), kept.end(), 1));
}

std::size_t FilterletMask::live_filters() const {
  const std::size_t per = spec.filterlets_per_filter();
  std::size_t live = 0;
  for (std::size_t n = 0; n < spec.n_filters; ++n) {
    auto first = kept.begin() + static_cast<std::ptrdiff_t>(n * per);
    if (std::any_of(first, first + static_cast<std::ptrdiff_t>(per), [](auto k) { return k != 0; }))
      ++live;
  }
  return live;
}

WeightMask WeightMask::all(const ConvLayerSpec& spec, bool value) {
  return {spec, std::vector<std::uint8_t>(spec.weight_count(), value ? 1 : 0)};
}

WeightMask WeightMask::from_filterlets(const FilterletMask& mask) {
  WeightMask out = all(mask.spec, false);
  const std::size_t c = mask.spec.channels;
  for (std::size_t i = 0; i < mask.kept.size(); ++i)
    std::fill_n(out.kept.begin() + static_cast<std::ptrdiff_t>(i * c), c, mask.kept[i]);
  return out;
}

std::size_t WeightMask::kept_total() const {
  return static_cast<std::size_t>(std::count(kept.begin(), kept.end(), 1));
}

namespace {

template <typename T>
void check_bank(const Tensor<T>& weights, const ConvLayerSpec& spec) {
  if (weights.rank() != 4 || weights.count() != spec.n_filters ||
      weights.height() != spec.kernel_h || weights.width() != spec.kernel_w ||
      weights.channels() != spec.channels)
    throw FormatError("weight tensor shape does not match layer spec");
}

// Shared index checks for FWCS (granularity = C) and CSR (granularity = 1).
void check_index(const std::vector<std::uint32_t>& c_ptr, const std::vector<std::uint32_t>& f_idx,
                 const ConvLayerSpec& spec, std::size_t granularity, const char* what) {
  const std::string tag(what);
  if (f_idx.size() != spec.n_filters + 1) throw CorruptionError(tag + ": f_idx length != N + 1");
  if (f_idx.front() != 0) throw CorruptionError(tag + ": f_idx must start at 0");
  if (f_idx.back() != c_ptr.size()) throw CorruptionError(tag + ": f_idx sentinel != c_ptr length");
  for (std::size_t n = 0; n < spec.n_filters; ++n) {
    if (f_idx[n] > f_idx[n + 1]) throw CorruptionError(tag + ": f_idx decreasing");
    for (std::size_t j = f_idx[n]; j < f_idx[n + 1]; ++j) {
      if (c_ptr[j] + granularity > spec.filter_size())
        throw CorruptionError(tag + ": c_ptr outside filter");
      if (c_ptr[j] % granularity != 0)
        throw CorruptionError(tag + ": c_ptr not aligned to filterlet");
      if (j > f_idx[n] && c_ptr[j] <= c_ptr[j - 1])
        throw CorruptionError(tag + ": c_ptr not increasing within filter");
    }
  }
}

std::uint16_t narrow16(std::uint32_t v) {
  if (v > std::numeric_limits<std::uint16_t>::max())
    throw FormatError("index value does not fit a 16-bit entry");
  return static_cast<std::uint16_t>(v);
}

void write_index(ByteWriter& w, const std::vector<std::uint32_t>& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (auto x : v) w.u16(narrow16(x));
}

std::vector<std::uint32_t> read_index(ByteReader& r) {
  const std::uint32_t len = r.u32();
  if (static_cast<std::size_t>(len) * 2 > r.remaining()) throw CorruptionError("truncated index array");
  std::vector<std::uint32_t> v(len);
  for (auto& x : v) x = r.u16();
  return v;
}

template <typename T>
std::vector<T> read_values(ByteReader& r) {
  const std::uint32_t len = r.u32();
  if (static_cast<std::size_t>(len) * sizeof(T) > r.remaining())
    throw CorruptionError("truncated weight array");
  std::vector<T> v(len);
  for (auto& x : v) x = read_value<T>(r);
  return v;
}

}  // namespace

template <typename T>
FwcsLayer<T> encode_fwcs(const Tensor<T>& weights, const FilterletMask& mask) {
  const ConvLayerSpec& spec = mask.spec;
  check_bank(weights, spec);
  if (mask.kept.size() != spec.filterlet_count()) throw FormatError("mask size mismatch");

  FwcsLayer<T> out;
  out.size = static_cast<std::uint32_t>(spec.channels);
  out.f_idx.reserve(spec.n_filters + 1);
  const std::size_t per = spec.filterlets_per_filter();
  for (std::size_t n = 0; n < spec.n_filters; ++n) {
    out.f_idx.push_back(static_cast<std::uint32_t>(out.c_ptr.size()));
    const auto filter = weights.block(n);
    for (std::size_t p = 0; p < per; ++p) {
      if (!mask.is_kept(n, p)) continue;
      const std::size_t first = p * spec.channels;
      out.c_ptr.push_back(static_cast<std::uint32_t>(first));
      out.arr.insert(out.arr.end(), filter.begin() + static_cast<std::ptrdiff_t>(first),
                     filter.begin() + static_cast<std::ptrdiff_t>(first + spec.channels));
    }
  }
  out.f_idx.push_back(static_cast<std::uint32_t>(out.c_ptr.size()));
  return out;
}

template <typename T>
void validate_fwcs(const FwcsLayer<T>& layer, const ConvLayerSpec& spec) {
  if (layer.size != spec.channels) throw CorruptionError("fwcs: size != channel count");
  check_index(layer.c_ptr, layer.f_idx, spec, spec.channels, "fwcs");
  if (layer.arr.size() != static_cast<std::size_t>(layer.size) * layer.c_ptr.size())
    throw CorruptionError("fwcs: arr length != size * retained filterlets");
}

template <typename T>
Tensor<T> decode_fwcs(const FwcsLayer<T>& layer, const ConvLayerSpec& spec) {
  validate_fwcs(layer, spec);
  auto out = Tensor<T>::filters(spec.n_filters, spec.kernel_h, spec.kernel_w, spec.channels);
  std::size_t i = 0;
  for (std::size_t n = 0; n < spec.n_filters; ++n) {
    auto filter = out.block(n);
    for (std::size_t j = layer.f_idx[n]; j < layer.f_idx[n + 1]; ++j, i += layer.size)
      std::copy_n(layer.arr.begin() + static_cast<std::ptrdiff_t>(i), layer.size,
                  filter.begin() + layer.c_ptr[j]);
  }
  return out;
}

template <typename T>
CsrLayer<T> encode_csr(const Tensor<T>& weights, const WeightMask& mask) {
  const ConvLayerSpec& spec = mask.spec;
  check_bank(weights, spec);
  if (mask.kept.size() != spec.weight_count()) throw FormatError("mask size mismatch");

  CsrLayer<T> out;
  out.f_idx.reserve(spec.n_filters + 1);
  const std::size_t len = spec.filter_size();
  for (std::size_t n = 0; n < spec.n_filters; ++n) {
    out.f_idx.push_back(static_cast<std::uint32_t>(out.c_ptr.size()));
    const auto filter = weights.block(n);
    for (std::size_t i = 0; i < len; ++i) {
      if (!mask.kept[n * len + i]) continue;
      out.c_ptr.push_back(static_cast<std::uint32_t>(i));
      out.arr.push_back(filter[i]);
    }
  }
  out.f_idx.push_back(static_cast<std::uint32_t>(out.c_ptr.size()));
  return out;
}

template <typename T>
void validate_csr(const CsrLayer<T>& layer, const ConvLayerSpec& spec) {
  check_index(layer.c_ptr, layer.f_idx, spec, 1, "csr");
  if (layer.arr.size() != layer.c_ptr.size()) throw CorruptionError("csr: arr length != c_ptr length");
}

template <typename T>
Tensor<T> decode_csr(const CsrLayer<T>& layer, const ConvLayerSpec& spec) {
  validate_csr(layer, spec);
  auto out = Tensor<T>::filters(spec.n_filters, spec.kernel_h, spec.kernel_w, spec.channels);
  for (std::size_t n = 0; n < spec.n_filters; ++n) {
    auto filter = out.block(n);
    for (std::size_t j = layer.f_idx[n]; j < layer.f_idx[n + 1]; ++j) filter[layer.c_ptr[j]] = layer.arr[j];
  }
  return out;
}

namespace {
std::size_t bits_to_bytes(std::size_t bits) { return (bits + 7) / 8; }
}  // namespace

std::size_t fwcs_footprint(std::size_t arr_len, std::size_t c_ptr_len, std::size_t f_idx_len,
                           unsigned m, unsigned m0) {
  return bits_to_bytes(m * arr_len + m0 * (c_ptr_len + f_idx_len + 1));
}

std::size_t csr_footprint(std::size_t arr_len, std::size_t c_ptr_len, std::size_t f_idx_len,
                          unsigned m, unsigned m0) {
  return bits_to_bytes(m * arr_len + m0 * (c_ptr_len + f_idx_len));
}

std::size_t dense_footprint(const ConvLayerSpec& spec, unsigned m) {
  return bits_to_bytes(m * spec.weight_count());
}

template <typename T>
std::vector<std::uint8_t> serialize_fwcs(const FwcsLayer<T>& layer) {
  ByteWriter w;
  w.magic("FWCS");
  w.u16(narrow16(layer.size));
  w.u32(static_cast<std::uint32_t>(layer.arr.size()));
  for (T v : layer.arr) write_value(w, v);
  write_index(w, layer.c_ptr);
  write_index(w, layer.f_idx);
  return w.take();
}

template <typename T>
FwcsLayer<T> parse_fwcs(std::span<const std::uint8_t> blob) {
  ByteReader r(blob);
  r.expect_magic("FWCS");
  FwcsLayer<T> out;
  out.size = r.u16();
  out.arr = read_values<T>(r);
  out.c_ptr = read_index(r);
  out.f_idx = read_index(r);
  if (!r.done()) throw CorruptionError("trailing bytes after FWCS block");
  return out;
}

template <typename T>
std::vector<std::uint8_t> serialize_csr(const CsrLayer<T>& layer) {
  ByteWriter w;
  w.magic("CSRW");
  w.u32(static_cast<std::uint32_t>(layer.arr.size()));
  for (T v : layer.arr) write_value(w, v);
  write_index(w, layer.c_ptr);
  write_index(w, layer.f_idx);
  return w.take();
}

template <typename T>
CsrLayer<T> parse_csr(std::span<const std::uint8_t> blob) {
  ByteReader r(blob);
  r.expect_magic("CSRW");
  CsrLayer<T> out;
  out.arr = read_values<T>(r);
  out.c_ptr = read_index(r);
  out.f_idx = read_index(r);
  if (!r.done()) throw CorruptionError("trailing bytes after CSR block");
  return out;
}

#define DTMM_INSTANTIATE_FORMATS(T)                                                   \
  template FwcsLayer<T> encode_fwcs(const Tensor<T>&, const FilterletMask&);          \
  template void validate_fwcs(const FwcsLayer<T>&, const ConvLayerSpec&);             \
  template Tensor<T> decode_fwcs(const FwcsLayer<T>&, const ConvLayerSpec&);          \
  template CsrLayer<T> encode_csr(const Tensor<T>&, const WeightMask&);               \
  template void validate_csr(const CsrLayer<T>&, const ConvLayerSpec&);               \
  template Tensor<T> decode_csr(const CsrLayer<T>&, const ConvLayerSpec&);            \
  template std::vector<std::uint8_t> serialize_fwcs(const FwcsLayer<T>&);             \
  template FwcsLayer<T> parse_fwcs<T>(std::span<const std::uint8_t>);                 \
  template std::vector<std::uint8_t> serialize_csr(const CsrLayer<T>&);               \
  template CsrLayer<T> parse_csr<T>(std::span<const std::uint8_t>);

DTMM_INSTANTIATE_FORMATS(float)
DTMM_INSTANTIATE_FORMATS(std::int8_t)

#undef DTMM_INSTANTIATE_FORMATS

}  // namespace dtmm
