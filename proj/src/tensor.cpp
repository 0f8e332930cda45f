#include "dtmm/tensor.hpp"

#include "dtmm/bytes.hpp"

#include <algorithm>
#include <cmath>

namespace dtmm {

std::size_t dtype_bytes(DType t) {
  switch (t) {
    case DType::kFloat32: return 4;
    case DType::kInt8: return 1;
    case DType::kInt32: return 4;
  }
  throw DataError("unknown dtype");
}

std::string dtype_name(DType t) {
  switch (t) {
    case DType::kFloat32: return "float32";
    case DType::kInt8: return "int8";
    case DType::kInt32: return "int32";
  }
  throw DataError("unknown dtype");
}

void ConvLayerSpec::validate() const {
  if (n_filters == 0 || kernel_h == 0 || kernel_w == 0 || channels == 0 || stride == 0)
    throw DataError("conv spec: filters, kernel, channels and stride must be positive");
  if (kernel_h > input_h || kernel_w > input_w)
    throw DataError("conv spec: kernel larger than input");
}

std::size_t flat_index(const ConvLayerSpec& spec, std::size_t h, std::size_t w, std::size_t c) {
  if (h >= spec.kernel_h || w >= spec.kernel_w || c >= spec.channels)
    throw BoundsError("flat_index: coordinate outside filter");
  return (h * spec.kernel_w + w) * spec.channels + c;
}

Coord3 coord_of(const ConvLayerSpec& spec, std::size_t index) {
  if (index >= spec.filter_size()) throw BoundsError("coord_of: index outside filter");
  const std::size_t c = index % spec.channels;
  const std::size_t hw = index / spec.channels;
  return {hw / spec.kernel_w, hw % spec.kernel_w, c};
}

template <typename T>
std::vector<T> extract_patch(const Tensor<T>& input, const ConvLayerSpec& spec,
                             std::size_t out_h, std::size_t out_w) {
  if (input.channels() != spec.channels) throw DataError("extract_patch: channel mismatch");
  if (out_h >= spec.out_h() || out_w >= spec.out_w())
    throw BoundsError("extract_patch: output position out of range");
  const std::size_t y0 = out_h * spec.stride;
  const std::size_t x0 = out_w * spec.stride;
  if (y0 + spec.kernel_h > input.height() || x0 + spec.kernel_w > input.width())
    throw BoundsError("extract_patch: receptive field exceeds input");

  std::vector<T> patch(spec.filter_size());
  const auto src = input.data();
  const std::size_t row = spec.kernel_w * spec.channels;
  for (std::size_t h = 0; h < spec.kernel_h; ++h) {
    // One kernel row is contiguous in a channel-major input.
    const std::size_t from = ((y0 + h) * input.width() + x0) * input.channels();
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(from), row,
                patch.begin() + static_cast<std::ptrdiff_t>(h * row));
  }
  return patch;
}

template std::vector<float> extract_patch(const TensorF&, const ConvLayerSpec&, std::size_t,
                                          std::size_t);
template std::vector<std::int8_t> extract_patch(const TensorQ&, const ConvLayerSpec&,
                                                std::size_t, std::size_t);

QuantParams symmetric_params(float absmax) {
  if (!(absmax > 0.0f) || !std::isfinite(absmax)) return {1.0f, 0};
  return {absmax / 127.0f, 0};
}

QuantParams affine_params(float lo, float hi) {
  lo = std::min(lo, 0.0f);
  hi = std::max(hi, 0.0f);
  if (!(hi > lo)) return {1.0f, 0};
  const float scale = (hi - lo) / 255.0f;
  const auto zp = static_cast<std::int32_t>(std::round(-128.0f - lo / scale));
  return {scale, std::clamp<std::int32_t>(zp, -128, 127)};
}

std::int8_t quantize_value(float x, const QuantParams& q) {
  if (!std::isfinite(x)) throw DataError("quantize: non-finite value");
  const double r = std::round(static_cast<double>(x) / q.scale) + q.zero_point;
  return static_cast<std::int8_t>(std::clamp(r, -128.0, 127.0));
}

TensorQ quantize(const TensorF& t, const QuantParams& q) {
  if (!(q.scale > 0.0f)) throw DataError("quantize: scale must be positive");
  std::vector<std::int8_t> out(t.size());
  std::transform(t.data().begin(), t.data().end(), out.begin(),
                 [&](float x) { return quantize_value(x, q); });
  return TensorQ::from_data(t.rank(), t.dims(), std::move(out));
}

TensorF dequantize(const TensorQ& t, const QuantParams& q) {
  std::vector<float> out(t.size());
  std::transform(t.data().begin(), t.data().end(), out.begin(), [&](std::int8_t v) {
    return static_cast<float>(v - q.zero_point) * q.scale;
  });
  return TensorF::from_data(t.rank(), t.dims(), std::move(out));
}

template <typename T>
std::vector<std::uint8_t> serialize_tensor(const Tensor<T>& t) {
  ByteWriter w;
  w.magic("DTTN");
  w.u8(static_cast<std::uint8_t>(DTypeOf<T>::value));
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d = 4 - t.rank(); d < 4; ++d) w.u32(static_cast<std::uint32_t>(t.dims()[d]));
  for (T v : t.data()) write_value(w, v);
  return w.take();
}

DType peek_tensor_dtype(std::span<const std::uint8_t> blob) {
  ByteReader r(blob);
  r.expect_magic("DTTN");
  const auto tag = r.u8();
  if (tag > static_cast<std::uint8_t>(DType::kInt32)) throw CorruptionError("unknown dtype tag");
  return static_cast<DType>(tag);
}

template <typename T>
Tensor<T> parse_tensor(std::span<const std::uint8_t> blob) {
  ByteReader r(blob);
  r.expect_magic("DTTN");
  if (r.u8() != static_cast<std::uint8_t>(DTypeOf<T>::value))
    throw CorruptionError("tensor blob dtype mismatch");
  const std::size_t rank = r.u8();
  if (rank != 3 && rank != 4) throw CorruptionError("tensor blob rank must be 3 or 4");
  std::array<std::size_t, 4> dims{1, 1, 1, 1};
  for (std::size_t d = 4 - rank; d < 4; ++d) dims[d] = r.u32();
  const std::size_t n = dims[0] * dims[1] * dims[2] * dims[3];
  if (n * sizeof(T) != r.remaining()) throw CorruptionError("tensor blob length mismatch");
  std::vector<T> data(n);
  for (auto& v : data) v = read_value<T>(r);
  return Tensor<T>::from_data(rank, dims, std::move(data));
}

template std::vector<std::uint8_t> serialize_tensor(const TensorF&);
template std::vector<std::uint8_t> serialize_tensor(const TensorQ&);
template std::vector<std::uint8_t> serialize_tensor(const TensorAcc&);
template TensorF parse_tensor<float>(std::span<const std::uint8_t>);
template TensorQ parse_tensor<std::int8_t>(std::span<const std::uint8_t>);
template TensorAcc parse_tensor<std::int32_t>(std::span<const std::uint8_t>);

}  // namespace dtmm
