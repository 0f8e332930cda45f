// tensor.hpp: channel-major tensors, convolution geometry and 8-bit
// quantization.
//
// Layout: a rank-3 tensor (H, W, C) stores element (h, w, c) at
// (h * W + w) * C + c. A rank-4 tensor (N, H, W, C) is N such blocks laid
// back to back; filter banks use it with one block per filter.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dtmm/error.hpp"

namespace dtmm {

enum class DType : std::uint8_t { kFloat32 = 0, kInt8 = 1, kInt32 = 2 };

template <typename T>
struct DTypeOf;
template <>
struct DTypeOf<float> {
  static constexpr DType value = DType::kFloat32;
};
template <>
struct DTypeOf<std::int8_t> {
  static constexpr DType value = DType::kInt8;
};
template <>
struct DTypeOf<std::int32_t> {
  static constexpr DType value = DType::kInt32;
};

std::size_t dtype_bytes(DType t);
std::string dtype_name(DType t);

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  // Feature map (H, W, C).
  static Tensor feature(std::size_t h, std::size_t w, std::size_t c, T fill = T{}) {
    return from_data(3, {1, h, w, c}, std::vector<T>(h * w * c, fill));
  }

  // Filter bank (N, H, W, C).
  static Tensor filters(std::size_t n, std::size_t h, std::size_t w, std::size_t c,
                        T fill = T{}) {
    return from_data(4, {n, h, w, c}, std::vector<T>(n * h * w * c, fill));
  }

  static Tensor from_data(std::size_t rank, std::array<std::size_t, 4> dims,
                          std::vector<T> data) {
    if (rank != 3 && rank != 4) throw DataError("tensor rank must be 3 or 4");
    if (rank == 3 && dims[0] != 1) throw DataError("rank-3 tensor with n != 1");
    if (dims[0] * dims[1] * dims[2] * dims[3] != data.size())
      throw DataError("tensor data length does not match extents");
    Tensor t;
    t.rank_ = rank;
    t.dims_ = dims;
    t.data_ = std::move(data);
    return t;
  }

  std::size_t rank() const { return rank_; }
  std::size_t count() const { return dims_[0]; }
  std::size_t height() const { return dims_[1]; }
  std::size_t width() const { return dims_[2]; }
  std::size_t channels() const { return dims_[3]; }
  const std::array<std::size_t, 4>& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const std::vector<T>& values() const { return data_; }

  // Elements of block n (one filter for a filter bank).
  std::span<const T> block(std::size_t n) const {
    const std::size_t len = dims_[1] * dims_[2] * dims_[3];
    return std::span<const T>(data_).subspan(n * len, len);
  }
  std::span<T> block(std::size_t n) {
    const std::size_t len = dims_[1] * dims_[2] * dims_[3];
    return std::span<T>(data_).subspan(n * len, len);
  }

  std::size_t offset(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    if (n >= dims_[0] || h >= dims_[1] || w >= dims_[2] || c >= dims_[3])
      throw BoundsError("tensor coordinate out of range");
    return ((n * dims_[1] + h) * dims_[2] + w) * dims_[3] + c;
  }

  T at(std::size_t h, std::size_t w, std::size_t c) const { return data_[offset(0, h, w, c)]; }
  T& at(std::size_t h, std::size_t w, std::size_t c) { return data_[offset(0, h, w, c)]; }
  T at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return data_[offset(n, h, w, c)];
  }
  T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
    return data_[offset(n, h, w, c)];
  }

  bool same_shape(const Tensor& o) const { return rank_ == o.rank_ && dims_ == o.dims_; }
  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rank_ = 3;
  std::array<std::size_t, 4> dims_{1, 0, 0, 0};
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorQ = Tensor<std::int8_t>;
using TensorAcc = Tensor<std::int32_t>;

// Geometry of one convolution layer with valid padding.
struct ConvLayerSpec {
  std::size_t n_filters = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t channels = 0;
  std::size_t stride = 1;
  std::size_t input_h = 0;
  std::size_t input_w = 0;

  // Throws DataError when any extent is zero or the kernel exceeds the input.
  void validate() const;

  std::size_t out_h() const { return (input_h - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (input_w - kernel_w) / stride + 1; }
  std::size_t filter_size() const { return kernel_h * kernel_w * channels; }
  std::size_t weight_count() const { return n_filters * filter_size(); }
  std::size_t filterlets_per_filter() const { return kernel_h * kernel_w; }
  std::size_t filterlet_count() const { return n_filters * filterlets_per_filter(); }
  std::size_t output_positions() const { return out_h() * out_w(); }

  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

// Index of weight (h, w, c) inside one filter.
std::size_t flat_index(const ConvLayerSpec& spec, std::size_t h, std::size_t w, std::size_t c);

struct Coord3 {
  std::size_t h, w, c;
  friend bool operator==(const Coord3&, const Coord3&) = default;
};
Coord3 coord_of(const ConvLayerSpec& spec, std::size_t index);

// The receptive field of output (out_h, out_w), laid out like one filter.
template <typename T>
std::vector<T> extract_patch(const Tensor<T>& input, const ConvLayerSpec& spec,
                             std::size_t out_h, std::size_t out_w);

struct QuantParams {
  float scale = 1.0f;
  std::int32_t zero_point = 0;
};

// Symmetric weights (zero_point 0) covering [-absmax, absmax].
QuantParams symmetric_params(float absmax);
// Affine activations covering [lo, hi] (range is widened to include 0).
QuantParams affine_params(float lo, float hi);

std::int8_t quantize_value(float x, const QuantParams& q);
TensorQ quantize(const TensorF& t, const QuantParams& q);
TensorF dequantize(const TensorQ& t, const QuantParams& q);

// Tensor blob: "DTTN", u8 dtype tag, u8 rank, u32 extent per dim (rank-3
// blobs omit the leading 1), then raw little-endian values.
template <typename T>
std::vector<std::uint8_t> serialize_tensor(const Tensor<T>& t);
template <typename T>
Tensor<T> parse_tensor(std::span<const std::uint8_t> blob);
// dtype tag of a blob without decoding it.
DType peek_tensor_dtype(std::span<const std::uint8_t> blob);

}  // namespace dtmm
