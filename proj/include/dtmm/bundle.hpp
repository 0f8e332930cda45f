// bundle.hpp: single-file model container.
//
// Layout (little-endian):
//   "DTMB", u32 version, u32 manifest length, manifest (canonical JSON),
//   u32 payload count, per payload {u64 offset, u64 length} relative to the
//   payload section, u32 CRC-32 of the payload section, payload section.
//
// Payload i belongs to manifest layer i and is a tensor blob ("DTTN"), an
// FWCS block ("FWCS") or a CSR block ("CSRW") according to its format.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dtmm/fwcs.hpp"
#include "dtmm/importance.hpp"
#include "dtmm/tensor.hpp"

namespace dtmm {

enum class LayerFormat { kDense, kFwcs, kCsr };

std::string format_name(LayerFormat f);
LayerFormat parse_format_name(const std::string& name);

struct LayerRecord {
  std::string name;
  ConvLayerSpec spec;
  LayerFormat format = LayerFormat::kDense;
  DType dtype = DType::kInt8;
  QuantParams weight_quant;
  QuantParams output_quant;
  bool relu = false;
  std::vector<std::int32_t> bias;  // int8 layers, accumulator scale
  std::vector<float> bias_f;       // float32 layers
  std::vector<std::uint8_t> payload;
};

struct ModelBundle {
  std::string name;
  std::string role = "model";  // "model" or "grads"
  QuantParams input_quant;
  // Gradient bundles: samples stacked along the filter axis of each tensor.
  std::size_t samples = 1;
  std::vector<LayerRecord> layers;

  std::vector<ConvLayerSpec> specs() const;
};

struct BundleLayout {
  std::size_t header_bytes = 0;   // everything before the payload section
  std::size_t payload_bytes = 0;
  std::vector<std::size_t> payload_sizes;
};

std::vector<std::uint8_t> serialize_bundle(const ModelBundle& bundle);
// Throws CorruptionError on any structural problem or checksum mismatch.
ModelBundle parse_bundle(std::span<const std::uint8_t> bytes, BundleLayout* layout = nullptr);

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& path, BundleLayout* layout = nullptr);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Dense filter bank of a layer, whatever its stored format.
template <typename T>
Tensor<T> decode_weights(const LayerRecord& layer);

template <typename T>
FwcsLayer<T> fwcs_payload(const LayerRecord& layer);
template <typename T>
CsrLayer<T> csr_payload(const LayerRecord& layer);

// Float view of an int8 or float32 layer's weights.
TensorF dequantized_weights(const LayerRecord& layer);

// Gradients of a "grads" bundle averaged over the first `batch` samples
// (0 = all). Throws DataError when the layer names differ from `model`.
GradientBundle gradients_from_bundle(const ModelBundle& grads, const ModelBundle& model,
                                     std::size_t batch = 0);

}  // namespace dtmm
