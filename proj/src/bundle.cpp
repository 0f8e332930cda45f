#include "dtmm/bundle.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "dtmm/bytes.hpp"
#include "json.hpp"

namespace dtmm {

using nlohmann::json;

namespace {

constexpr std::uint32_t kBundleVersion = 1;

const char* magic_for(LayerFormat f) {
  switch (f) {
    case LayerFormat::kDense: return "DTTN";
    case LayerFormat::kFwcs: return "FWCS";
    case LayerFormat::kCsr: return "CSRW";
  }
  return "????";
}

json quant_json(const QuantParams& q) { return {{"scale", q.scale}, {"zero_point", q.zero_point}}; }

QuantParams quant_from(const json& j) {
  return {j.at("scale").get<float>(), j.at("zero_point").get<std::int32_t>()};
}

json spec_json(const ConvLayerSpec& s) {
  return {{"n_filters", s.n_filters}, {"kernel_h", s.kernel_h}, {"kernel_w", s.kernel_w},
          {"channels", s.channels},   {"stride", s.stride},     {"input_h", s.input_h},
          {"input_w", s.input_w}};
}

ConvLayerSpec spec_from(const json& j) {
  ConvLayerSpec s;
  s.n_filters = j.at("n_filters").get<std::size_t>();
  s.kernel_h = j.at("kernel_h").get<std::size_t>();
  s.kernel_w = j.at("kernel_w").get<std::size_t>();
  s.channels = j.at("channels").get<std::size_t>();
  s.stride = j.at("stride").get<std::size_t>();
  s.input_h = j.at("input_h").get<std::size_t>();
  s.input_w = j.at("input_w").get<std::size_t>();
  return s;
}

json manifest_json(const ModelBundle& b) {
  json layers = json::array();
  for (const auto& l : b.layers) {
    json j = {{"name", l.name},
              {"format", format_name(l.format)},
              {"dtype", dtype_name(l.dtype)},
              {"spec", spec_json(l.spec)},
              {"weight_quant", quant_json(l.weight_quant)},
              {"output_quant", quant_json(l.output_quant)},
              {"relu", l.relu}};
    if (!l.bias.empty()) j["bias"] = l.bias;
    if (!l.bias_f.empty()) j["bias_f"] = l.bias_f;
    layers.push_back(std::move(j));
  }
  return {{"name", b.name},
          {"role", b.role},
          {"samples", b.samples},
          {"input_quant", quant_json(b.input_quant)},
          {"layers", std::move(layers)}};
}

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in slices.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, bytes.data() + pos, static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string format_name(LayerFormat f) {
  switch (f) {
    case LayerFormat::kDense: return "dense";
    case LayerFormat::kFwcs: return "fwcs";
    case LayerFormat::kCsr: return "csr";
  }
  return "?";
}

LayerFormat parse_format_name(const std::string& name) {
  if (name == "dense") return LayerFormat::kDense;
  if (name == "fwcs") return LayerFormat::kFwcs;
  if (name == "csr") return LayerFormat::kCsr;
  throw CorruptionError("unknown layer format '" + name + "'");
}

std::vector<ConvLayerSpec> ModelBundle::specs() const {
  std::vector<ConvLayerSpec> out;
  for (const auto& l : layers) out.push_back(l.spec);
  return out;
}

std::vector<std::uint8_t> serialize_bundle(const ModelBundle& bundle) {
  const std::string manifest = manifest_json(bundle).dump();
  ByteWriter w;
  w.magic("DTMB");
  w.u32(kBundleVersion);
  w.u32(static_cast<std::uint32_t>(manifest.size()));
  w.bytes({reinterpret_cast<const std::uint8_t*>(manifest.data()), manifest.size()});
  w.u32(static_cast<std::uint32_t>(bundle.layers.size()));
  std::vector<std::uint8_t> section;
  for (const auto& l : bundle.layers) {
    w.u64(section.size());
    w.u64(l.payload.size());
    section.insert(section.end(), l.payload.begin(), l.payload.end());
  }
  w.u32(crc_of(section));
  w.bytes(section);
  return w.take();
}

ModelBundle parse_bundle(std::span<const std::uint8_t> bytes, BundleLayout* layout) {
  ByteReader r(bytes);
  r.expect_magic("DTMB");
  if (r.u32() != kBundleVersion) throw CorruptionError("unsupported bundle version");
  const auto manifest_bytes = r.bytes(r.u32());
  json manifest;
  try {
    manifest = json::parse(manifest_bytes.begin(), manifest_bytes.end());
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("bundle manifest is not valid JSON: ") + e.what());
  }

  const std::uint32_t count = r.u32();
  std::vector<std::pair<std::uint64_t, std::uint64_t>> toc(count);
  for (auto& [off, len] : toc) {
    off = r.u64();
    len = r.u64();
  }
  const std::uint32_t crc = r.u32();
  const std::size_t header = r.position();
  const auto section = r.bytes(r.remaining());
  if (crc_of(section) != crc) throw CorruptionError("bundle payload checksum mismatch");

  ModelBundle b;
  try {
    b.name = manifest.at("name").get<std::string>();
    b.role = manifest.at("role").get<std::string>();
    b.samples = manifest.at("samples").get<std::size_t>();
    b.input_quant = quant_from(manifest.at("input_quant"));
    const auto& layers = manifest.at("layers");
    if (layers.size() != count) throw CorruptionError("manifest layer count != payload count");
    for (std::size_t i = 0; i < count; ++i) {
      const auto& j = layers[i];
      LayerRecord l;
      l.name = j.at("name").get<std::string>();
      l.format = parse_format_name(j.at("format").get<std::string>());
      const auto dt = j.at("dtype").get<std::string>();
      if (dt == "int8")
        l.dtype = DType::kInt8;
      else if (dt == "float32")
        l.dtype = DType::kFloat32;
      else
        throw CorruptionError("unsupported layer dtype '" + dt + "'");
      l.spec = spec_from(j.at("spec"));
      l.weight_quant = quant_from(j.at("weight_quant"));
      l.output_quant = quant_from(j.at("output_quant"));
      l.relu = j.at("relu").get<bool>();
      if (j.contains("bias")) l.bias = j.at("bias").get<std::vector<std::int32_t>>();
      if (j.contains("bias_f")) l.bias_f = j.at("bias_f").get<std::vector<float>>();
      try {
        l.spec.validate();
      } catch (const DataError& e) {
        throw CorruptionError(std::string("layer ") + l.name + ": " + e.what());
      }

      const auto [off, len] = toc[i];
      if (off > section.size() || len > section.size() - off)
        throw CorruptionError("payload range outside bundle");
      const auto blob = section.subspan(off, len);
      if (blob.size() < 4 || std::memcmp(blob.data(), magic_for(l.format), 4) != 0)
        throw CorruptionError("layer " + l.name + ": payload magic does not match format " +
                              format_name(l.format));
      l.payload.assign(blob.begin(), blob.end());
      b.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("bundle manifest: ") + e.what());
  }

  if (layout) {
    layout->header_bytes = header;
    layout->payload_bytes = section.size();
    layout->payload_sizes.clear();
    for (const auto& [off, len] : toc) layout->payload_sizes.push_back(len);
  }
  return b;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle) {
  write_file(path, serialize_bundle(bundle));
}

ModelBundle load_bundle(const std::filesystem::path& path, BundleLayout* layout) {
  return parse_bundle(read_file(path), layout);
}

template <typename T>
FwcsLayer<T> fwcs_payload(const LayerRecord& layer) {
  if (layer.format != LayerFormat::kFwcs) throw CorruptionError("layer " + layer.name + " is not FWCS");
  auto f = parse_fwcs<T>(layer.payload);
  validate_fwcs(f, layer.spec);
  return f;
}

template <typename T>
CsrLayer<T> csr_payload(const LayerRecord& layer) {
  if (layer.format != LayerFormat::kCsr) throw CorruptionError("layer " + layer.name + " is not CSR");
  auto c = parse_csr<T>(layer.payload);
  validate_csr(c, layer.spec);
  return c;
}

template <typename T>
Tensor<T> decode_weights(const LayerRecord& layer) {
  if (layer.dtype != DTypeOf<T>::value) throw DataError("layer " + layer.name + ": dtype mismatch");
  switch (layer.format) {
    case LayerFormat::kDense: {
      auto t = parse_tensor<T>(layer.payload);
      const auto& s = layer.spec;
      if (t.rank() != 4 || t.count() != s.n_filters || t.height() != s.kernel_h ||
          t.width() != s.kernel_w || t.channels() != s.channels)
        throw CorruptionError("layer " + layer.name + ": dense payload shape mismatch");
      return t;
    }
    case LayerFormat::kFwcs: return decode_fwcs(fwcs_payload<T>(layer), layer.spec);
    case LayerFormat::kCsr: return decode_csr(csr_payload<T>(layer), layer.spec);
  }
  throw CorruptionError("unknown layer format");
}

template TensorF decode_weights<float>(const LayerRecord&);
template TensorQ decode_weights<std::int8_t>(const LayerRecord&);
template FwcsLayer<float> fwcs_payload<float>(const LayerRecord&);
template FwcsLayer<std::int8_t> fwcs_payload<std::int8_t>(const LayerRecord&);
template CsrLayer<float> csr_payload<float>(const LayerRecord&);
template CsrLayer<std::int8_t> csr_payload<std::int8_t>(const LayerRecord&);

TensorF dequantized_weights(const LayerRecord& layer) {
  if (layer.dtype == DType::kFloat32) return decode_weights<float>(layer);
  return dequantize(decode_weights<std::int8_t>(layer), layer.weight_quant);
}

GradientBundle gradients_from_bundle(const ModelBundle& grads, const ModelBundle& model,
                                     std::size_t batch) {
  if (grads.role != "grads") throw DataError("gradient bundle has role '" + grads.role + "'");
  if (grads.layers.size() != model.layers.size()) throw DataError("gradient bundle layer count mismatch");
  const std::size_t samples = grads.samples == 0 ? 1 : grads.samples;
  const std::size_t use = batch == 0 ? samples : std::min(batch, samples);

  std::vector<GradientBundle> per_sample(use);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& g = grads.layers[l];
    const auto& spec = model.layers[l].spec;
    if (g.name != model.layers[l].name)
      throw DataError("gradient layer '" + g.name + "' does not match model layer '" +
                      model.layers[l].name + "'");
    if (g.dtype != DType::kFloat32 || g.format != LayerFormat::kDense)
      throw DataError("gradient layers must be dense float32");
    const auto t = parse_tensor<float>(g.payload);
    if (t.rank() != 4 || t.count() != samples * spec.n_filters || t.height() != spec.kernel_h ||
        t.width() != spec.kernel_w || t.channels() != spec.channels)
      throw DataError("gradient tensor shape mismatch for layer " + g.name);
    const std::size_t len = spec.weight_count();
    for (std::size_t s = 0; s < use; ++s) {
      std::vector<float> slice(t.data().begin() + static_cast<std::ptrdiff_t>(s * len),
                               t.data().begin() + static_cast<std::ptrdiff_t>((s + 1) * len));
      per_sample[s].layers.push_back(TensorF::from_data(
          4, {spec.n_filters, spec.kernel_h, spec.kernel_w, spec.channels}, std::move(slice)));
    }
  }
  return average_gradients(per_sample);
}

}  // namespace dtmm
