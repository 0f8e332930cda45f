#include <cstring>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "dtmm/pipeline.hpp"
#include "util.hpp"

using namespace dtmm;

namespace {

// One layer in each format.
ModelBundle mixed_bundle() {
  std::mt19937_64 rng(1);
  const auto toy = make_toy_model(default_toy_specs(), 3);
  ModelBundle b = toy.model;
  const auto& s1 = b.layers[1].spec;
  const auto w1 = decode_weights<std::int8_t>(b.layers[1]);
  b.layers[1].format = LayerFormat::kFwcs;
  b.layers[1].payload = serialize_fwcs(encode_fwcs(w1, testutil::random_mask(rng, s1, 0.5)));
  const auto& s2 = b.layers[2].spec;
  const auto w2 = decode_weights<std::int8_t>(b.layers[2]);
  b.layers[2].format = LayerFormat::kCsr;
  b.layers[2].payload = serialize_csr(encode_csr(w2, testutil::random_weight_mask(rng, s2, 0.5)));
  return b;
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, b.data() + at, 4);
  return v;
}

}  // namespace

TEST_CASE("round trip is bit-exact") {
  const ModelBundle b = mixed_bundle();
  const auto bytes = serialize_bundle(b);
  BundleLayout layout;
  const ModelBundle back = parse_bundle(bytes, &layout);
  CHECK(serialize_bundle(back) == bytes);
  REQUIRE(back.layers.size() == 3);
  CHECK(back.layers[1].format == LayerFormat::kFwcs);
  CHECK(back.layers[2].format == LayerFormat::kCsr);
  CHECK(back.layers[0].bias == b.layers[0].bias);
  CHECK(back.layers[0].output_quant.scale == b.layers[0].output_quant.scale);
  CHECK(layout.header_bytes + layout.payload_bytes == bytes.size());
  CHECK(layout.payload_sizes[1] == b.layers[1].payload.size());
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(decode_weights<std::int8_t>(back.layers[i]) == decode_weights<std::int8_t>(b.layers[i]));

  const auto path = std::filesystem::temp_directory_path() / "dtmm_bundle_test.dtmb";
  save_bundle(path, b);
  CHECK(read_file(path) == bytes);
  CHECK(serialize_bundle(load_bundle(path)) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("empty bundle") {
  ModelBundle b;
  b.name = "empty";
  const auto back = parse_bundle(serialize_bundle(b));
  CHECK(back.layers.empty());
  CHECK(bench_bundle(back, ComputeSchedule::kReordered, {}).empty());
}

TEST_CASE("corruption is detected") {
  const auto bytes = serialize_bundle(mixed_bundle());
  const std::size_t manifest_len = read_u32(bytes, 8);

  auto flipped = bytes;
  flipped.back() ^= 0x01;
  CHECK_THROWS_AS(parse_bundle(flipped), CorruptionError);

  auto magic = bytes;
  magic[1] = 'X';
  CHECK_THROWS_AS(parse_bundle(magic), CorruptionError);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 10);
  CHECK_THROWS_AS(parse_bundle(truncated), CorruptionError);
  CHECK_THROWS_AS(parse_bundle(std::vector<std::uint8_t>{}), CorruptionError);

  auto manifest = bytes;
  manifest[12] = '!';
  CHECK_THROWS_AS(parse_bundle(manifest), CorruptionError);

  auto count = bytes;
  const std::size_t count_at = 12 + manifest_len;
  count[count_at] = static_cast<std::uint8_t>(count[count_at] + 1);
  CHECK_THROWS_AS(parse_bundle(count), CorruptionError);

  // A payload whose magic disagrees with the declared format.
  ModelBundle swapped = mixed_bundle();
  std::swap(swapped.layers[1].payload, swapped.layers[2].payload);
  CHECK_THROWS_AS(parse_bundle(serialize_bundle(swapped)), CorruptionError);
}

TEST_CASE("gradient bundles") {
  const auto toy = make_toy_model(default_toy_specs(), 4, 3);
  const auto all = gradients_from_bundle(toy.grads, toy.model);
  const auto first = gradients_from_bundle(toy.grads, toy.model, 1);
  REQUIRE(all.layers.size() == 3);
  const auto raw = parse_tensor<float>(toy.grads.layers[0].payload);
  const std::size_t len = toy.model.layers[0].spec.weight_count();
  for (std::size_t i = 0; i < len; ++i) {
    const double mean = (double(raw.data()[i]) + raw.data()[len + i] + raw.data()[2 * len + i]) / 3.0;
    CHECK(all.layers[0].data()[i] == doctest::Approx(mean).epsilon(1e-6));
    CHECK(first.layers[0].data()[i] == raw.data()[i]);
  }
  ModelBundle renamed = toy.grads;
  renamed.layers[1].name = "other";
  CHECK_THROWS_AS(gradients_from_bundle(renamed, toy.model), DataError);
}

TEST_CASE("toy model runs and chains") {
  const auto toy = make_toy_model(default_toy_specs(), 9);
  RunReport rep;
  const auto y = run_model(toy.model, toy.input, ComputeSchedule::kReordered, {}, &rep);
  const auto& last = toy.model.layers.back().spec;
  CHECK(y.height() == last.out_h());
  CHECK(y.channels() == last.n_filters);
  CHECK(rep.layers.size() == 3);
  // Not degenerate: outputs take several distinct values.
  std::set<std::int8_t> distinct(y.data().begin(), y.data().end());
  CHECK(distinct.size() > 10);
  CHECK_THROWS_AS(run_model(toy.model, TensorQ::feature(3, 3, 8), ComputeSchedule::kReordered, {}), DataError);
}
