#include <cmath>

#include "doctest.h"
#include "dtmm/conv.hpp"
#include "util.hpp"

using namespace dtmm;

namespace {

// Plain nested loops, no shared helpers.
template <typename T>
Tensor<AccOf<T>> brute_conv(const Tensor<T>& x, const Tensor<T>& w, const ConvLayerSpec& s, int zp = 0) {
  auto y = Tensor<AccOf<T>>::feature(s.out_h(), s.out_w(), s.n_filters);
  for (std::size_t oy = 0; oy < s.out_h(); ++oy)
    for (std::size_t ox = 0; ox < s.out_w(); ++ox)
      for (std::size_t n = 0; n < s.n_filters; ++n) {
        AccOf<T> a = 0;
        for (std::size_t h = 0; h < s.kernel_h; ++h)
          for (std::size_t v = 0; v < s.kernel_w; ++v)
            for (std::size_t c = 0; c < s.channels; ++c)
              a += (static_cast<AccOf<T>>(x.at(oy * s.stride + h, ox * s.stride + v, c)) - zp) *
                   static_cast<AccOf<T>>(w.at(n, h, v, c));
        y.at(oy, ox, n) = a;
      }
  return y;
}

struct Instance {
  ConvLayerSpec spec;
  TensorQ x, w;
};

Instance random_instance(std::mt19937_64& rng) {
  const auto s = testutil::random_spec(rng);
  return {s, testutil::random_q(rng, TensorQ::feature(s.input_h, s.input_w, s.channels)),
          testutil::random_q(rng, TensorQ::filters(s.n_filters, s.kernel_h, s.kernel_w, s.channels))};
}

LaneConfig lanes_of(std::size_t l) {
  LaneConfig c;
  c.lanes = l;
  return c;
}

}  // namespace

TEST_CASE("conv_dense oracles") {
  SUBCASE("1x1 identity filter selects a channel") {
    std::mt19937_64 rng(1);
    const ConvLayerSpec s{1, 1, 1, 3, 1, 4, 5};
    const auto x = testutil::random_f(rng, TensorF::feature(4, 5, 3));
    auto w = TensorF::filters(1, 1, 1, 3);
    w.at(0, 0, 0, 1) = 1.0f;
    const auto y = conv_dense(x, w, s).values;
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t v = 0; v < 5; ++v) CHECK(y.at(h, v, 0) == x.at(h, v, 1));
  }
  SUBCASE("all-ones 2x2 on a ramp gives window sums") {
    const ConvLayerSpec s{1, 2, 2, 1, 1, 3, 4};
    auto x = TensorF::feature(3, 4, 1);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(i);
    const auto y = conv_dense(x, TensorF::filters(1, 2, 2, 1, 1.0f), s).values;
    for (std::size_t oy = 0; oy < 2; ++oy)
      for (std::size_t ox = 0; ox < 3; ++ox) {
        const float i = static_cast<float>(oy * 4 + ox);
        CHECK(y.at(oy, ox, 0) == i + (i + 1) + (i + 4) + (i + 5));
      }
  }
  SUBCASE("zero filters give zero output") {
    std::mt19937_64 rng(2);
    const ConvLayerSpec s{3, 2, 2, 2, 1, 4, 4};
    const auto x = testutil::random_q(rng, TensorQ::feature(4, 4, 2));
    const auto y = conv_dense(x, TensorQ::filters(3, 2, 2, 2), s).values;
    for (auto v : y.data()) CHECK(v == 0);
  }
  SUBCASE("random int8 instances with zero points against nested loops") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 50; ++t) {
      const auto in = random_instance(rng);
      const int zp = static_cast<int>(testutil::pick(rng, 0, 20)) - 10;
      CHECK(conv_dense(in.x, in.w, in.spec, zp).values == brute_conv(in.x, in.w, in.spec, zp));
    }
  }
  SUBCASE("shape mismatch") {
    const ConvLayerSpec s{1, 2, 2, 2, 1, 4, 4};
    CHECK_THROWS_AS(conv_dense(TensorQ::feature(4, 4, 3), TensorQ::filters(1, 2, 2, 2), s), DataError);
    CHECK_THROWS_AS(conv_dense(TensorQ::feature(4, 4, 2), TensorQ::filters(2, 2, 2, 2), s), DataError);
  }
}

TEST_CASE("FWCS operators equal the dense oracle") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto in = random_instance(rng);
    const auto dense = conv_dense(in.x, in.w, in.spec).values;
    const auto full = encode_fwcs(in.w, FilterletMask::all(in.spec, true));
    for (std::size_t l : {2u, 4u, 8u, 16u}) {
      CHECK(conv_fwcs(in.x, full, in.spec, lanes_of(l)).values == dense);
      CHECK(conv_fwcs_reordered(in.x, full, in.spec, lanes_of(l)).values == dense);
    }
    const auto mask = testutil::random_mask(rng, in.spec, 0.5);
    const auto sparse = encode_fwcs(in.w, mask);
    const auto oracle = conv_dense(in.x, apply_mask_zeroing(in.w, mask), in.spec, 3).values;
    CHECK(conv_fwcs(in.x, sparse, in.spec, {}, 3).values == oracle);
    CHECK(conv_fwcs_reordered(in.x, sparse, in.spec, {}, 3).values == oracle);
  }
}

TEST_CASE("float operators agree bit for bit") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 30; ++t) {
    const auto s = testutil::random_spec(rng);
    const auto x = testutil::random_f(rng, TensorF::feature(s.input_h, s.input_w, s.channels));
    const auto w = testutil::random_f(rng, TensorF::filters(s.n_filters, s.kernel_h, s.kernel_w, s.channels));
    const auto mask = testutil::random_mask(rng, s, 0.6);
    const auto oracle = conv_dense(x, apply_mask_zeroing(w, mask), s).values;
    const auto f = encode_fwcs(w, mask);
    for (std::size_t l : {2u, 4u, 8u, 16u}) {
      CHECK(conv_fwcs(x, f, s, lanes_of(l)).values == oracle);
      CHECK(conv_fwcs_reordered(x, f, s, lanes_of(l)).values == oracle);
    }
    CHECK(conv_csr(x, encode_csr(w, WeightMask::from_filterlets(mask)), s).values == oracle);
  }
}

TEST_CASE("fully pruned layer gives zeros, plus bias when requantized") {
  std::mt19937_64 rng(6);
  const ConvLayerSpec s{2, 2, 2, 3, 1, 3, 3};
  const auto x = testutil::random_q(rng, TensorQ::feature(3, 3, 3));
  const auto w = testutil::random_q(rng, TensorQ::filters(2, 2, 2, 3));
  const auto none = encode_fwcs(w, FilterletMask::all(s, false));
  const auto y = conv_fwcs(x, none, s, {}).values;
  for (auto v : y.data()) CHECK(v == 0);
  CHECK(conv_fwcs_reordered(x, none, s, {}).values == y);
  const std::vector<std::int32_t> bias{10, -20};
  const auto q = requantize(y, bias, 0.5, {1.0f, 3}, false);
  CHECK(q.at(1, 1, 0) == 8);
  CHECK(q.at(0, 1, 1) == -7);
}

TEST_CASE("chunk counts follow the lane width") {
  // 8-weight filterlets at 4 lanes: 2 MAC chunks per filterlet per position.
  std::mt19937_64 rng(7);
  const ConvLayerSpec s{1, 1, 1, 8, 1, 3, 3};
  const auto x = testutil::random_q(rng, TensorQ::feature(3, 3, 8));
  const auto w = testutil::random_q(rng, TensorQ::filters(1, 1, 1, 8));
  const auto f = encode_fwcs(w, FilterletMask::all(s, true));
  const auto d = conv_fwcs(x, f, s, lanes_of(4)).stats;
  CHECK(d.macs == 2 * 9);
  CHECK(d.weight_loads == 2 * 9);
  CHECK(d.feature_loads == 2 * 9);
  const auto r = conv_fwcs_reordered(x, f, s, lanes_of(4)).stats;
  CHECK(r.macs == 2 * 9);
  CHECK(r.weight_loads == 2);
  CHECK(r.feature_loads == 2 * 9);

  // A tail chunk still costs one MAC: 10 weights at 4 lanes is 3 chunks.
  const ConvLayerSpec t{1, 1, 1, 10, 1, 1, 1};
  const auto ft = encode_fwcs(TensorQ::filters(1, 1, 1, 10, 1), FilterletMask::all(t, true));
  CHECK(conv_fwcs(TensorQ::feature(1, 1, 10, 2), ft, t, lanes_of(4)).stats.macs == 3);
  CHECK(conv_fwcs(TensorQ::feature(1, 1, 10, 2), ft, t, lanes_of(4)).values.at(0, 0, 0) == 20);
}

TEST_CASE("schedules: identical outputs, fewer loads when reordered") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 30; ++t) {
    const auto in = random_instance(rng);
    const auto mask = testutil::random_mask(rng, in.spec, 0.7);
    const auto f = encode_fwcs(in.w, mask);
    const auto d = conv_fwcs(in.x, f, in.spec, {});
    const auto r = conv_fwcs_reordered(in.x, f, in.spec, {});
    CHECK(d.values == r.values);
    CHECK(d.stats.macs == r.stats.macs);
    CHECK(r.stats.loads() <= d.stats.loads());
    if (f.retained() > 0 && in.spec.output_positions() >= 2) CHECK(r.stats.loads() < d.stats.loads());
  }
  SUBCASE("single filterlet, single position: same loop") {
    const ConvLayerSpec s{1, 1, 1, 4, 1, 1, 1};
    const auto x = testutil::random_q(rng, TensorQ::feature(1, 1, 4));
    const auto f = encode_fwcs(testutil::random_q(rng, TensorQ::filters(1, 1, 1, 4)), FilterletMask::all(s, true));
    const auto d = conv_fwcs(x, f, s, {});
    const auto r = conv_fwcs_reordered(x, f, s, {});
    CHECK(d.values == r.values);
    CHECK(d.stats.macs == r.stats.macs);
    CHECK(d.stats.loads() == r.stats.loads());
  }
}

TEST_CASE("conv_csr") {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 30; ++t) {
    const auto in = random_instance(rng);
    const auto dense = conv_dense(in.x, in.w, in.spec).values;
    CHECK(conv_csr(in.x, encode_csr(in.w, WeightMask::all(in.spec, true)), in.spec).values == dense);
    const auto empty = conv_csr(in.x, encode_csr(in.w, WeightMask::all(in.spec, false)), in.spec).values;
    for (auto v : empty.data()) CHECK(v == 0);
    const auto m = testutil::random_weight_mask(rng, in.spec, 0.3);
    auto masked = in.w;
    for (std::size_t i = 0; i < masked.size(); ++i)
      if (!m.kept[i]) masked.data()[i] = 0;
    CHECK(conv_csr(in.x, encode_csr(in.w, m), in.spec).values == brute_conv(in.x, masked, in.spec));
  }
}

TEST_CASE("conv_structured") {
  std::mt19937_64 rng(10);
  const ConvLayerSpec s{4, 2, 2, 3, 1, 4, 4};
  const auto x = testutil::random_q(rng, TensorQ::feature(4, 4, 3));
  const auto w = testutil::random_q(rng, TensorQ::filters(4, 2, 2, 3));
  const auto dense = conv_dense(x, w, s).values;
  const std::vector<std::uint8_t> all{1, 1, 1, 1}, one{0, 0, 1, 0}, half{1, 0, 0, 1}, none{0, 0, 0, 0};
  CHECK(conv_structured(x, w, all, s).values == dense);
  const auto y1 = conv_structured(x, w, one, s).values;
  CHECK(y1.channels() == 1);
  const auto y2 = conv_structured(x, w, half, s).values;
  CHECK(y2.channels() == 2);
  for (std::size_t h = 0; h < 3; ++h)
    for (std::size_t v = 0; v < 3; ++v) {
      CHECK(y1.at(h, v, 0) == dense.at(h, v, 2));
      CHECK(y2.at(h, v, 0) == dense.at(h, v, 0));
      CHECK(y2.at(h, v, 1) == dense.at(h, v, 3));
    }
  CHECK_THROWS_AS(conv_structured(x, w, none, s), DataError);
}

TEST_CASE("int32 accumulation saturates") {
  const ConvLayerSpec s{1, 1, 1, 16, 1, 1, 1};
  const auto x = TensorQ::feature(1, 1, 16, -128);
  const auto w = TensorQ::filters(1, 1, 1, 16, -128);
  // 16 * 16384 fits; a zero point of -2^27 pushes each product past the range.
  const auto ok = conv_dense(x, w, s);
  CHECK(ok.values.at(0, 0, 0) == 16 * 16384);
  CHECK_FALSE(ok.stats.saturated);
  const auto big = conv_fwcs(x, encode_fwcs(w, FilterletMask::all(s, true)), s, {}, -(1 << 27));
  CHECK(big.stats.saturated);
  CHECK(big.values.at(0, 0, 0) == std::numeric_limits<std::int32_t>::min());
}

TEST_CASE("requantize") {
  auto acc = TensorAcc::feature(1, 1, 3);
  acc.data()[0] = 100;
  acc.data()[1] = -100;
  acc.data()[2] = 100000;
  const std::vector<std::int32_t> bias{0, 0, 0};
  const auto y = requantize(acc, bias, 0.1, {1.0f, -5}, false);
  CHECK(y.data()[0] == 5);
  CHECK(y.data()[1] == -15);
  CHECK(y.data()[2] == 127);
  const auto r = requantize(acc, bias, 0.1, {1.0f, -5}, true);
  CHECK(r.data()[1] == -5);
  const std::vector<std::int32_t> short_bias{1};
  CHECK_THROWS_AS(requantize(acc, short_bias, 0.1, {1.0f, 0}, false), DataError);
}

TEST_CASE("lane config") {
  CHECK_THROWS_AS(lanes_of(3).validate(), ConfigError);
  CHECK_THROWS_AS(lanes_of(32).validate(), ConfigError);
  LaneConfig few;
  few.register_count = 2;
  CHECK_THROWS_AS(few.validate(), ConfigError);
}
