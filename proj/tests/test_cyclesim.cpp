#include <sstream>

#include "doctest.h"
#include "dtmm/lowering.hpp"
#include "util.hpp"

using namespace dtmm;
using I = Instruction;

namespace {

MachineConfig with_lanes(std::size_t l) {
  MachineConfig c;
  c.lanes = l;
  return c;
}

FwcsLayer<std::int8_t> full_layer(const ConvLayerSpec& s) {
  return encode_fwcs(TensorQ::filters(s.n_filters, s.kernel_h, s.kernel_w, s.channels, 1),
                     FilterletMask::all(s, true));
}

}  // namespace

TEST_CASE("single vector load takes two cycles") {
  const InstructionStream s{I::load(Reg::q(0), Region::kInput, 0, 16)};
  CHECK(simulate(s, {}).total_cycles == 2);
  const InstructionStream scalar{I::scalar_load(Reg::r(0), Region::kIndex, 0)};
  CHECK(simulate(scalar, {}).total_cycles == 1);
  CHECK(simulate({}, {}).total_cycles == 0);
}

TEST_CASE("two-MAC streams") {
  const auto d = simulate(two_mac_default_stream(), {});
  CHECK(d.total_cycles == 9);
  REQUIRE(d.records.size() == 9);
  CHECK(d.records[5].alu < 0);  // cycle 6
  CHECK(d.records[6].alu < 0);  // cycle 7
  CHECK(d.records[7].alu >= 0);
  CHECK(d.alu_idle == 2);

  const auto r = simulate(two_mac_reordered_stream(), {});
  CHECK(r.total_cycles == 7);
  CHECK(r.alu_idle == 0);

  std::ostringstream os;
  dump_trace(os, two_mac_default_stream(), d);
  CHECK(os.str().rfind("cycle,mem,alu\n1,LD q0", 0) == 0);
}

TEST_CASE("overlap disabled lengthens the pipeline") {
  MachineConfig c;
  c.overlap_enabled = false;
  CHECK(simulate(two_mac_default_stream(), c).total_cycles > 9);
  CHECK(simulate(two_mac_reordered_stream(), c).total_cycles > 7);
}

TEST_CASE("hazards") {
  SUBCASE("write after read waits for the reader") {
    const InstructionStream s{
        I::load(Reg::q(0), Region::kInput, 0, 16),  I::load(Reg::q(1), Region::kWeights, 0, 16),
        I::mac(0, Reg::q(0), Reg::q(1)),            I::load(Reg::q(0), Region::kInput, 16, 16),
    };
    const auto t = simulate(s, {});
    CHECK(t.start[2] == 3);
    CHECK(t.start[3] >= t.start[2] + 2);
  }
  SUBCASE("accumulator chain is serialized") {
    const InstructionStream s{
        I::load(Reg::q(0), Region::kInput, 0, 16), I::load(Reg::q(1), Region::kWeights, 0, 16),
        I::mac(0, Reg::q(0), Reg::q(1)),           I::mac(0, Reg::q(0), Reg::q(1)),
        I::store_acc(0),
    };
    const auto t = simulate(s, {});
    CHECK(t.start[3] == t.start[2] + 2);
    CHECK(t.start[4] == t.start[3] + 2);
    CHECK(t.total_cycles == t.start[4] + 1);
  }
  SUBCASE("scalar address feeds the dependent load") {
    const InstructionStream s{I::scalar_load(Reg::r(0), Region::kIndex, 0),
                              I::load(Reg::q(0), Region::kInput, 0, 16, Reg::r(0))};
    CHECK(simulate(s, {}).start[1] == 1);
  }
}

TEST_CASE("malformed streams") {
  const InstructionStream unread{I::mac(0, Reg::q(0), Reg::q(1))};
  CHECK_THROWS_AS(simulate(unread, {}), MalformedStreamError);
  const InstructionStream bad_reg{I::load(Reg::q(8), Region::kInput, 0, 16)};
  CHECK_THROWS_AS(simulate(bad_reg, {}), ConfigError);
  MachineConfig c;
  c.lanes = 5;
  CHECK_THROWS_AS(simulate({}, c), ConfigError);
}

TEST_CASE("instruction text") {
  CHECK(format_instruction(I::load(Reg::q(0), Region::kPatch, 0, 16)) == "LD q0 buf[0:16]");
  CHECK(format_instruction(I::scalar_load(Reg::r(0), Region::kIndex, 2)) == "LDS r0 cptr[2]");
  CHECK(format_instruction(I::mac(0, Reg::q(0), Reg::q(1))) == "MAC a0 q0 q1");
  CHECK(format_instruction(I::store_acc(3)) == "ST a3");
}

TEST_CASE("lowering shapes") {
  SUBCASE("minimal kernel stream") {
    const ConvLayerSpec s{1, 1, 1, 16, 1, 1, 1};
    const auto stream = lower_schedule(full_layer(s), s, ComputeSchedule::kDefaultOrder, {},
                                       LoweringOptions::kernel_only());
    REQUIRE(stream.size() == 3);
    CHECK(stream[0].op == Op::kLoad);
    CHECK(stream[1].op == Op::kLoad);
    CHECK(stream[2].op == Op::kMac);
  }
  SUBCASE("one filterlet, two positions, reordered") {
    const ConvLayerSpec s{1, 1, 1, 16, 1, 1, 2};
    const auto c = count_stream(lower_schedule(full_layer(s), s, ComputeSchedule::kReordered, {},
                                               LoweringOptions::kernel_only()));
    CHECK(c.vector_loads == 3);  // weights once, features twice
    CHECK(c.macs == 2);
    const auto d = count_stream(lower_schedule(full_layer(s), s, ComputeSchedule::kDefaultOrder, {},
                                               LoweringOptions::kernel_only()));
    CHECK(d.vector_loads == 4);
    CHECK(d.macs == 2);
  }
  SUBCASE("8-weight filterlets at 4 lanes: two chunks per position") {
    const ConvLayerSpec s{1, 1, 1, 8, 1, 2, 2};
    for (auto sched : {ComputeSchedule::kDefaultOrder, ComputeSchedule::kReordered})
      CHECK(count_stream(lower_schedule(full_layer(s), s, sched, with_lanes(4))).macs == 2 * 4);
  }
  SUBCASE("stream counts match operator statistics") {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 30; ++t) {
      const auto s = testutil::random_spec(rng);
      const auto w = testutil::random_q(rng, TensorQ::filters(s.n_filters, s.kernel_h, s.kernel_w, s.channels));
      const auto x = testutil::random_q(rng, TensorQ::feature(s.input_h, s.input_w, s.channels));
      const auto f = encode_fwcs(w, testutil::random_mask(rng, s, 0.6));
      LaneConfig lc;
      lc.lanes = 4;
      const auto d = conv_fwcs(x, f, s, lc).stats;
      const auto dc = count_stream(lower_schedule(f, s, ComputeSchedule::kDefaultOrder, with_lanes(4),
                                                  LoweringOptions::kernel_only()));
      CHECK(dc.macs == d.macs);
      CHECK(dc.vector_loads == d.loads());
      const auto r = conv_fwcs_reordered(x, f, s, lc).stats;
      const auto rc = count_stream(lower_schedule(f, s, ComputeSchedule::kReordered, with_lanes(4)));
      CHECK(rc.macs == r.macs);
      CHECK(rc.vector_loads == r.loads());
      CHECK(rc.scalar_loads == r.index_reads);
    }
  }
}

TEST_CASE("layer cycles") {
  SUBCASE("empty layer costs post-processing only") {
    const ConvLayerSpec s{4, 3, 3, 8, 1, 6, 6};
    const auto none = encode_fwcs(TensorQ::filters(4, 3, 3, 8), FilterletMask::all(s, false));
    const MachineConfig c;
    for (auto sched : {ComputeSchedule::kDefaultOrder, ComputeSchedule::kReordered})
      CHECK(layer_cycles(none, s, sched, c) == c.post_cycles * 4 * 16);
    const auto csr = encode_csr(TensorQ::filters(4, 3, 3, 8), WeightMask::all(s, false));
    CHECK(csr_layer_cycles(csr, s, c) == c.post_cycles * 4 * 16);
  }
  SUBCASE("reordered never slower") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 100; ++t) {
      const auto s = testutil::random_spec(rng, 8, 24);
      const auto f = encode_fwcs(TensorQ::filters(s.n_filters, s.kernel_h, s.kernel_w, s.channels, 1),
                                 testutil::random_mask(rng, s, 0.5));
      const auto d = layer_cycles(f, s, ComputeSchedule::kDefaultOrder, {});
      const auto r = layer_cycles(f, s, ComputeSchedule::kReordered, {});
      CHECK(r <= d);
      if (f.retained() > 0 && s.output_positions() >= 2) CHECK(r < d);
    }
  }
  SUBCASE("halving lanes costs cycles when C > 8") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 30; ++t) {
      ConvLayerSpec s = testutil::random_spec(rng, 6, 8);
      s.channels = testutil::pick(rng, 9, 48);
      const auto f = encode_fwcs(TensorQ::filters(s.n_filters, s.kernel_h, s.kernel_w, s.channels, 1),
                                 testutil::random_mask(rng, s, 0.7));
      if (f.retained() == 0) continue;
      for (auto sched : {ComputeSchedule::kDefaultOrder, ComputeSchedule::kReordered})
        CHECK(layer_cycles(f, s, sched, with_lanes(8)) > layer_cycles(f, s, sched, with_lanes(16)));
    }
  }
  SUBCASE("CSR is slower than FWCS at the same retained weights") {
    const ConvLayerSpec s{8, 3, 3, 16, 1, 6, 6};
    std::mt19937_64 rng(4);
    const auto m = testutil::random_mask(rng, s, 0.3);
    const auto w = TensorQ::filters(8, 3, 3, 16, 1);
    CHECK(layer_cycles(encode_fwcs(w, m), s, ComputeSchedule::kReordered, {}) <
          csr_layer_cycles(encode_csr(w, WeightMask::from_filterlets(m)), s, {}));
  }
}
