// cyclesim.hpp: cycle model of a core with one memory unit and one ALU.
//
// Issue rules:
//   * each unit issues its instructions in program order, one at a time; a
//     vector instruction occupies its unit for vec_instr_cycles cycles, a
//     scalar one for scalar_cycles;
//   * a vector MAC may start one cycle after the vector load producing its
//     operand starts (beat overlap); any other consumer waits for the
//     producer to finish, as does a MAC when overlap is disabled;
//   * an instruction writing a register waits until every earlier reader of
//     that register has finished (WAR) and the previous writer is done;
//   * MACs on one accumulator are serialized; a store of an accumulator waits
//     for its last MAC.
// With these rules the two-MAC streams of the default and reordered
// schedules take 9 and 7 cycles.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dtmm/error.hpp"

namespace dtmm {

struct MachineConfig {
  std::size_t lanes = 16;
  std::size_t vec_instr_cycles = 2;
  std::size_t scalar_cycles = 1;
  bool overlap_enabled = true;
  std::size_t register_count = 8;
  // Bias addition and requantization per output value.
  std::size_t post_cycles = 4;

  void validate() const;
};

enum class Op : std::uint8_t {
  kLoad,   // memory unit
  kStore,  // memory unit
  kMac,    // ALU
};

enum class RegFile : std::uint8_t { kNone, kVector, kScalar };

struct Reg {
  RegFile file = RegFile::kNone;
  std::int32_t index = 0;

  static Reg q(std::int32_t i) { return {RegFile::kVector, i}; }
  static Reg r(std::int32_t i) { return {RegFile::kScalar, i}; }
  bool valid() const { return file != RegFile::kNone; }
  friend bool operator==(const Reg&, const Reg&) = default;
};

// Where a load or store points, kept symbolic for the text dump.
enum class Region : std::uint8_t { kNone, kInput, kPatch, kWeights, kIndex, kOutput };

struct Instruction {
  Op op = Op::kLoad;
  bool vector = true;
  Reg dst;                 // loads
  Reg src_a;               // MAC operand, store source or load address
  Reg src_b;               // MAC operand
  std::int64_t acc = -1;   // accumulator id for MAC / accumulator store
  Region region = Region::kNone;
  std::uint32_t offset = 0;
  std::uint32_t length = 0;

  static Instruction load(Reg dst, Region region, std::uint32_t offset, std::uint32_t length,
                          Reg address = {});
  static Instruction scalar_load(Reg dst, Region region, std::uint32_t offset, Reg address = {});
  static Instruction mac(std::int64_t acc, Reg a, Reg b);
  static Instruction scalar_mac(std::int64_t acc, Reg a, Reg b);
  static Instruction store_acc(std::int64_t acc);
  static Instruction store_vector(Reg src, Region region, std::uint32_t offset,
                                  std::uint32_t length);

  bool on_alu() const { return op == Op::kMac; }
};

using InstructionStream = std::vector<Instruction>;

// `LD q0 I[3:7]`, `MAC a5 q0 q1`, `ST a5`, one per line.
std::string format_instruction(const Instruction& in);
void dump_stream(std::ostream& os, const InstructionStream& stream);

struct CycleRecord {
  std::uint64_t cycle = 0;  // 1-based
  std::int64_t mem = -1;    // index into the stream, -1 when idle
  std::int64_t alu = -1;
};

struct CycleTrace {
  std::uint64_t total_cycles = 0;
  std::vector<std::uint64_t> start;  // per instruction, 0-based start cycle
  std::vector<CycleRecord> records;  // filled only when requested
  std::uint64_t mem_busy = 0;
  std::uint64_t alu_busy = 0;
  // Cycles between the first MAC start and the last MAC end with the ALU idle.
  std::uint64_t alu_idle = 0;
};

// Throws ConfigError for a vector register >= register_count and
// MalformedStreamError when an operand register was never written.
CycleTrace simulate(const InstructionStream& stream, const MachineConfig& cfg,
                    bool record_cycles = true);

// Writes `cycle,mem,alu` lines (instruction text or `idle`).
void dump_trace(std::ostream& os, const InstructionStream& stream, const CycleTrace& trace);

// The two-MAC snippets: default order reloads both operands per MAC over
// three rotating registers; the reordered one keeps the weights in q0 and
// alternates feature loads between q1 and q2.
InstructionStream two_mac_default_stream();
InstructionStream two_mac_reordered_stream();

}  // namespace dtmm
