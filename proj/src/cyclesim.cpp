#include "dtmm/cyclesim.hpp"

#include <algorithm>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace dtmm {

void MachineConfig::validate() const {
  if (vec_instr_cycles < 1 || scalar_cycles < 1) throw ConfigError("instruction cycles must be >= 1");
  if (register_count < 3) throw ConfigError("at least three vector registers are required");
  if (lanes != 2 && lanes != 4 && lanes != 8 && lanes != 16)
    throw ConfigError("lane count must be 2, 4, 8 or 16");
}

Instruction Instruction::load(Reg dst, Region region, std::uint32_t offset, std::uint32_t length,
                              Reg address) {
  Instruction in;
  in.op = Op::kLoad;
  in.dst = dst;
  in.src_a = address;
  in.region = region;
  in.offset = offset;
  in.length = length;
  return in;
}

Instruction Instruction::scalar_load(Reg dst, Region region, std::uint32_t offset, Reg address) {
  Instruction in = load(dst, region, offset, 1, address);
  in.vector = false;
  return in;
}

Instruction Instruction::mac(std::int64_t acc, Reg a, Reg b) {
  Instruction in;
  in.op = Op::kMac;
  in.acc = acc;
  in.src_a = a;
  in.src_b = b;
  return in;
}

Instruction Instruction::scalar_mac(std::int64_t acc, Reg a, Reg b) {
  Instruction in = mac(acc, a, b);
  in.vector = false;
  return in;
}

Instruction Instruction::store_acc(std::int64_t acc) {
  Instruction in;
  in.op = Op::kStore;
  in.vector = false;
  in.acc = acc;
  in.region = Region::kOutput;
  in.offset = static_cast<std::uint32_t>(acc);
  in.length = 1;
  return in;
}

Instruction Instruction::store_vector(Reg src, Region region, std::uint32_t offset,
                                      std::uint32_t length) {
  Instruction in;
  in.op = Op::kStore;
  in.src_a = src;
  in.region = region;
  in.offset = offset;
  in.length = length;
  return in;
}

namespace {

std::string reg_name(const Reg& r) {
  if (r.file == RegFile::kVector) return "q" + std::to_string(r.index);
  if (r.file == RegFile::kScalar) return "r" + std::to_string(r.index);
  return "-";
}

const char* region_name(Region r) {
  switch (r) {
    case Region::kInput: return "I";
    case Region::kPatch: return "buf";
    case Region::kWeights: return "W";
    case Region::kIndex: return "cptr";
    case Region::kOutput: return "O";
    case Region::kNone: break;
  }
  return "?";
}

std::string span_text(const Instruction& in) {
  std::ostringstream os;
  os << region_name(in.region) << '[' << in.offset;
  if (in.length > 1) os << ':' << (in.offset + in.length);
  os << ']';
  return os.str();
}

// Dependency state of one register.
struct RegState {
  bool written = false;
  bool producer_is_vector_load = false;
  std::uint64_t producer_start = 0;
  std::uint64_t producer_end = 0;
  std::uint64_t last_read_end = 0;
};

std::uint64_t reg_key(const Reg& r) {
  return (static_cast<std::uint64_t>(r.file) << 32) | static_cast<std::uint32_t>(r.index);
}

}  // namespace

std::string format_instruction(const Instruction& in) {
  std::ostringstream os;
  switch (in.op) {
    case Op::kLoad:
      os << (in.vector ? "LD " : "LDS ") << reg_name(in.dst) << ' ' << span_text(in);
      break;
    case Op::kMac:
      os << (in.vector ? "MAC a" : "MACS a") << in.acc << ' ' << reg_name(in.src_a) << ' '
         << reg_name(in.src_b);
      break;
    case Op::kStore:
      if (in.acc >= 0)
        os << "ST a" << in.acc;
      else
        os << "ST " << reg_name(in.src_a) << ' ' << span_text(in);
      break;
  }
  return os.str();
}

void dump_stream(std::ostream& os, const InstructionStream& stream) {
  for (const auto& in : stream) os << format_instruction(in) << '\n';
}

CycleTrace simulate(const InstructionStream& stream, const MachineConfig& cfg, bool record_cycles) {
  cfg.validate();
  CycleTrace trace;
  trace.start.resize(stream.size());

  std::unordered_map<std::uint64_t, RegState> regs;
  std::unordered_map<std::int64_t, std::uint64_t> acc_ready;
  std::uint64_t mem_free = 0;
  std::uint64_t alu_free = 0;
  std::uint64_t first_mac = UINT64_MAX;
  std::uint64_t last_mac_end = 0;

  auto check_reg = [&](const Reg& r) {
    if (r.file == RegFile::kVector &&
        (r.index < 0 || static_cast<std::size_t>(r.index) >= cfg.register_count))
      throw ConfigError("vector register q" + std::to_string(r.index) + " out of range");
    if (r.file == RegFile::kScalar && r.index < 0) throw ConfigError("negative scalar register");
  };

  for (std::size_t i = 0; i < stream.size(); ++i) {
    const Instruction& in = stream[i];
    const std::uint64_t dur = in.vector ? cfg.vec_instr_cycles : cfg.scalar_cycles;
    std::uint64_t start = in.on_alu() ? alu_free : mem_free;

    for (const Reg* src : {&in.src_a, &in.src_b}) {
      if (!src->valid()) continue;
      check_reg(*src);
      auto it = regs.find(reg_key(*src));
      if (it == regs.end() || !it->second.written)
        throw MalformedStreamError("instruction " + std::to_string(i) + " (" +
                                   format_instruction(in) + ") reads " + reg_name(*src) +
                                   " before any write");
      const RegState& st = it->second;
      const bool overlap = cfg.overlap_enabled && in.op == Op::kMac && in.vector &&
                           st.producer_is_vector_load;
      start = std::max(start, overlap ? st.producer_start + 1 : st.producer_end);
    }
    if (in.dst.valid()) {
      check_reg(in.dst);
      auto it = regs.find(reg_key(in.dst));
      if (it != regs.end()) start = std::max({start, it->second.last_read_end, it->second.producer_end});
    }
    if (in.acc >= 0) {
      auto it = acc_ready.find(in.acc);
      if (it != acc_ready.end()) start = std::max(start, it->second);
    }

    const std::uint64_t end = start + dur;
    trace.start[i] = start;
    for (const Reg* src : {&in.src_a, &in.src_b}) {
      if (!src->valid()) continue;
      auto& st = regs[reg_key(*src)];
      st.last_read_end = std::max(st.last_read_end, end);
    }
    if (in.dst.valid()) {
      auto& st = regs[reg_key(in.dst)];
      st.written = true;
      st.producer_is_vector_load = in.op == Op::kLoad && in.vector;
      st.producer_start = start;
      st.producer_end = end;
    }
    if (in.on_alu()) {
      alu_free = end;
      trace.alu_busy += dur;
      acc_ready[in.acc] = end;
      first_mac = std::min(first_mac, start);
      last_mac_end = std::max(last_mac_end, end);
    } else {
      mem_free = end;
      trace.mem_busy += dur;
    }
    trace.total_cycles = std::max(trace.total_cycles, end);
  }

  if (first_mac != UINT64_MAX) trace.alu_idle = (last_mac_end - first_mac) - trace.alu_busy;

  if (record_cycles) {
    trace.records.resize(trace.total_cycles);
    for (std::uint64_t c = 0; c < trace.total_cycles; ++c) trace.records[c].cycle = c + 1;
    for (std::size_t i = 0; i < stream.size(); ++i) {
      const std::uint64_t dur = stream[i].vector ? cfg.vec_instr_cycles : cfg.scalar_cycles;
      for (std::uint64_t c = trace.start[i]; c < trace.start[i] + dur; ++c) {
        auto& rec = trace.records[c];
        (stream[i].on_alu() ? rec.alu : rec.mem) = static_cast<std::int64_t>(i);
      }
    }
  }
  return trace;
}

void dump_trace(std::ostream& os, const InstructionStream& stream, const CycleTrace& trace) {
  os << "cycle,mem,alu\n";
  for (const auto& rec : trace.records) {
    os << rec.cycle << ',' << (rec.mem < 0 ? "idle" : format_instruction(stream[rec.mem])) << ','
       << (rec.alu < 0 ? "idle" : format_instruction(stream[rec.alu])) << '\n';
  }
}

InstructionStream two_mac_default_stream() {
  using I = Instruction;
  return {
      I::load(Reg::q(0), Region::kPatch, 0, 16),
      I::load(Reg::q(1), Region::kWeights, 0, 16),
      I::mac(0, Reg::q(0), Reg::q(1)),
      I::load(Reg::q(2), Region::kPatch, 16, 16),
      I::load(Reg::q(0), Region::kWeights, 16, 16),
      I::mac(0, Reg::q(2), Reg::q(0)),
  };
}

InstructionStream two_mac_reordered_stream() {
  using I = Instruction;
  return {
      I::load(Reg::q(0), Region::kWeights, 0, 16),
      I::load(Reg::q(1), Region::kInput, 0, 16),
      I::mac(0, Reg::q(0), Reg::q(1)),
      I::load(Reg::q(2), Region::kInput, 16, 16),
      I::mac(1, Reg::q(0), Reg::q(2)),
  };
}

}  // namespace dtmm
