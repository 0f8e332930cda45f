// lowering.hpp: turns a compressed layer plus a compute schedule into the
// abstract instruction stream the cycle simulator consumes.
#pragma once

#include <cstdint>

#include "dtmm/conv.hpp"
#include "dtmm/cyclesim.hpp"
#include "dtmm/fwcs.hpp"

namespace dtmm {

struct LoweringOptions {
  bool prefetch = true;     // patch copy per output position (default order only)
  bool index_loads = true;  // scalar c_ptr read per filterlet visit
  bool stores = true;       // one accumulator store per output value of a non-empty filter

  // Only the vector loads and MACs of the inner kernel.
  static LoweringOptions kernel_only() { return {false, false, false}; }
};

// Default order: per output position, per filter, per retained filterlet,
// per lane chunk: LD feature, LD weight, MAC (three rotating registers).
// Reordered: per retained filterlet, pin up to register_count - 2 weight
// chunks, then per output position one feature LD (alternating two
// registers) and one MAC per chunk.
template <typename T>
InstructionStream lower_schedule(const FwcsLayer<T>& layer, const ConvLayerSpec& spec,
                                 ComputeSchedule schedule, const MachineConfig& cfg,
                                 const LoweringOptions& options = {});

// Scalar gather per retained weight: LDS index, LDS feature, LDS weight, MACS.
template <typename T>
InstructionStream lower_csr(const CsrLayer<T>& layer, const ConvLayerSpec& spec,
                            const MachineConfig& cfg, const LoweringOptions& options = {});

struct StreamCounts {
  std::uint64_t vector_loads = 0;
  std::uint64_t scalar_loads = 0;
  std::uint64_t vector_stores = 0;
  std::uint64_t acc_stores = 0;
  std::uint64_t macs = 0;
};
StreamCounts count_stream(const InstructionStream& stream);

// Simulated cycles of the layer plus post_cycles per output value.
template <typename T>
std::uint64_t layer_cycles(const FwcsLayer<T>& layer, const ConvLayerSpec& spec,
                           ComputeSchedule schedule, const MachineConfig& cfg);
template <typename T>
std::uint64_t csr_layer_cycles(const CsrLayer<T>& layer, const ConvLayerSpec& spec,
                               const MachineConfig& cfg);

}  // namespace dtmm
