// pipeline.hpp: end-to-end composition: model execution, plan-and-pack,
// per-format comparison and synthetic model generation.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dtmm/bundle.hpp"
#include "dtmm/conv.hpp"
#include "dtmm/cyclesim.hpp"
#include "dtmm/lowering.hpp"
#include "dtmm/scheduler.hpp"

namespace dtmm {

struct LayerRunStats {
  std::string name;
  LayerFormat format = LayerFormat::kDense;
  ExecStats stats;
};

struct RunReport {
  std::vector<LayerRunStats> layers;
  bool saturated = false;
};

// Runs an int8 sequential model. Dense layers use conv_dense, FWCS layers
// the chosen schedule, CSR layers conv_csr; each layer is followed by bias,
// optional ReLU and requantization.
TensorQ run_model(const ModelBundle& model, const TensorQ& input, ComputeSchedule schedule,
                  const LaneConfig& lanes, RunReport* report = nullptr);

// Importance from dequantized weights and gradients; m follows the dtype.
ScheduleProblem make_problem(const ModelBundle& model, const GradientBundle& grads,
                             const Budget& budget, const LatencyParams& latency, unsigned m0 = 16);

// Zeroes and FWCS-encodes every layer under `masks`.
ModelBundle pack_fwcs(const ModelBundle& model, std::span<const FilterletMask> masks);

struct PlanOutcome {
  ScheduleResult result;
  std::vector<FilterletMask> masks;
  std::optional<ModelBundle> bundle;  // absent when infeasible
};

PlanOutcome plan_and_pack(const ScheduleProblem& problem, const ModelBundle& model,
                          const AnnealOptions& options);

// Bytes of every FWCS payload minus the fixed block headers.
std::size_t fwcs_payload_bytes(const ModelBundle& bundle);

// Latency constants fitted on simulated layers: `count` random layer
// configurations with random pruning fractions, reordered schedule.
std::vector<LatencySample> simulate_latency_samples(const MachineConfig& cfg, std::size_t count,
                                                    std::uint64_t seed);
LatencyParams calibrate_latency(const MachineConfig& cfg, std::uint64_t seed);

// Per-layer simulated cycles of a bundle.
struct LayerCycles {
  std::string name;
  LayerFormat format = LayerFormat::kDense;
  std::uint64_t cycles = 0;
  StreamCounts counts;
};
std::vector<LayerCycles> bench_bundle(const ModelBundle& model, ComputeSchedule schedule,
                                      const MachineConfig& cfg);

// One layer at equal pruned-weight ratio under each pruning method.
struct CompareRow {
  std::string name;
  std::size_t channels = 0;
  std::size_t retained_weights = 0;
  std::size_t dense_bytes = 0;
  std::size_t structured_bytes = 0;
  std::size_t csr_bytes = 0;
  std::size_t fwcs_bytes = 0;
  std::size_t csr_index_entries = 0;   // c_ptr entries
  std::size_t fwcs_index_entries = 0;  // c_ptr entries
  std::size_t csr_index_bytes = 0;
  std::size_t fwcs_index_bytes = 0;
  std::uint64_t dense_cycles = 0;
  std::uint64_t structured_cycles = 0;
  std::uint64_t csr_cycles = 0;
  std::uint64_t fwcs_cycles = 0;
};

// FWCS prunes the lowest-scoring filterlets; CSR prunes individual weights
// by |g * w| down to the same retained count; structured removes whole
// filters by summed filterlet score. A format with nothing pruned is stored
// dense.
std::vector<CompareRow> compare_formats(const ModelBundle& model, const GradientBundle& grads,
                                        double ratio, const MachineConfig& cfg, unsigned m0 = 16);

// Synthetic int8 sequential model: random weights, calibrated
// requantization, ReLU between layers.
struct ToyModel {
  ModelBundle model;
  ModelBundle grads;
  TensorQ input;
};
ToyModel make_toy_model(const std::vector<ConvLayerSpec>& specs, std::uint64_t seed,
                        std::size_t grad_samples = 4);
// 3 layers on a 12x12x8 input: 8, 16 and 8 filters, 3x3 kernels.
std::vector<ConvLayerSpec> default_toy_specs();

}  // namespace dtmm
