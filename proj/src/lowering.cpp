#include "dtmm/lowering.hpp"

#include <algorithm>

namespace dtmm {

namespace {

std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

// Input offset of filter-local element `k` for output position (oy, ox).
std::size_t input_offset(const ConvLayerSpec& spec, std::size_t oy, std::size_t ox, std::size_t k) {
  const std::size_t c = k % spec.channels;
  const std::size_t hw = k / spec.channels;
  const std::size_t y = oy * spec.stride + hw / spec.kernel_w;
  const std::size_t x = ox * spec.stride + hw % spec.kernel_w;
  return (y * spec.input_w + x) * spec.channels + c;
}

template <typename T>
InstructionStream lower_default(const FwcsLayer<T>& layer, const ConvLayerSpec& spec,
                                const MachineConfig& cfg, const LoweringOptions& opt) {
  using I = Instruction;
  InstructionStream out;
  const std::size_t l = cfg.lanes;
  const std::size_t n_out = spec.n_filters;
  const std::size_t len = spec.filter_size();
  const std::int32_t pf_base = cfg.register_count >= 5 ? 3 : 0;
  int operand = 0;
  int pf = 0;
  int idx_reg = 0;

  for (std::size_t oy = 0; oy < spec.out_h(); ++oy) {
    for (std::size_t ox = 0; ox < spec.out_w(); ++ox) {
      const std::size_t pos = oy * spec.out_w() + ox;
      if (opt.prefetch && layer.retained() > 0) {
        for (std::size_t k = 0; k < len; k += l) {
          const Reg r = Reg::q(pf_base + pf);
          pf ^= 1;
          const auto n = u32(std::min(l, len - k));
          out.push_back(I::load(r, Region::kInput, u32(input_offset(spec, oy, ox, k)), n));
          out.push_back(I::store_vector(r, Region::kPatch, u32(k), n));
        }
      }
      std::size_t i = 0;
      for (std::size_t c = 0; c < n_out; ++c) {
        const std::int64_t acc = static_cast<std::int64_t>(pos * n_out + c);
        for (std::size_t j = layer.f_idx[c]; j < layer.f_idx[c + 1]; ++j) {
          Reg address;
          if (opt.index_loads) {
            address = Reg::r(idx_reg);
            idx_reg ^= 1;
            out.push_back(I::scalar_load(address, Region::kIndex, u32(j)));
          }
          const std::size_t end = layer.c_ptr[j] + layer.size;
          for (std::size_t k = layer.c_ptr[j]; k < end; k += l) {
            const auto n = u32(std::min(l, end - k));
            const Reg feature = Reg::q(operand);
            operand = (operand + 1) % 3;
            const Reg weight = Reg::q(operand);
            operand = (operand + 1) % 3;
            out.push_back(I::load(feature, opt.prefetch ? Region::kPatch : Region::kInput,
                                  u32(opt.prefetch ? k : input_offset(spec, oy, ox, k)), n, address));
            out.push_back(I::load(weight, Region::kWeights, u32(i), n));
            out.push_back(I::mac(acc, feature, weight));
            i += n;
          }
        }
        if (opt.stores && layer.f_idx[c + 1] > layer.f_idx[c]) out.push_back(I::store_acc(acc));
      }
    }
  }
  return out;
}

template <typename T>
InstructionStream lower_reordered(const FwcsLayer<T>& layer, const ConvLayerSpec& spec,
                                  const MachineConfig& cfg, const LoweringOptions& opt) {
  using I = Instruction;
  InstructionStream out;
  const std::size_t l = cfg.lanes;
  const std::size_t n_out = spec.n_filters;
  const std::size_t pinned = cfg.register_count - 2;
  const std::size_t chunks = (layer.size + l - 1) / l;
  const std::size_t positions = spec.output_positions();
  int idx_reg = 0;
  int alt = 0;

  for (std::size_t c = 0; c < n_out; ++c) {
    for (std::size_t j = layer.f_idx[c]; j < layer.f_idx[c + 1]; ++j) {
      Reg address;
      if (opt.index_loads) {
        address = Reg::r(idx_reg);
        idx_reg ^= 1;
        out.push_back(I::scalar_load(address, Region::kIndex, u32(j)));
      }
      for (std::size_t g = 0; g < chunks; g += pinned) {
        const std::size_t g_end = std::min(chunks, g + pinned);
        const auto held = static_cast<std::int32_t>(g_end - g);
        for (std::size_t k = g; k < g_end; ++k)
          out.push_back(I::load(Reg::q(static_cast<std::int32_t>(k - g)), Region::kWeights,
                                u32(j * layer.size + k * l), u32(std::min(l, layer.size - k * l))));
        for (std::size_t oy = 0; oy < spec.out_h(); ++oy) {
          for (std::size_t ox = 0; ox < spec.out_w(); ++ox) {
            const std::int64_t acc =
                static_cast<std::int64_t>((oy * spec.out_w() + ox) * n_out + c);
            for (std::size_t k = g; k < g_end; ++k) {
              const Reg feature = Reg::q(held + alt);
              alt ^= 1;
              out.push_back(I::load(feature, Region::kInput,
                                    u32(input_offset(spec, oy, ox, layer.c_ptr[j] + k * l)),
                                    u32(std::min(l, layer.size - k * l)), address));
              out.push_back(I::mac(acc, Reg::q(static_cast<std::int32_t>(k - g)), feature));
            }
          }
        }
      }
    }
    if (opt.stores && layer.f_idx[c + 1] > layer.f_idx[c])
      for (std::size_t pos = 0; pos < positions; ++pos)
        out.push_back(I::store_acc(static_cast<std::int64_t>(pos * n_out + c)));
  }
  return out;
}

}  // namespace

template <typename T>
InstructionStream lower_schedule(const FwcsLayer<T>& layer, const ConvLayerSpec& spec,
                                 ComputeSchedule schedule, const MachineConfig& cfg,
                                 const LoweringOptions& options) {
  cfg.validate();
  spec.validate();
  validate_fwcs(layer, spec);
  return schedule == ComputeSchedule::kReordered ? lower_reordered(layer, spec, cfg, options)
                                                 : lower_default(layer, spec, cfg, options);
}

template <typename T>
InstructionStream lower_csr(const CsrLayer<T>& layer, const ConvLayerSpec& spec,
                            const MachineConfig& cfg, const LoweringOptions& options) {
  using I = Instruction;
  cfg.validate();
  spec.validate();
  validate_csr(layer, spec);
  InstructionStream out;
  const std::size_t n_out = spec.n_filters;
  std::int32_t set = 0;
  for (std::size_t oy = 0; oy < spec.out_h(); ++oy) {
    for (std::size_t ox = 0; ox < spec.out_w(); ++ox) {
      for (std::size_t c = 0; c < n_out; ++c) {
        const std::int64_t acc = static_cast<std::int64_t>((oy * spec.out_w() + ox) * n_out + c);
        for (std::size_t j = layer.f_idx[c]; j < layer.f_idx[c + 1]; ++j) {
          const Reg idx = Reg::r(3 * set);
          const Reg x = Reg::r(3 * set + 1);
          const Reg w = Reg::r(3 * set + 2);
          set ^= 1;
          Reg address;
          if (options.index_loads) {
            out.push_back(I::scalar_load(idx, Region::kIndex, u32(j)));
            address = idx;
          }
          out.push_back(I::scalar_load(x, Region::kInput, u32(input_offset(spec, oy, ox, layer.c_ptr[j])), address));
          out.push_back(I::scalar_load(w, Region::kWeights, u32(j)));
          out.push_back(I::scalar_mac(acc, x, w));
        }
        if (options.stores && layer.f_idx[c + 1] > layer.f_idx[c]) out.push_back(I::store_acc(acc));
      }
    }
  }
  return out;
}

StreamCounts count_stream(const InstructionStream& stream) {
  StreamCounts c;
  for (const auto& in : stream) {
    switch (in.op) {
      case Op::kLoad: ++(in.vector ? c.vector_loads : c.scalar_loads); break;
      case Op::kMac: ++c.macs; break;
      case Op::kStore: ++(in.acc >= 0 ? c.acc_stores : c.vector_stores); break;
    }
  }
  return c;
}

template <typename T>
std::uint64_t layer_cycles(const FwcsLayer<T>& layer, const ConvLayerSpec& spec,
                           ComputeSchedule schedule, const MachineConfig& cfg) {
  const auto trace = simulate(lower_schedule(layer, spec, schedule, cfg), cfg, false);
  return trace.total_cycles + cfg.post_cycles * spec.n_filters * spec.output_positions();
}

template <typename T>
std::uint64_t csr_layer_cycles(const CsrLayer<T>& layer, const ConvLayerSpec& spec,
                               const MachineConfig& cfg) {
  const auto trace = simulate(lower_csr(layer, spec, cfg), cfg, false);
  return trace.total_cycles + cfg.post_cycles * spec.n_filters * spec.output_positions();
}

#define DTMM_INSTANTIATE_LOWERING(T)                                                         \
  template InstructionStream lower_schedule(const FwcsLayer<T>&, const ConvLayerSpec&,       \
                                            ComputeSchedule, const MachineConfig&,           \
                                            const LoweringOptions&);                         \
  template InstructionStream lower_csr(const CsrLayer<T>&, const ConvLayerSpec&,             \
                                       const MachineConfig&, const LoweringOptions&);        \
  template std::uint64_t layer_cycles(const FwcsLayer<T>&, const ConvLayerSpec&,             \
                                      ComputeSchedule, const MachineConfig&);                \
  template std::uint64_t csr_layer_cycles(const CsrLayer<T>&, const ConvLayerSpec&,          \
                                          const MachineConfig&);

DTMM_INSTANTIATE_LOWERING(float)
DTMM_INSTANTIATE_LOWERING(std::int8_t)

#undef DTMM_INSTANTIATE_LOWERING

}  // namespace dtmm
