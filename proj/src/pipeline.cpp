#include "dtmm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dtmm/lowering.hpp"

namespace dtmm {

TensorQ run_model(const ModelBundle& model, const TensorQ& input, ComputeSchedule schedule,
                  const LaneConfig& lanes, RunReport* report) {
  if (input.empty()) throw DataError("run_model: empty input tensor");
  TensorQ x = input;
  QuantParams xq = model.input_quant;
  for (const auto& layer : model.layers) {
    if (layer.dtype != DType::kInt8) throw DataError("run_model: layer " + layer.name + " is not int8");
    ConvOutput<std::int8_t> out;
    switch (layer.format) {
      case LayerFormat::kDense:
        out = conv_dense(x, decode_weights<std::int8_t>(layer), layer.spec, xq.zero_point);
        break;
      case LayerFormat::kFwcs:
        out = conv_fwcs_scheduled(x, fwcs_payload<std::int8_t>(layer), layer.spec, lanes, schedule,
                                  xq.zero_point);
        break;
      case LayerFormat::kCsr:
        out = conv_csr(x, csr_payload<std::int8_t>(layer), layer.spec, xq.zero_point);
        break;
    }
    const double multiplier = static_cast<double>(xq.scale) * layer.weight_quant.scale /
                              layer.output_quant.scale;
    x = requantize(out.values, layer.bias, multiplier, layer.output_quant, layer.relu);
    xq = layer.output_quant;
    if (report) {
      report->layers.push_back({layer.name, layer.format, out.stats});
      report->saturated = report->saturated || out.stats.saturated;
    }
  }
  return x;
}

ScheduleProblem make_problem(const ModelBundle& model, const GradientBundle& grads,
                             const Budget& budget, const LatencyParams& latency, unsigned m0) {
  ScheduleProblem p;
  p.specs = model.specs();
  std::vector<TensorF> weights;
  for (const auto& l : model.layers) weights.push_back(dequantized_weights(l));
  p.importance = taylor_importance(weights, grads);
  p.budget = budget;
  p.latency = latency;
  p.m = model.layers.empty() ? 8u : static_cast<unsigned>(8 * dtype_bytes(model.layers[0].dtype));
  p.m0 = m0;
  return p;
}

ModelBundle pack_fwcs(const ModelBundle& model, std::span<const FilterletMask> masks) {
  if (masks.size() != model.layers.size()) throw DataError("pack_fwcs: mask count mismatch");
  ModelBundle out = model;
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    auto& l = out.layers[i];
    if (l.dtype == DType::kInt8) {
      const auto w = apply_mask_zeroing(decode_weights<std::int8_t>(l), masks[i]);
      l.payload = serialize_fwcs(encode_fwcs(w, masks[i]));
    } else {
      const auto w = apply_mask_zeroing(decode_weights<float>(l), masks[i]);
      l.payload = serialize_fwcs(encode_fwcs(w, masks[i]));
    }
    l.format = LayerFormat::kFwcs;
  }
  return out;
}

PlanOutcome plan_and_pack(const ScheduleProblem& problem, const ModelBundle& model,
                          const AnnealOptions& options) {
  if (problem.specs != model.specs()) throw DataError("plan_and_pack: problem does not match model");
  PlanOutcome out;
  out.result = anneal(problem, options);
  if (!out.result.feasible) return out;
  out.masks = build_mask(problem.importance, problem.specs, out.result.s);
  out.bundle = pack_fwcs(model, out.masks);
  return out;
}

std::size_t fwcs_payload_bytes(const ModelBundle& bundle) {
  std::size_t total = 0;
  for (const auto& l : bundle.layers)
    if (l.format == LayerFormat::kFwcs) total += l.payload.size() - kBlockHeaderBytes;
  return total;
}

namespace {

ConvLayerSpec random_layer(std::mt19937_64& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  static constexpr std::size_t kernels[] = {1, 3, 5};
  ConvLayerSpec s;
  s.n_filters = pick(2, 24);
  s.kernel_h = s.kernel_w = kernels[pick(0, 2)];
  s.channels = pick(2, 48);
  s.stride = 1;
  s.input_h = s.kernel_h - 1 + pick(3, 10);
  s.input_w = s.kernel_w - 1 + pick(3, 10);
  return s;
}

FilterletMask random_mask(const ConvLayerSpec& spec, double alpha, std::mt19937_64& rng) {
  const std::size_t count = spec.filterlet_count();
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  FilterletMask m = FilterletMask::all(spec, true);
  for (std::size_t i = 0; i < count - kept_count(count, alpha); ++i) m.kept[order[i]] = 0;
  return m;
}

}  // namespace

std::vector<LatencySample> simulate_latency_samples(const MachineConfig& cfg, std::size_t count,
                                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<LatencySample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const ConvLayerSpec spec = random_layer(rng);
    const double alpha = unit(rng);
    const FilterletMask mask = random_mask(spec, alpha, rng);
    // Only the index structure matters for timing.
    const auto weights = TensorQ::filters(spec.n_filters, spec.kernel_h, spec.kernel_w, spec.channels, 1);
    const auto layer = encode_fwcs(weights, mask);
    const double realized = 1.0 - static_cast<double>(mask.kept_total()) /
                                      static_cast<double>(spec.filterlet_count());
    out.push_back({spec, realized,
                   static_cast<double>(layer_cycles(layer, spec, ComputeSchedule::kReordered, cfg))});
  }
  return out;
}

LatencyParams calibrate_latency(const MachineConfig& cfg, std::uint64_t seed) {
  const auto samples = simulate_latency_samples(cfg, 10, seed);
  return fit_latency_params(samples, cfg.lanes).params;
}

namespace {

template <typename T>
std::uint64_t dense_layer_cycles(const Tensor<T>& w, const ConvLayerSpec& spec, ComputeSchedule schedule,
                                 const MachineConfig& cfg) {
  return layer_cycles(encode_fwcs(w, FilterletMask::all(spec, true)), spec, schedule, cfg);
}

template <typename T>
LayerCycles bench_layer(const LayerRecord& l, ComputeSchedule schedule, const MachineConfig& cfg) {
  LayerCycles row{l.name, l.format, 0, {}};
  InstructionStream stream;
  switch (l.format) {
    case LayerFormat::kDense:
      stream = lower_schedule(encode_fwcs(decode_weights<T>(l), FilterletMask::all(l.spec, true)),
                              l.spec, schedule, cfg);
      break;
    case LayerFormat::kFwcs: stream = lower_schedule(fwcs_payload<T>(l), l.spec, schedule, cfg); break;
    case LayerFormat::kCsr: stream = lower_csr(csr_payload<T>(l), l.spec, cfg); break;
  }
  row.counts = count_stream(stream);
  row.cycles = simulate(stream, cfg, false).total_cycles +
               cfg.post_cycles * l.spec.n_filters * l.spec.output_positions();
  return row;
}

}  // namespace

std::vector<LayerCycles> bench_bundle(const ModelBundle& model, ComputeSchedule schedule,
                                      const MachineConfig& cfg) {
  std::vector<LayerCycles> rows;
  for (const auto& l : model.layers)
    rows.push_back(l.dtype == DType::kInt8 ? bench_layer<std::int8_t>(l, schedule, cfg)
                                           : bench_layer<float>(l, schedule, cfg));
  return rows;
}

std::vector<CompareRow> compare_formats(const ModelBundle& model, const GradientBundle& grads,
                                        double ratio, const MachineConfig& cfg, unsigned m0) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw DomainError("compare ratio outside [0, 1]");
  if (grads.layers.size() != model.layers.size()) throw DataError("compare: gradient layer count mismatch");
  std::vector<CompareRow> rows;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const auto& layer = model.layers[li];
    const auto& spec = layer.spec;
    if (layer.dtype != DType::kInt8) throw DataError("compare: int8 layers only");
    const unsigned m = 8;
    const TensorQ wq = decode_weights<std::int8_t>(layer);
    const TensorF wf = dequantize(wq, layer.weight_quant);
    const TensorF& g = grads.layers[li];
    const LayerScores scores = taylor_scores(wf, g);

    CompareRow row;
    row.name = layer.name;
    row.channels = spec.channels;
    row.dense_bytes = dense_footprint(spec, m);
    row.dense_cycles = dense_layer_cycles(wq, spec, ComputeSchedule::kReordered, cfg);

    // Filterlet granularity.
    const FilterletMask fmask = build_mask(scores, spec, ratio);
    const auto fwcs = encode_fwcs(apply_mask_zeroing(wq, fmask), fmask);
    const std::size_t kept = fmask.kept_total();
    row.retained_weights = kept * spec.channels;
    row.fwcs_index_entries = fwcs.c_ptr.size();
    row.fwcs_index_bytes = (m0 * (fwcs.c_ptr.size() + fwcs.f_idx.size() + 1) + 7) / 8;
    row.fwcs_bytes = kept == spec.filterlet_count() ? row.dense_bytes : storage_footprint(fwcs, m, m0);
    row.fwcs_cycles = layer_cycles(fwcs, spec, ComputeSchedule::kReordered, cfg);

    // Single weights, same retained count.
    std::vector<double> wscore(spec.weight_count());
    for (std::size_t i = 0; i < wscore.size(); ++i)
      wscore[i] = std::abs(static_cast<double>(g.data()[i]) * wf.data()[i]);
    std::vector<std::size_t> order(wscore.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return wscore[a] > wscore[b]; });
    WeightMask wmask = WeightMask::all(spec, false);
    for (std::size_t i = 0; i < row.retained_weights; ++i) wmask.kept[order[i]] = 1;
    const auto csr = encode_csr(wq, wmask);
    row.csr_index_entries = csr.c_ptr.size();
    row.csr_index_bytes = (m0 * (csr.c_ptr.size() + csr.f_idx.size()) + 7) / 8;
    row.csr_bytes = row.retained_weights == spec.weight_count() ? row.dense_bytes : storage_footprint(csr, m, m0);
    row.csr_cycles = csr_layer_cycles(csr, spec, cfg);

    // Whole filters.
    const std::size_t keep_filters = kept_count(spec.n_filters, ratio);
    if (keep_filters == 0) {
      row.structured_bytes = 0;
      row.structured_cycles = 0;
    } else {
      std::vector<double> fscore(spec.n_filters, 0.0);
      for (std::size_t n = 0; n < spec.n_filters; ++n)
        for (std::size_t p = 0; p < spec.filterlets_per_filter(); ++p) fscore[n] += scores.at(n, p);
      std::vector<std::size_t> forder(spec.n_filters);
      std::iota(forder.begin(), forder.end(), 0);
      std::stable_sort(forder.begin(), forder.end(), [&](auto a, auto b) { return fscore[a] > fscore[b]; });
      std::sort(forder.begin(), forder.begin() + static_cast<std::ptrdiff_t>(keep_filters));
      ConvLayerSpec small = spec;
      small.n_filters = keep_filters;
      auto sw = TensorQ::filters(keep_filters, spec.kernel_h, spec.kernel_w, spec.channels);
      for (std::size_t k = 0; k < keep_filters; ++k) {
        const auto src = wq.block(forder[k]);
        std::copy(src.begin(), src.end(), sw.block(k).begin());
      }
      row.structured_bytes = dense_footprint(small, m);
      row.structured_cycles = dense_layer_cycles(sw, small, ComputeSchedule::kReordered, cfg);
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<ConvLayerSpec> default_toy_specs() {
  return {
      {8, 3, 3, 8, 1, 12, 12},
      {16, 3, 3, 8, 1, 10, 10},
      {8, 3, 3, 16, 1, 8, 8},
  };
}

namespace {

TensorF forward_float(const std::vector<TensorF>& weights, const std::vector<std::vector<float>>& biases,
                      const std::vector<ConvLayerSpec>& specs, TensorF x, std::vector<TensorF>* acts) {
  for (std::size_t i = 0; i < specs.size(); ++i) {
    x = add_bias(conv_dense(x, weights[i], specs[i]).values, biases[i], true);
    if (acts) acts->push_back(x);
  }
  return x;
}

std::pair<float, float> min_max(const TensorF& t) {
  const auto [lo, hi] = std::minmax_element(t.data().begin(), t.data().end());
  return {*lo, *hi};
}

}  // namespace

ToyModel make_toy_model(const std::vector<ConvLayerSpec>& specs, std::uint64_t seed,
                        std::size_t grad_samples) {
  if (specs.empty()) throw DataError("toy model needs at least one layer");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    specs[i].validate();
    if (i > 0 && (specs[i].channels != specs[i - 1].n_filters ||
                  specs[i].input_h != specs[i - 1].out_h() || specs[i].input_w != specs[i - 1].out_w()))
      throw TopologyError("toy model layers do not chain");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);

  std::vector<TensorF> weights;
  std::vector<std::vector<float>> biases;
  for (const auto& s : specs) {
    auto w = TensorF::filters(s.n_filters, s.kernel_h, s.kernel_w, s.channels);
    const float std_dev = 1.0f / std::sqrt(static_cast<float>(s.filter_size()));
    for (auto& v : w.data()) v = normal(rng) * std_dev;
    weights.push_back(std::move(w));
    std::vector<float> b(s.n_filters);
    for (auto& v : b) v = 0.05f * normal(rng);
    biases.push_back(std::move(b));
  }

  auto xf = TensorF::feature(specs[0].input_h, specs[0].input_w, specs[0].channels);
  for (auto& v : xf.data()) v = unit(rng);
  std::vector<TensorF> acts;
  forward_float(weights, biases, specs, xf, &acts);

  ToyModel toy;
  toy.model.name = "toy";
  toy.model.input_quant = affine_params(0.0f, 1.0f);
  toy.input = quantize(xf, toy.model.input_quant);

  toy.grads.name = "toy";
  toy.grads.role = "grads";
  toy.grads.samples = grad_samples;
  toy.grads.input_quant = toy.model.input_quant;

  QuantParams in_q = toy.model.input_quant;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    LayerRecord l;
    l.name = "conv" + std::to_string(i);
    l.spec = specs[i];
    l.format = LayerFormat::kDense;
    l.dtype = DType::kInt8;
    const auto [wlo, whi] = min_max(weights[i]);
    l.weight_quant = symmetric_params(std::max(std::abs(wlo), std::abs(whi)));
    const auto [alo, ahi] = min_max(acts[i]);
    l.output_quant = affine_params(alo, ahi);
    l.relu = true;
    const double acc_scale = static_cast<double>(in_q.scale) * l.weight_quant.scale;
    for (float b : biases[i]) l.bias.push_back(static_cast<std::int32_t>(std::lround(b / acc_scale)));
    l.payload = serialize_tensor(quantize(weights[i], l.weight_quant));
    in_q = l.output_quant;

    // Gradient samples: a shared direction plus per-sample noise.
    LayerRecord g;
    g.name = l.name;
    g.spec = specs[i];
    g.format = LayerFormat::kDense;
    g.dtype = DType::kFloat32;
    const std::size_t len = specs[i].weight_count();
    std::vector<float> base(len);
    for (auto& v : base) v = normal(rng);
    auto gt = TensorF::filters(grad_samples * specs[i].n_filters, specs[i].kernel_h, specs[i].kernel_w,
                               specs[i].channels);
    for (std::size_t s = 0; s < grad_samples; ++s)
      for (std::size_t k = 0; k < len; ++k) gt.data()[s * len + k] = 0.01f * (base[k] + 0.3f * normal(rng));
    g.payload = serialize_tensor(gt);

    toy.model.layers.push_back(std::move(l));
    toy.grads.layers.push_back(std::move(g));
  }
  return toy;
}

}  // namespace dtmm
