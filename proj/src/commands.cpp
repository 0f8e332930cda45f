#include "dtmm/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dtmm/pipeline.hpp"
#include "json.hpp"

namespace dtmm {

using nlohmann::json;

std::uint64_t env_seed(std::uint64_t fallback) {
  const char* v = std::getenv("DTMM_SEED");
  if (!v || !*v) return fallback;
  char* end = nullptr;
  const unsigned long long s = std::strtoull(v, &end, 10);
  return *end == '\0' ? static_cast<std::uint64_t>(s) : fallback;
}

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const CorruptionError& e) {
    err << "corrupt input: " << e.what() << '\n';
    return kExitCorrupt;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }
}

namespace {

ComputeSchedule parse_schedule(const std::string& s) {
  if (s == "default") return ComputeSchedule::kDefaultOrder;
  if (s == "reordered") return ComputeSchedule::kReordered;
  throw DataError("unknown schedule '" + s + "'");
}

void emit(const json& j, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << j.dump(2) << '\n';
}

StrategyVector parse_strategy(const std::string& text, std::size_t layers) {
  StrategyVector s;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw DataError("bad strategy entry '" + item + "'");
    }
    if (used != item.size()) throw DataError("bad strategy entry '" + item + "'");
    s.alphas.push_back(v);
  }
  if (s.size() == 1 && layers > 1) s = StrategyVector::uniform(layers, s[0]);
  if (s.size() != layers) throw DataError("strategy length does not match layer count");
  s.validate();
  return s;
}

MachineConfig machine(std::size_t lanes) {
  MachineConfig cfg;
  cfg.lanes = lanes;
  cfg.validate();
  return cfg;
}

json stats_json(const ExecStats& s) {
  return {{"macs", s.macs},         {"weight_loads", s.weight_loads}, {"feature_loads", s.feature_loads},
          {"loads", s.loads()},     {"index_reads", s.index_reads},   {"prefetch_values", s.prefetch_values},
          {"stores", s.stores},     {"saturated", s.saturated}};
}

json counts_json(const StreamCounts& c) {
  return {{"vector_loads", c.vector_loads}, {"scalar_loads", c.scalar_loads},
          {"vector_stores", c.vector_stores}, {"acc_stores", c.acc_stores}, {"macs", c.macs}};
}

}  // namespace

int cmd_prune(const PruneArgs& a, std::ostream& out, std::ostream& err) {
  if (!(a.flash > 0) || !(a.ram > 0) || !(a.dlmax >= 0)) {
    err << "error: budgets must be positive\n";
    return kExitInput;
  }
  const ModelBundle model = load_bundle(a.model);
  const ModelBundle grads_bundle = load_bundle(a.grads);
  const GradientBundle grads = gradients_from_bundle(grads_bundle, model, a.batch);
  const MachineConfig cfg = machine(a.lanes);

  LatencyParams latency;
  if (a.latency.empty()) {
    latency = calibrate_latency(cfg, a.seed);
  } else {
    std::ifstream f(a.latency);
    if (!f) throw DataError("cannot open " + a.latency);
    latency = read_latency_params(f);
  }
  const ScheduleProblem problem = make_problem(model, grads, {a.flash, a.ram, a.dlmax}, latency);

  AnnealOptions opt;
  opt.seed = a.seed;
  opt.iters = a.iters;
  PlanOutcome plan;
  if (a.strategy.empty()) {
    plan = plan_and_pack(problem, model, opt);
  } else {
    // A fixed plan: evaluate it as-is.
    const StrategyVector s = parse_strategy(a.strategy, problem.specs.size());
    const Evaluation e = evaluate(s, problem);
    plan.result.s = s;
    plan.result.predicted_time = e.time;
    plan.result.predicted_size = e.size;
    plan.result.predicted_ram = e.ram;
    plan.result.predicted_dl = e.dl;
    plan.result.feasible = e.feasible;
    plan.result.violations = e.violations;
    if (e.feasible) {
      plan.masks = build_mask(problem.importance, problem.specs, s);
      plan.bundle = pack_fwcs(model, plan.masks);
    }
  }
  if (!a.trace.empty()) {
    std::ofstream f(a.trace);
    if (!f) throw DataError("cannot write " + a.trace);
    write_trace_csv(f, plan.result);
  }

  const auto& r = plan.result;
  json report = {{"feasible", r.feasible},
                 {"s", r.s.alphas},
                 {"violations", r.violations},
                 {"predicted",
                  {{"cycles", r.predicted_time},
                   {"flash_bytes", r.predicted_size},
                   {"ram_bytes", r.predicted_ram},
                   {"delta_loss", r.predicted_dl}}},
                 {"latency",
                  {{"t_mem", latency.t_mem},
                   {"t_idx", latency.t_idx},
                   {"t_com", latency.t_com},
                   {"t_post", latency.t_post},
                   {"lanes", latency.lanes}}}};
  if (!r.feasible) {
    emit(report, a.report, out);
    err << "infeasible:";
    for (const auto& v : r.violations) err << ' ' << v << ';';
    err << '\n';
    return kExitInfeasible;
  }

  const auto bytes = serialize_bundle(*plan.bundle);
  write_file(a.out, bytes);
  json layers = json::array();
  for (std::size_t i = 0; i < plan.masks.size(); ++i) {
    const auto& l = plan.bundle->layers[i];
    layers.push_back({{"name", l.name},
                      {"alpha", r.s[i]},
                      {"kept_filterlets", plan.masks[i].kept_total()},
                      {"filterlets", l.spec.filterlet_count()},
                      {"payload_bytes", l.payload.size()}});
  }
  report["layers"] = layers;
  report["actual"] = {{"fwcs_bytes", fwcs_payload_bytes(*plan.bundle)},
                      {"file_bytes", bytes.size()},
                      {"ram_bytes", runtime_memory(problem.specs, plan.masks, problem.m)},
                      {"delta_loss", delta_loss(problem.importance, plan.masks)}};
  emit(report, a.report, out);
  return kExitOk;
}

int cmd_run(const RunArgs& a, std::ostream& out, std::ostream& err) {
  const ComputeSchedule schedule = parse_schedule(a.schedule);
  const ModelBundle model = load_bundle(a.bundle);
  const auto blob = read_file(a.input);
  if (blob.empty()) {
    err << "empty input\n";
    return kExitCorrupt;
  }
  TensorQ input;
  if (peek_tensor_dtype(blob) == DType::kFloat32) {
    input = quantize(parse_tensor<float>(blob), model.input_quant);
  } else {
    input = parse_tensor<std::int8_t>(blob);
  }
  if (input.size() == 0) {
    err << "empty input\n";
    return kExitCorrupt;
  }
  if (!model.layers.empty()) {
    const auto& s = model.layers.front().spec;
    if (input.height() != s.input_h || input.width() != s.input_w || input.channels() != s.channels)
      throw DataError("input shape does not match the first layer");
  }
  LaneConfig lanes;
  lanes.lanes = a.lanes;
  RunReport rep;
  const TensorQ y = run_model(model, input, schedule, lanes, &rep);
  if (!a.out.empty()) write_file(a.out, serialize_tensor(y));

  json layers = json::array();
  for (const auto& l : rep.layers) {
    json j = stats_json(l.stats);
    j["name"] = l.name;
    j["format"] = format_name(l.format);
    layers.push_back(j);
  }
  emit({{"schedule", a.schedule},
        {"lanes", a.lanes},
        {"output_shape", {y.height(), y.width(), y.channels()}},
        {"saturated", rep.saturated},
        {"layers", layers}},
       a.report, out);
  return kExitOk;
}

int cmd_bench(const BenchArgs& a, std::ostream& out, std::ostream&) {
  const MachineConfig cfg = machine(a.lanes);
  if (a.demo == "fig9") {
    MachineConfig c = cfg;
    const auto d = two_mac_default_stream();
    const auto r = two_mac_reordered_stream();
    const auto td = simulate(d, c, !a.trace.empty());
    const auto tr = simulate(r, c, !a.trace.empty());
    if (!a.trace.empty()) {
      std::ofstream f(a.trace);
      if (!f) throw DataError("cannot write " + a.trace);
      f << "# default\n";
      dump_trace(f, d, td);
      f << "# reordered\n";
      dump_trace(f, r, tr);
    }
    out << json{{"demo", "fig9"}, {"default_cycles", td.total_cycles}, {"reordered_cycles", tr.total_cycles}}.dump(2)
        << '\n';
    return kExitOk;
  }
  if (!a.demo.empty()) throw DataError("unknown demo '" + a.demo + "'");
  const ModelBundle model = load_bundle(a.bundle);
  const auto rows = bench_bundle(model, parse_schedule(a.schedule), cfg);
  json layers = json::array();
  std::uint64_t total = 0;
  for (const auto& r : rows) {
    total += r.cycles;
    layers.push_back({{"name", r.name}, {"format", format_name(r.format)}, {"cycles", r.cycles},
                      {"instructions", counts_json(r.counts)}});
  }
  out << json{{"schedule", a.schedule}, {"lanes", a.lanes}, {"total_cycles", total}, {"layers", layers}}.dump(2)
      << '\n';
  return kExitOk;
}

int cmd_compare(const CompareArgs& a, std::ostream& out, std::ostream&) {
  const ModelBundle model = load_bundle(a.model);
  const GradientBundle grads = gradients_from_bundle(load_bundle(a.grads), model);
  const auto rows = compare_formats(model, grads, a.ratio, machine(a.lanes));
  if (a.csv) {
    out << "layer,C,retained,dense_bytes,structured_bytes,csr_bytes,fwcs_bytes,csr_index,fwcs_index,"
           "dense_cycles,structured_cycles,csr_cycles,fwcs_cycles\n";
    for (const auto& r : rows)
      out << r.name << ',' << r.channels << ',' << r.retained_weights << ',' << r.dense_bytes << ','
          << r.structured_bytes << ',' << r.csr_bytes << ',' << r.fwcs_bytes << ',' << r.csr_index_entries << ','
          << r.fwcs_index_entries << ',' << r.dense_cycles << ',' << r.structured_cycles << ',' << r.csr_cycles
          << ',' << r.fwcs_cycles << '\n';
    return kExitOk;
  }
  json layers = json::array();
  for (const auto& r : rows)
    layers.push_back({{"name", r.name},
                      {"channels", r.channels},
                      {"retained_weights", r.retained_weights},
                      {"bytes",
                       {{"dense", r.dense_bytes},
                        {"structured", r.structured_bytes},
                        {"csr", r.csr_bytes},
                        {"fwcs", r.fwcs_bytes}}},
                      {"index_entries", {{"csr", r.csr_index_entries}, {"fwcs", r.fwcs_index_entries}}},
                      {"index_bytes", {{"csr", r.csr_index_bytes}, {"fwcs", r.fwcs_index_bytes}}},
                      {"cycles",
                       {{"dense", r.dense_cycles},
                        {"structured", r.structured_cycles},
                        {"csr", r.csr_cycles},
                        {"fwcs", r.fwcs_cycles}}}});
  out << json{{"ratio", a.ratio}, {"lanes", a.lanes}, {"layers", layers}}.dump(2) << '\n';
  return kExitOk;
}

int cmd_make_toy(const ToyArgs& a, std::ostream& out, std::ostream&) {
  const std::filesystem::path dir(a.dir);
  std::filesystem::create_directories(dir);
  const ToyModel toy = make_toy_model(default_toy_specs(), a.seed, a.samples);
  save_bundle(dir / "model.dtmb", toy.model);
  save_bundle(dir / "grads.dtmb", toy.grads);
  write_file(dir / "input.dttn", serialize_tensor(toy.input));
  out << (dir / "model.dtmb").string() << '\n'
      << (dir / "grads.dtmb").string() << '\n'
      << (dir / "input.dttn").string() << '\n';
  return kExitOk;
}

int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream&) {
  std::vector<LatencySample> samples;
  if (a.samples.empty()) {
    samples = simulate_latency_samples(machine(a.lanes), a.count, a.seed);
  } else {
    std::ifstream f(a.samples);
    if (!f) throw DataError("cannot open " + a.samples);
    samples = read_samples_csv(f);
  }
  if (!a.samples_out.empty()) {
    std::ofstream f(a.samples_out);
    if (!f) throw DataError("cannot write " + a.samples_out);
    write_samples_csv(f, samples);
  }
  const LatencyFit fit = fit_latency_params(samples, a.lanes);
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    if (!f) throw DataError("cannot write " + a.out);
    write_latency_params(f, fit.params);
  }
  out << json{{"t_mem", fit.params.t_mem},
              {"t_idx", fit.params.t_idx},
              {"t_com", fit.params.t_com},
              {"t_post", fit.params.t_post},
              {"lanes", fit.params.lanes},
              {"samples", samples.size()},
              {"train_mse", fit.train_mse}}
             .dump(2)
      << '\n';
  return kExitOk;
}

}  // namespace dtmm
