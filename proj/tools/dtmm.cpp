#include <iostream>

#include "CLI11.hpp"
#include "dtmm/commands.hpp"

int main(int argc, char** argv) {
  using namespace dtmm;
  CLI::App app{"dtmm: filterlet pruning and sparse convolution toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = env_seed(0);

  PruneArgs prune;
  auto* p = app.add_subcommand("prune", "plan per-layer pruning under budgets and pack an FWCS bundle");
  p->add_option("model", prune.model, "model bundle")->required();
  p->add_option("grads", prune.grads, "gradient bundle")->required();
  p->add_option("out", prune.out, "output bundle")->required();
  p->add_option("--flash", prune.flash, "flash budget in bytes")->required();
  p->add_option("--ram", prune.ram, "SRAM budget in bytes")->required();
  p->add_option("--dlmax", prune.dlmax, "loss-change budget")->required();
  p->add_option("--lanes", prune.lanes, "SIMD lanes")->capture_default_str();
  p->add_option("--seed", seed, "random seed (default $DTMM_SEED or 0)");
  p->add_option("--iters", prune.iters, "annealing iterations")->capture_default_str();
  p->add_option("--batch", prune.batch, "gradient samples to average (0 = all)");
  p->add_option("--latency", prune.latency, "latency parameter file");
  p->add_option("--strategy", prune.strategy, "fixed plan, comma-separated alphas");
  p->add_option("--report", prune.report, "JSON report path (default stdout)");
  p->add_option("--trace", prune.trace, "annealing trace CSV");

  RunArgs run;
  auto* r = app.add_subcommand("run", "execute a bundle on an input tensor");
  r->add_option("bundle", run.bundle)->required();
  r->add_option("input", run.input)->required();
  r->add_option("-o,--out", run.out, "output tensor path");
  r->add_option("--schedule", run.schedule)->check(CLI::IsMember({"default", "reordered"}))->capture_default_str();
  r->add_option("--lanes", run.lanes)->capture_default_str();
  r->add_option("--report", run.report, "JSON counts path (default stdout)");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "simulated cycles per layer");
  b->add_option("bundle", bench.bundle);
  b->add_option("--demo", bench.demo, "canned scenario: fig9")->check(CLI::IsMember({"fig9"}));
  b->add_option("--schedule", bench.schedule)->check(CLI::IsMember({"default", "reordered"}))->capture_default_str();
  b->add_option("--lanes", bench.lanes)->capture_default_str();
  b->add_option("--trace", bench.trace, "per-cycle CSV for the demo");

  CompareArgs cmp;
  auto* c = app.add_subcommand("compare", "dense / structured / CSR / FWCS at equal pruned ratio");
  c->add_option("model", cmp.model)->required();
  c->add_option("grads", cmp.grads)->required();
  c->add_option("--ratio", cmp.ratio)->capture_default_str();
  c->add_option("--lanes", cmp.lanes)->capture_default_str();
  c->add_flag("--csv", cmp.csv);

  ToyArgs toy;
  auto* t = app.add_subcommand("make-toy", "write a synthetic 3-layer model, gradients and input");
  t->add_option("dir", toy.dir)->required();
  t->add_option("--seed", seed);
  t->add_option("--samples", toy.samples)->capture_default_str();

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "fit latency constants");
  f->add_option("--samples", fit.samples, "samples CSV (simulated when absent)");
  f->add_option("--count", fit.count)->capture_default_str();
  f->add_option("--lanes", fit.lanes)->capture_default_str();
  f->add_option("--seed", seed);
  f->add_option("-o,--out", fit.out, "parameter file");
  f->add_option("--samples-out", fit.samples_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitInput;
  }
  if (b->parsed() && bench.demo.empty() && bench.bundle.empty()) {
    std::cerr << "bench: give a bundle or --demo\n";
    return kExitInput;
  }

  prune.seed = toy.seed = fit.seed = seed;
  return guarded(std::cerr, [&] {
    if (p->parsed()) return cmd_prune(prune, std::cout, std::cerr);
    if (r->parsed()) return cmd_run(run, std::cout, std::cerr);
    if (b->parsed()) return cmd_bench(bench, std::cout, std::cerr);
    if (c->parsed()) return cmd_compare(cmp, std::cout, std::cerr);
    if (t->parsed()) return cmd_make_toy(toy, std::cout, std::cerr);
    return cmd_fit(fit, std::cout, std::cerr);
  });
}
