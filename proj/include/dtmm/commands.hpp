// commands.hpp: command implementations behind the dtmm executable.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>

namespace dtmm {

enum ExitCode : int {
  kExitOk = 0,
  kExitInfeasible = 2,
  kExitInput = 3,
  kExitCorrupt = 4,
};

struct PruneArgs {
  std::string model;
  std::string grads;
  std::string out;
  double flash = 0;
  double ram = 0;
  double dlmax = 0;
  std::size_t lanes = 16;
  std::uint64_t seed = 0;
  std::size_t iters = 5000;
  std::size_t batch = 0;
  std::string latency;   // params file; calibrated on the simulator when empty
  std::string strategy;  // comma-separated fixed plan; annealed when empty
  std::string report;    // JSON report path; stdout when empty
  std::string trace;     // annealing trace CSV
};

struct RunArgs {
  std::string bundle;
  std::string input;
  std::string out;
  std::string schedule = "reordered";
  std::size_t lanes = 16;
  std::string report;
};

struct BenchArgs {
  std::string bundle;
  std::string demo;  // "fig9"
  std::string schedule = "reordered";
  std::size_t lanes = 16;
  std::string trace;  // per-cycle CSV for the demo streams
};

struct CompareArgs {
  std::string model;
  std::string grads;
  double ratio = 0.9;
  std::size_t lanes = 16;
  bool csv = false;
};

struct ToyArgs {
  std::string dir;
  std::uint64_t seed = 0;
  std::size_t samples = 4;
};

struct FitArgs {
  std::string samples;  // CSV; simulated when empty
  std::size_t count = 10;
  std::size_t lanes = 16;
  std::uint64_t seed = 0;
  std::string out;
  std::string samples_out;
};

int cmd_prune(const PruneArgs& a, std::ostream& out, std::ostream& err);
int cmd_run(const RunArgs& a, std::ostream& out, std::ostream& err);
int cmd_bench(const BenchArgs& a, std::ostream& out, std::ostream& err);
int cmd_compare(const CompareArgs& a, std::ostream& out, std::ostream& err);
int cmd_make_toy(const ToyArgs& a, std::ostream& out, std::ostream& err);
int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err);

// Seed from DTMM_SEED, or `fallback` when unset or unparsable.
std::uint64_t env_seed(std::uint64_t fallback);

// Runs `body` and maps library errors to exit codes.
int guarded(std::ostream& err, const std::function<int()>& body);

}  // namespace dtmm
