// scheduler.hpp: searches the per-layer pruning fractions that minimize the
// predicted latency under loss-change, flash and SRAM budgets.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dtmm/cost_model.hpp"
#include "dtmm/importance.hpp"
#include "dtmm/strategy.hpp"

namespace dtmm {

struct ScheduleProblem {
  std::vector<ConvLayerSpec> specs;
  ImportanceMap importance;
  Budget budget;
  LatencyParams latency;
  unsigned m = 8;
  unsigned m0 = 16;

  void validate() const;
};

// Every metric of one strategy, evaluated from scratch.
struct Evaluation {
  double time = 0;
  double size = 0;
  double ram = 0;
  double dl = 0;
  bool feasible = false;
  std::vector<std::string> violations;
};

// Loss change from the realized masks, flash from model_size, SRAM from the
// realized masks' live filters.
Evaluation evaluate(const StrategyVector& s, const ScheduleProblem& problem);
bool feasible(const StrategyVector& s, const ScheduleProblem& problem);

struct AnnealOptions {
  std::uint64_t seed = 0;
  std::size_t iters = 5000;
  double t0 = -1.0;  // <= 0: 10% of the unpruned latency
  double cooling = 0.995;
  double step = 0.05;
  // Round every move to a multiple of `step`.
  bool snap_to_step = false;
  StrategyVector initial;  // empty: all zeros

  void validate() const;
};

struct TracePoint {
  std::size_t iter = 0;
  double temp = 0;
  double objective = 0;
  bool feasible = false;
};

struct ScheduleResult {
  StrategyVector s;
  double predicted_time = 0;
  double predicted_size = 0;
  double predicted_ram = 0;
  double predicted_dl = 0;
  bool feasible = false;
  std::vector<std::string> violations;
  std::size_t iterations = 0;
  std::vector<TracePoint> trace;  // one point per iteration, current state
  std::vector<double> best_curve;  // best objective so far per iteration
};

// Simulated annealing over continuous alphas with the penalized objective
// Time(s) + lambda * sum of relative budget violations; lambda is the
// unpruned latency. A move shifts one alpha by +-step, and half of the moves
// also shift a second layer the opposite way. Returns the best feasible point
// visited, otherwise the best penalized one with feasible = false.
ScheduleResult anneal(const ScheduleProblem& problem, const AnnealOptions& options);

// Objective used by anneal.
double penalized_objective(const Evaluation& e, const ScheduleProblem& problem, double lambda);

// `iter,temp,objective,feasible`
void write_trace_csv(std::ostream& os, const ScheduleResult& result);

}  // namespace dtmm
