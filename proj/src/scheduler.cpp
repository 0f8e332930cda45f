#include "dtmm/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <sstream>

namespace dtmm {

void ScheduleProblem::validate() const {
  if (specs.empty()) throw DataError("schedule problem has no layers");
  if (importance.layers.size() != specs.size()) throw DataError("importance / layer count mismatch");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    specs[i].validate();
    const auto& l = importance.layers[i];
    if (l.filters != specs[i].n_filters || l.positions != specs[i].filterlets_per_filter())
      throw DataError("importance map does not match layer " + std::to_string(i));
  }
  if (!(budget.mem_flash >= 0) || !(budget.mem_ram >= 0) || !(budget.dl_max >= 0))
    throw DataError("budgets must be non-negative");
  latency.validate();
}

void AnnealOptions::validate() const {
  if (iters < 1) throw DataError("anneal: iters must be >= 1");
  if (!(cooling > 0.0 && cooling < 1.0)) throw DataError("anneal: cooling must be in (0, 1)");
  if (!(step > 0.0 && step <= 1.0)) throw DataError("anneal: step must be in (0, 1]");
}

namespace {

std::string describe(const char* what, double value, double limit) {
  std::ostringstream os;
  os << what << ' ' << value << " > " << limit;
  return os.str();
}

double relative_excess(double value, double limit) {
  return (value - limit) / std::max(limit, 1e-12);
}

// k / n is exact for grid points like 0.7 where k * 0.1 is not.
double snap(double a, double step) {
  const double k = std::round(a / step), n = std::round(1.0 / step);
  return std::abs(n * step - 1.0) < 1e-12 ? k / n : k * step;
}

}  // namespace

Evaluation evaluate(const StrategyVector& s, const ScheduleProblem& problem) {
  if (s.size() != problem.specs.size()) throw DataError("strategy length != layer count");
  s.validate();
  const auto masks = build_mask(problem.importance, problem.specs, s);
  Evaluation e;
  e.time = total_time(problem.specs, s, problem.latency);
  e.size = model_size(problem.specs, s, problem.m, problem.m0);
  e.ram = runtime_memory(problem.specs, masks, problem.m);
  e.dl = delta_loss(problem.importance, masks);
  if (e.dl > problem.budget.dl_max) e.violations.push_back(describe("loss change", e.dl, problem.budget.dl_max));
  if (e.size > problem.budget.mem_flash)
    e.violations.push_back(describe("flash bytes", e.size, problem.budget.mem_flash));
  if (e.ram > problem.budget.mem_ram) e.violations.push_back(describe("sram bytes", e.ram, problem.budget.mem_ram));
  e.feasible = e.violations.empty();
  return e;
}

bool feasible(const StrategyVector& s, const ScheduleProblem& problem) {
  return evaluate(s, problem).feasible;
}

double penalized_objective(const Evaluation& e, const ScheduleProblem& problem, double lambda) {
  if (e.feasible) return e.time;
  const auto& b = problem.budget;
  double excess = 0.0;
  if (e.dl > b.dl_max) excess += relative_excess(e.dl, b.dl_max);
  if (e.size > b.mem_flash) excess += relative_excess(e.size, b.mem_flash);
  if (e.ram > b.mem_ram) excess += relative_excess(e.ram, b.mem_ram);
  return e.time + lambda * excess;
}

ScheduleResult anneal(const ScheduleProblem& problem, const AnnealOptions& options) {
  problem.validate();
  options.validate();
  const std::size_t layers = problem.specs.size();

  const StrategyVector zeros = StrategyVector::uniform(layers, 0.0);
  const double lambda = std::max(total_time(problem.specs, zeros, problem.latency), 1.0);
  const double t0 = options.t0 > 0.0 ? options.t0 : 0.1 * lambda;

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick_layer(0, layers - 1);
  std::bernoulli_distribution pick_sign(0.5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  StrategyVector current = options.initial.alphas.empty() ? zeros : options.initial;
  if (current.size() != layers) throw DataError("anneal: initial strategy length mismatch");
  current.validate();
  Evaluation cur_eval = evaluate(current, problem);
  double cur_obj = penalized_objective(cur_eval, problem, lambda);

  StrategyVector best = current;
  double best_obj = cur_obj;
  bool best_feasible = cur_eval.feasible;

  ScheduleResult result;
  result.trace.reserve(options.iters);
  result.best_curve.reserve(options.iters);
  double temp = t0;
  for (std::size_t it = 0; it < options.iters; ++it) {
    StrategyVector cand = current;
    const std::size_t i = pick_layer(rng);
    const double dir = pick_sign(rng) ? options.step : -options.step;
    auto shift = [&](std::size_t k, double d) {
      double a = cand.alphas[k] + d;
      if (options.snap_to_step) a = snap(a, options.step);
      cand.alphas[k] = std::clamp(a, 0.0, 1.0);
    };
    shift(i, dir);
    // Half the moves trade pruning between two layers.
    if (layers > 1 && pick_sign(rng)) {
      const std::size_t j = (i + 1 + pick_layer(rng) % (layers - 1)) % layers;
      shift(j, -dir);
    }

    const Evaluation cand_eval = evaluate(cand, problem);
    const double cand_obj = penalized_objective(cand_eval, problem, lambda);
    const double delta = cand_obj - cur_obj;
    if (delta <= 0.0 || unit(rng) < std::exp(-delta / temp)) {
      current = std::move(cand);
      cur_eval = cand_eval;
      cur_obj = cand_obj;
    }

    // Feasible points always beat infeasible ones.
    const bool better = cur_eval.feasible ? (!best_feasible || cur_obj < best_obj)
                                          : (!best_feasible && cur_obj < best_obj);
    if (better) {
      best = current;
      best_obj = cur_obj;
      best_feasible = cur_eval.feasible;
    }
    result.trace.push_back({it, temp, cur_obj, cur_eval.feasible});
    result.best_curve.push_back(best_obj);
    temp *= options.cooling;
  }

  const Evaluation final_eval = evaluate(best, problem);
  result.s = best;
  result.predicted_time = final_eval.time;
  result.predicted_size = final_eval.size;
  result.predicted_ram = final_eval.ram;
  result.predicted_dl = final_eval.dl;
  result.feasible = final_eval.feasible;
  result.violations = final_eval.violations;
  result.iterations = options.iters;
  return result;
}

void write_trace_csv(std::ostream& os, const ScheduleResult& result) {
  os.precision(12);
  os << "iter,temp,objective,feasible\n";
  for (const auto& p : result.trace)
    os << p.iter << ',' << p.temp << ',' << p.objective << ',' << (p.feasible ? 1 : 0) << '\n';
}

}  // namespace dtmm
