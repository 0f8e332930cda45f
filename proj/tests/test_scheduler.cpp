#include <cmath>

#include "doctest.h"
#include "dtmm/pipeline.hpp"
#include "util.hpp"

using namespace dtmm;

namespace {

ImportanceMap random_importance(std::mt19937_64& rng, const std::vector<ConvLayerSpec>& specs) {
  ImportanceMap imp;
  for (const auto& s : specs) {
    LayerScores l{s.n_filters, s.filterlets_per_filter(), {}};
    for (std::size_t i = 0; i < s.filterlet_count(); ++i)
      l.scores.push_back(std::uniform_real_distribution<double>(0.01, 1.0)(rng));
    imp.layers.push_back(l);
  }
  return imp;
}

ScheduleProblem make(std::mt19937_64& rng, std::vector<ConvLayerSpec> specs, Budget b) {
  ScheduleProblem p;
  p.importance = random_importance(rng, specs);
  p.specs = std::move(specs);
  p.budget = b;
  p.latency.t_mem = 0.1;
  p.latency.t_idx = 1.0;
  p.latency.t_com = 2.0;
  p.latency.t_post = 4.0;
  return p;
}

std::vector<ConvLayerSpec> two_layers() { return {{8, 3, 3, 8, 1, 10, 10}, {8, 3, 3, 8, 1, 8, 8}}; }

constexpr double kHuge = 1e12;

}  // namespace

TEST_CASE("feasibility") {
  std::mt19937_64 rng(1);
  auto p = make(rng, two_layers(), {kHuge, kHuge, 0.0});
  CHECK_FALSE(feasible(StrategyVector::uniform(2, 1.0), p));
  CHECK(feasible(StrategyVector::uniform(2, 0.0), p));
  p.budget.dl_max = kHuge;
  CHECK(feasible(StrategyVector::uniform(2, 0.0), p));

  for (int t = 0; t < 100; ++t) {
    const Budget b{std::uniform_real_distribution<double>(0, 3000)(rng), std::uniform_real_distribution<double>(0, 2000)(rng),
                   std::uniform_real_distribution<double>(0, 30)(rng)};
    auto q = make(rng, two_layers(), b);
    StrategyVector s = StrategyVector::uniform(2, 0.0);
    for (auto& a : s.alphas) a = std::uniform_real_distribution<double>(0, 1)(rng);
    const auto masks = build_mask(q.importance, q.specs, s);
    const bool oracle = delta_loss(q.importance, masks) <= b.dl_max && model_size(q.specs, s, 8, 16) <= b.mem_flash &&
                        runtime_memory(q.specs, masks, 8) <= b.mem_ram;
    const auto e = evaluate(s, q);
    CHECK(e.feasible == oracle);
    CHECK(e.violations.empty() == oracle);
  }
}

TEST_CASE("anneal on simple problems") {
  std::mt19937_64 rng(2);
  SUBCASE("one unconstrained layer goes to full pruning") {
    const auto p = make(rng, {{8, 3, 3, 8, 1, 10, 10}}, {kHuge, kHuge, kHuge});
    const auto r = anneal(p, {});
    CHECK(r.feasible);
    CHECK(r.s[0] == doctest::Approx(1.0));
  }
  SUBCASE("only all-ones fits") {
    const auto p = make(rng, two_layers(), {0.0, kHuge, kHuge});
    const auto r = anneal(p, {});
    CHECK(r.feasible);
    CHECK(r.s == StrategyVector::uniform(2, 1.0));
  }
  SUBCASE("nothing fits") {
    auto p = make(rng, two_layers(), {0.0, kHuge, 0.0});
    const auto r = anneal(p, {});
    CHECK_FALSE(r.feasible);
    CHECK_FALSE(r.violations.empty());
  }
  SUBCASE("reproducible and not stale") {
    const auto p = make(rng, two_layers(), {2500, 1500, 8});
    AnnealOptions o;
    o.seed = 42;
    const auto a = anneal(p, o);
    const auto b = anneal(p, o);
    CHECK(a.s == b.s);
    CHECK(a.predicted_time == b.predicted_time);
    const auto e = evaluate(a.s, p);
    CHECK(a.predicted_time == e.time);
    CHECK(a.predicted_size == e.size);
    CHECK(a.predicted_ram == e.ram);
    CHECK(a.predicted_dl == e.dl);
    CHECK(a.feasible == e.feasible);
    CHECK(a.trace.size() == o.iters);
  }
  SUBCASE("bad options") {
    const auto p = make(rng, two_layers(), {kHuge, kHuge, kHuge});
    AnnealOptions o;
    o.cooling = 1.0;
    CHECK_THROWS_AS(anneal(p, o), DataError);
    o = {};
    o.iters = 0;
    CHECK_THROWS_AS(anneal(p, o), DataError);
  }
}

TEST_CASE("anneal against the exhaustive grid") {
  std::mt19937_64 rng(3);
  int within = 0;
  const int seeds = 20;
  for (int seed = 0; seed < seeds; ++seed) {
    auto p = make(rng, two_layers(), {1800, kHuge, 6});
    double best = INFINITY;
    for (int i = 0; i <= 10; ++i)
      for (int j = 0; j <= 10; ++j) {
        const StrategyVector s{{i / 10.0, j / 10.0}};
        const auto e = evaluate(s, p);
        if (e.feasible) best = std::min(best, e.time);
      }
    REQUIRE(std::isfinite(best));
    AnnealOptions o;
    o.seed = static_cast<std::uint64_t>(seed);
    o.step = 0.1;
    o.snap_to_step = true;
    const auto r = anneal(p, o);
    REQUIRE(r.feasible);
    for (double a : r.s.alphas) CHECK(a == std::round(a * 10) / 10.0);
    if (r.predicted_time <= 1.05 * best) ++within;
  }
  CHECK(within >= seeds - 1);
}

TEST_CASE("plan and pack") {
  const std::vector<ConvLayerSpec> one{{4, 3, 3, 4, 1, 6, 6}};
  const auto toy = make_toy_model(one, 5);
  const auto grads = gradients_from_bundle(toy.grads, toy.model);
  LatencyParams lat;
  lat.t_com = 2;
  lat.t_post = 4;

  SUBCASE("alpha = 0 plan runs bit-identical to the dense model") {
    const auto p = make_problem(toy.model, grads, {kHuge, kHuge, 0.0}, lat);
    const auto out = plan_and_pack(p, toy.model, {});
    REQUIRE(out.bundle);
    CHECK(out.masks[0].kept_total() == one[0].filterlet_count());
    const auto dense = run_model(toy.model, toy.input, ComputeSchedule::kReordered, {});
    CHECK(run_model(*out.bundle, toy.input, ComputeSchedule::kReordered, {}) == dense);
    CHECK(run_model(*out.bundle, toy.input, ComputeSchedule::kDefaultOrder, {}) == dense);
  }
  SUBCASE("pruned bundle matches the dense oracle on zeroed weights") {
    const auto p = make_problem(toy.model, grads, {kHuge, kHuge, kHuge}, lat);
    AnnealOptions o;
    o.initial = StrategyVector::uniform(1, 0.5);
    o.iters = 1;
    o.step = 0.05;
    const auto out = plan_and_pack(p, toy.model, o);
    REQUIRE(out.bundle);
    ModelBundle oracle = toy.model;
    oracle.layers[0].payload =
        serialize_tensor(apply_mask_zeroing(decode_weights<std::int8_t>(toy.model.layers[0]), out.masks[0]));
    CHECK(run_model(*out.bundle, toy.input, ComputeSchedule::kReordered, {}) ==
          run_model(oracle, toy.input, ComputeSchedule::kReordered, {}));
  }
  SUBCASE("zero budget is infeasible") {
    const auto p = make_problem(toy.model, grads, {0.0, 0.0, 0.0}, lat);
    const auto out = plan_and_pack(p, toy.model, {});
    CHECK_FALSE(out.result.feasible);
    CHECK_FALSE(out.bundle);
  }
}
