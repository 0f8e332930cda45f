// strategy.hpp: per-layer pruning fractions and deployment budgets.
#pragma once

#include <cstddef>
#include <vector>

#include "dtmm/error.hpp"

namespace dtmm {

// alphas[i] is the fraction of layer i's filterlets that is pruned.
struct StrategyVector {
  std::vector<double> alphas;

  std::size_t size() const { return alphas.size(); }
  double operator[](std::size_t i) const { return alphas[i]; }

  // Throws DomainError unless every alpha is in [0, 1].
  void validate() const {
    for (double a : alphas)
      if (!(a >= 0.0 && a <= 1.0)) throw DomainError("strategy alpha outside [0, 1]");
  }

  static StrategyVector uniform(std::size_t layers, double alpha) {
    return {std::vector<double>(layers, alpha)};
  }
  friend bool operator==(const StrategyVector&, const StrategyVector&) = default;
};

struct Budget {
  double mem_flash = 0;  // bytes
  double mem_ram = 0;    // bytes
  double dl_max = 0;     // loss-change allowance
};

}  // namespace dtmm
