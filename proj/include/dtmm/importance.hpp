// importance.hpp: first-order Taylor importance of filterlets, mask
// construction from strategy vectors and a finite-difference gradient
// oracle.
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "dtmm/fwcs.hpp"
#include "dtmm/strategy.hpp"
#include "dtmm/tensor.hpp"

namespace dtmm {

struct GradientBundle {
  enum class Source { kExternal, kFiniteDifference };
  Source source = Source::kExternal;
  // dL/dw per layer, same shape and layout as the filter banks.
  std::vector<TensorF> layers;
};

// Element-wise mean of several gradient bundles (one per sample).
GradientBundle average_gradients(std::span<const GradientBundle> samples);

// Scores of one layer, row-major (filter, kernel position).
struct LayerScores {
  std::size_t filters = 0;
  std::size_t positions = 0;
  std::vector<double> scores;

  double at(std::size_t filter, std::size_t position) const { return scores[filter * positions + position]; }
};

struct ImportanceMap {
  std::vector<LayerScores> layers;
};

// |sum_c g_c * w_c| for one filterlet.
double taylor_score(std::span<const float> w, std::span<const float> g);

// Throws DataError when the shapes differ.
LayerScores taylor_scores(const TensorF& weights, const TensorF& grads);
ImportanceMap taylor_importance(std::span<const TensorF> weights, const GradientBundle& grads);

// Central differences (L(w + eps) - L(w - eps)) / 2eps for every parameter.
// Throws DataError on eps <= 0 or a non-finite loss.
using FlatLoss = std::function<double(std::span<const double>)>;
std::vector<double> finite_diff_gradient(std::span<const double> params, const FlatLoss& loss,
                                         double eps);

using ModelLoss = std::function<double(const std::vector<TensorF>&)>;
GradientBundle finite_diff_gradient(const std::vector<TensorF>& weights, const ModelLoss& loss,
                                    double eps);

// Prunes the filterlets with the lowest scores; ties go to the lower
// (filter, position). The pruned count is count - kept_count(count, alpha).
FilterletMask build_mask(const LayerScores& scores, const ConvLayerSpec& spec, double alpha);
std::vector<FilterletMask> build_mask(const ImportanceMap& importance,
                                      std::span<const ConvLayerSpec> specs,
                                      const StrategyVector& s);

// Sum of the scores of every pruned filterlet.
double delta_loss(const LayerScores& scores, const FilterletMask& mask);
double delta_loss(const ImportanceMap& importance, std::span<const FilterletMask> masks);

template <typename T>
Tensor<T> apply_mask_zeroing(const Tensor<T>& weights, const FilterletMask& mask);

}  // namespace dtmm
