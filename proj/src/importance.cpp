#include "dtmm/importance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dtmm {

GradientBundle average_gradients(std::span<const GradientBundle> samples) {
  if (samples.empty()) throw DataError("average_gradients: no samples");
  GradientBundle out = samples.front();
  for (std::size_t s = 1; s < samples.size(); ++s) {
    if (samples[s].layers.size() != out.layers.size())
      throw DataError("average_gradients: layer count mismatch");
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
      if (!samples[s].layers[l].same_shape(out.layers[l]))
        throw DataError("average_gradients: shape mismatch");
      auto acc = out.layers[l].data();
      auto src = samples[s].layers[l].data();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
    }
  }
  const auto inv = 1.0f / static_cast<float>(samples.size());
  for (auto& t : out.layers)
    for (auto& v : t.data()) v *= inv;
  return out;
}

double taylor_score(std::span<const float> w, std::span<const float> g) {
  if (w.size() != g.size()) throw DataError("taylor_score: length mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) dot += static_cast<double>(w[i]) * g[i];
  return std::abs(dot);
}

LayerScores taylor_scores(const TensorF& weights, const TensorF& grads) {
  if (!weights.same_shape(grads) || weights.rank() != 4)
    throw DataError("taylor_scores: weight / gradient shape mismatch");
  LayerScores out;
  out.filters = weights.count();
  out.positions = weights.height() * weights.width();
  out.scores.resize(out.filters * out.positions);
  const std::size_t c = weights.channels();
  for (std::size_t i = 0; i < out.scores.size(); ++i) {
    const double s = taylor_score(weights.data().subspan(i * c, c), grads.data().subspan(i * c, c));
    if (!std::isfinite(s)) throw DataError("taylor_scores: non-finite score");
    out.scores[i] = s;
  }
  return out;
}

ImportanceMap taylor_importance(std::span<const TensorF> weights, const GradientBundle& grads) {
  if (weights.size() != grads.layers.size()) throw DataError("taylor_importance: layer count mismatch");
  ImportanceMap map;
  for (std::size_t l = 0; l < weights.size(); ++l)
    map.layers.push_back(taylor_scores(weights[l], grads.layers[l]));
  return map;
}

std::vector<double> finite_diff_gradient(std::span<const double> params, const FlatLoss& loss,
                                         double eps) {
  if (!(eps > 0.0)) throw DataError("finite_diff_gradient: eps must be positive");
  std::vector<double> x(params.begin(), params.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = loss(x);
    x[i] = orig - eps;
    const double down = loss(x);
    x[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw DataError("finite_diff_gradient: non-finite loss");
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

GradientBundle finite_diff_gradient(const std::vector<TensorF>& weights, const ModelLoss& loss,
                                    double eps) {
  if (!(eps > 0.0)) throw DataError("finite_diff_gradient: eps must be positive");
  std::vector<TensorF> w = weights;
  GradientBundle out;
  out.source = GradientBundle::Source::kFiniteDifference;
  for (const auto& t : weights) out.layers.push_back(TensorF::from_data(t.rank(), t.dims(), std::vector<float>(t.size())));

  for (std::size_t l = 0; l < w.size(); ++l) {
    auto vals = w[l].data();
    auto g = out.layers[l].data();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const float orig = vals[i];
      // Divide by the step actually taken after float rounding.
      const float hi = orig + static_cast<float>(eps);
      const float lo = orig - static_cast<float>(eps);
      vals[i] = hi;
      const double up = loss(w);
      vals[i] = lo;
      const double down = loss(w);
      vals[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw DataError("finite_diff_gradient: non-finite loss");
      g[i] = static_cast<float>((up - down) / (static_cast<double>(hi) - lo));
    }
  }
  return out;
}

FilterletMask build_mask(const LayerScores& scores, const ConvLayerSpec& spec, double alpha) {
  if (scores.filters != spec.n_filters || scores.positions != spec.filterlets_per_filter())
    throw DataError("build_mask: score matrix does not match layer spec");
  const std::size_t count = scores.scores.size();
  const std::size_t pruned = count - kept_count(count, alpha);

  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores.scores[a] < scores.scores[b]; });

  FilterletMask mask = FilterletMask::all(spec, true);
  for (std::size_t i = 0; i < pruned; ++i) mask.kept[order[i]] = 0;
  return mask;
}

std::vector<FilterletMask> build_mask(const ImportanceMap& importance,
                                      std::span<const ConvLayerSpec> specs,
                                      const StrategyVector& s) {
  if (importance.layers.size() != specs.size() || s.size() != specs.size())
    throw DataError("build_mask: layer count mismatch");
  s.validate();
  std::vector<FilterletMask> masks;
  masks.reserve(specs.size());
  for (std::size_t l = 0; l < specs.size(); ++l)
    masks.push_back(build_mask(importance.layers[l], specs[l], s[l]));
  return masks;
}

double delta_loss(const LayerScores& scores, const FilterletMask& mask) {
  if (scores.scores.size() != mask.kept.size()) throw DataError("delta_loss: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < mask.kept.size(); ++i)
    if (!mask.kept[i]) total += scores.scores[i];
  return total;
}

double delta_loss(const ImportanceMap& importance, std::span<const FilterletMask> masks) {
  if (importance.layers.size() != masks.size()) throw DataError("delta_loss: layer count mismatch");
  double total = 0.0;
  for (std::size_t l = 0; l < masks.size(); ++l) total += delta_loss(importance.layers[l], masks[l]);
  return total;
}

template <typename T>
Tensor<T> apply_mask_zeroing(const Tensor<T>& weights, const FilterletMask& mask) {
  const auto& spec = mask.spec;
  if (weights.rank() != 4 || weights.size() != spec.weight_count() ||
      weights.channels() != spec.channels)
    throw DataError("apply_mask_zeroing: shape mismatch");
  Tensor<T> out = weights;
  auto data = out.data();
  for (std::size_t i = 0; i < mask.kept.size(); ++i)
    if (!mask.kept[i])
      std::fill_n(data.begin() + static_cast<std::ptrdiff_t>(i * spec.channels), spec.channels, T{});
  return out;
}

template TensorF apply_mask_zeroing(const TensorF&, const FilterletMask&);
template TensorQ apply_mask_zeroing(const TensorQ&, const FilterletMask&);

}  // namespace dtmm
