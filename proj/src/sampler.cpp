#include "kongnet/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>

#include "kongnet/io.hpp"

namespace kongnet::sampler {

double estimate_area_mask_free(double n_nuclei, double avg_nucleus_area) {
  if (n_nuclei < 0.0 || avg_nucleus_area < 0.0) throw std::invalid_argument("area estimate inputs must be >= 0");
  return n_nuclei * avg_nucleus_area;
}

double background_area(double patch_area, std::span<const double> foreground_areas) {
  const double fg = std::accumulate(foreground_areas.begin(), foreground_areas.end(), 0.0);
  return std::max(0.0, patch_area - fg);
}

double default_avg_nucleus_area(int dilation_diameter) {
  const double r = dilation_diameter / 2.0;
  return std::numbers::pi * r * r;
}

std::vector<double> patch_areas_from_targets(const TargetMaskSet& targets) {
  std::vector<double> fg;
  for (const auto& t : targets.classes) {
    const Mask& m = t.nucleus ? *t.nucleus : t.centroid;
    fg.push_back(static_cast<double>(std::count(m.values().begin(), m.values().end(), std::uint8_t{1})));
  }
  const double patch_area = static_cast<double>(targets.height) * targets.width;
  std::vector<double> row{background_area(patch_area, fg)};
  row.insert(row.end(), fg.begin(), fg.end());
  return row;
}

std::vector<double> patch_areas_mask_free(const AnnotationSet& annotation, std::size_t n_classes,
                                          double patch_area, double avg_nucleus_area) {
  std::vector<double> counts(n_classes, 0.0);
  for (const auto& c : annotation.centroids) {
    if (c.class_index < 0 || static_cast<std::size_t>(c.class_index) >= n_classes) {
      throw std::invalid_argument("centroid class index out of range");
    }
    counts[static_cast<std::size_t>(c.class_index)] += 1.0;
  }
  std::vector<double> fg;
  for (double n : counts) fg.push_back(estimate_area_mask_free(n, avg_nucleus_area));
  std::vector<double> row{background_area(patch_area, fg)};
  row.insert(row.end(), fg.begin(), fg.end());
  return row;
}

std::vector<double> class_weights(const SamplerState& state) {
  const std::size_t n_cols = state.n_columns();
  std::vector<double> per_class(n_cols, 0.0);
  for (const auto& row : state.areas) {
    if (row.size() != n_cols) throw std::invalid_argument("SamplerState: ragged area table");
    for (std::size_t c = 0; c < n_cols; ++c) {
      if (row[c] < 0.0) throw std::invalid_argument("SamplerState: negative area");
      per_class[c] += row[c];
    }
  }
  const double total = std::accumulate(per_class.begin(), per_class.end(), 0.0);
  std::vector<double> w(n_cols);
  for (std::size_t c = 0; c < n_cols; ++c) {
    if (!(per_class[c] > 0.0)) throw DegenerateClass(c);
    w[c] = std::log(total / per_class[c]);
  }
  return w;
}

double patch_weight(std::span<const double> patch_areas, std::span<const double> class_weights, double patch_area) {
  if (patch_areas.size() != class_weights.size()) throw std::invalid_argument("patch_weight: size mismatch");
  if (!(patch_area > 0.0)) throw std::invalid_argument("patch_weight: patch area must be positive");
  double w = 0.0;
  for (std::size_t c = 0; c < patch_areas.size(); ++c) w += (patch_areas[c] / patch_area) * class_weights[c];
  return w;
}

std::vector<double> patch_weights(const SamplerState& state) {
  const auto wc = class_weights(state);
  std::vector<double> out;
  out.reserve(state.n_patches());
  for (const auto& row : state.areas) out.push_back(patch_weight(row, wc, state.patch_area));
  return out;
}

namespace {

// Platform-independent uniform in [0, 1).
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

WeightedSampler::WeightedSampler(std::vector<double> weights) {
  if (weights.empty()) throw std::invalid_argument("WeightedSampler: no weights");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("WeightedSampler: weights must be finite and >= 0");
    total += w;
  }
  if (total == 0.0) {
    std::cerr << "warning: all sampling weights are zero; falling back to uniform sampling\n";
    std::fill(weights.begin(), weights.end(), 1.0);
    total = static_cast<double>(weights.size());
  }
  cumulative_.resize(weights.size());
  probabilities_.resize(weights.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    cumulative_[i] = acc / total;
    probabilities_[i] = weights[i] / total;
  }
  cumulative_.back() = 1.0;
}

std::vector<std::size_t> WeightedSampler::draw(std::size_t n, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out(n);
  for (auto& idx : out) {
    const double u = unit_uniform(rng);
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    idx = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cumulative_.begin(),
                                                            static_cast<std::ptrdiff_t>(cumulative_.size()) - 1));
    // Zero-weight entries share a cumulative value with their predecessor and are never selected.
  }
  return out;
}

std::vector<std::size_t> sample_indices(std::span<const double> weights, std::size_t n, std::uint64_t seed) {
  return WeightedSampler(std::vector<double>(weights.begin(), weights.end())).draw(n, seed);
}

void write_weights_csv(std::ostream& out, std::span<const std::string> patch_ids, std::span<const double> weights) {
  if (patch_ids.size() != weights.size()) throw std::invalid_argument("write_weights_csv: size mismatch");
  out << "patch_id,weight\n";
  for (std::size_t i = 0; i < weights.size(); ++i) out << patch_ids[i] << ',' << io::format_number(weights[i]) << '\n';
}

}  // namespace kongnet::sampler
