#ifndef KONGNET_SAMPLER_HPP
#define KONGNET_SAMPLER_HPP

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kongnet/core_types.hpp"

namespace kongnet::sampler {

/// Area bookkeeping for class-balanced patch sampling.
/// areas[p][c]: column 0 is background, columns 1..n are the foreground classes.
struct SamplerState {
  std::vector<std::vector<double>> areas;
  double patch_area = 0.0;

  std::size_t n_patches() const { return areas.size(); }
  std::size_t n_columns() const { return areas.empty() ? 0 : areas.front().size(); }
};

struct DegenerateClass : std::domain_error {
  explicit DegenerateClass(std::size_t column)
      : std::domain_error("degenerate class: column " + std::to_string(column) + " has zero total area"),
        column(column) {}
  std::size_t column;
};

/// n_nuclei * avg_nucleus_area.
double estimate_area_mask_free(double n_nuclei, double avg_nucleus_area);

/// patch_area minus the foreground sum, floored at zero.
double background_area(double patch_area, std::span<const double> foreground_areas);

/// Area of a circular disk with the given dilation diameter.
double default_avg_nucleus_area(int dilation_diameter);

/// One row of SamplerState from nucleus masks (pixel counts).
std::vector<double> patch_areas_from_targets(const TargetMaskSet& targets);
/// One row of SamplerState from centroid counts times the average nucleus area.
std::vector<double> patch_areas_mask_free(const AnnotationSet& annotation, std::size_t n_classes,
                                          double patch_area, double avg_nucleus_area);

/// W_c = log(sum over all classes and patches / sum over patches of class c).
std::vector<double> class_weights(const SamplerState& state);

/// W_p = sum_c (A(p,c) / A_patch) * W_c.
double patch_weight(std::span<const double> patch_areas, std::span<const double> class_weights, double patch_area);

std::vector<double> patch_weights(const SamplerState& state);

/// n draws with replacement, P(i) = w_i / sum(w). All-zero weights fall back to uniform with a warning.
std::vector<std::size_t> sample_indices(std::span<const double> weights, std::size_t n, std::uint64_t seed);

/// Stream-independent sampler: same (seed, stream) always yields the same draws.
class WeightedSampler {
 public:
  explicit WeightedSampler(std::vector<double> weights);
  std::vector<std::size_t> draw(std::size_t n, std::uint64_t seed) const;
  const std::vector<double>& probabilities() const { return probabilities_; }

 private:
  std::vector<double> cumulative_;
  std::vector<double> probabilities_;
};

/// `patch_id,weight` CSV.
void write_weights_csv(std::ostream& out, std::span<const std::string> patch_ids, std::span<const double> weights);

}  // namespace kongnet::sampler

#endif  // KONGNET_SAMPLER_HPP
