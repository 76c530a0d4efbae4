#ifndef KONGNET_PREPROCESS_HPP
#define KONGNET_PREPROCESS_HPP

#include <span>
#include <utility>
#include <vector>

#include "kongnet/core_types.hpp"

namespace kongnet::preprocess {

/// Circular structuring element. Pixel offset (dx, dy) is inside iff dx^2 + dy^2 <= (diameter / 2)^2.
class DilationKernel {
 public:
  explicit DilationKernel(int diameter);

  int diameter() const { return diameter_; }
  const std::vector<std::pair<int, int>>& offsets() const { return offsets_; }
  std::size_t area() const { return offsets_.size(); }

 private:
  int diameter_;
  std::vector<std::pair<int, int>> offsets_;
};

/// 5 px for mpp in [0.4, 0.6], 11 px for mpp in [0.2, 0.3]; throws outside those bands.
int default_dilation_diameter(double mpp);

struct InstanceCentroid {
  int x = 0;
  int y = 0;
  int label = 0;

  friend bool operator==(const InstanceCentroid&, const InstanceCentroid&) = default;
};

/// Centre of mass per positive label, rounded half away from zero; sorted by label.
std::vector<InstanceCentroid> centroid_from_instance(const LabelMap& instances);

/// Sobel X/Y over the label map (replicate border), squared and summed, binarised at > 0.
Mask contour_from_instance(const LabelMap& instances);

Mask dilate_centroids(std::span<const Centroid> points, const DilationKernel& kernel, int height, int width);

enum class TargetMode { detection_only, multitask };

struct TargetError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Per-class centroid/nucleus/contour targets. Multitask mode requires an instance mask.
/// When the annotation lists no centroids but has an instance mask, centroids come from the mask.
TargetMaskSet build_target_set(const AnnotationSet& annotation, const ClassSpec& classes, int height, int width,
                               TargetMode mode);

/// Appends an "overall" class whose masks are the union over all existing classes.
void append_overall_target(TargetMaskSet& targets);

}  // namespace kongnet::preprocess

#endif  // KONGNET_PREPROCESS_HPP
