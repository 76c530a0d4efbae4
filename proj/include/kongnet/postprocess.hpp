#ifndef KONGNET_POSTPROCESS_HPP
#define KONGNET_POSTPROCESS_HPP

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kongnet/core_types.hpp"

namespace kongnet::postprocess {

struct PostprocessConfig {
  /// Weight of the centroid map; the segmentation map gets 1 - centroid_weight when present.
  double centroid_weight = 1.0;
  double threshold = 0.5;
  int min_distance = 11;
  int box_size = 11;
  double overlap_threshold = 0.5;

  void validate() const;

  static PostprocessConfig monkey();
  static PostprocessConfig puma();
  static PostprocessConfig pannuke();
  static PostprocessConfig conic();
  static PostprocessConfig midog();
  /// Looks up one of the names above.
  static PostprocessConfig preset(const std::string& name);

  friend bool operator==(const PostprocessConfig&, const PostprocessConfig&) = default;
};

struct ScoredPoint {
  double x = 0.0;
  double y = 0.0;
  double score = 0.0;

  friend bool operator==(const ScoredPoint&, const ScoredPoint&) = default;
};

/// Score descending, then (y, x) ascending.
bool ranks_before(const ScoredPoint& a, const ScoredPoint& b);

ProbMap combine_maps(const ProbMap& centroid, const std::optional<ProbMap>& seg, double centroid_weight);

/// Local maxima >= threshold (and > 0). A connected plateau of equal values counts once, at the plateau
/// pixel nearest its centroid. Greedy by rank; a peak is dropped when within min_distance (inclusive)
/// of an accepted one.
std::vector<ScoredPoint> peak_local_max(const ProbMap& map, double threshold, int min_distance);

/// IoU of two box_size x box_size boxes centred on a and b.
double box_iou(const ScoredPoint& a, const ScoredPoint& b, int box_size);

/// Greedy keep-highest; a point is suppressed when its IoU with a kept box exceeds overlap_threshold.
/// Output is in rank order.
std::vector<ScoredPoint> nms(std::span<const ScoredPoint> points, int box_size, double overlap_threshold);

/// combine -> peaks -> nms per class. Confidence is the combined-map value at the peak.
std::vector<Detection> extract_class(const ClassMaps& maps, int class_index, const PostprocessConfig& config);
std::vector<Detection> extract_detections(const PredictionMaps& maps, std::span<const PostprocessConfig> per_class);
std::vector<Detection> extract_detections(const PredictionMaps& maps, const PostprocessConfig& config);

/// Per-class NMS over an already-extracted list (used when stitching tiles). Classes never suppress each other.
std::vector<Detection> nms_detections(std::span<const Detection> detections, std::span<const PostprocessConfig> per_class);

}  // namespace kongnet::postprocess

#endif  // KONGNET_POSTPROCESS_HPP
