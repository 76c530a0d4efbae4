#ifndef KONGNET_TESTKIT_HPP
#define KONGNET_TESTKIT_HPP

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "kongnet/core_types.hpp"

namespace kongnet::testkit {

using Colour = std::array<double, 3>;

struct SynthSpec {
  int size = 64;
  double mpp = 0.5;
  int n_classes = 3;
  int min_per_class = 1;
  int max_per_class = 3;
  double min_radius = 3.0;
  double max_radius = 5.0;
  /// Per-class radius multiplier (size signature); empty means 1 for every class.
  std::vector<double> radius_scale;
  /// Per-class nucleus colour in [0,1]; empty picks well-separated hues.
  std::vector<Colour> colours;
  Colour background{0.92, 0.86, 0.90};
  double noise = 0.03;
  /// Minimum free gap in pixels between nuclei.
  double gap = 2.0;
  int max_attempts = 2000;

  void validate() const;

  /// Distinct hues, equal radii.
  static SynthSpec separable(int n_classes = 3);
  /// Near-identical colours; classes differ mainly by nucleus size.
  static SynthSpec confusable(int n_classes = 3);
};

struct InfeasibleDensity : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SynthSample {
  ImagePatch image;
  AnnotationSet annotation;
};

/// Disks at integer centres, non-overlapping by rejection sampling. Deterministic per seed.
SynthSample synth_patch(const SynthSpec& spec, std::uint64_t seed);

// ---- oracles: straightforward reference implementations, independent of the library code ----

/// Maximum TP over all one-to-one assignments with distance <= radius. At most 8 points per side.
std::size_t oracle_match(std::span<const Detection> preds, std::span<const Centroid> gts, double radius);

struct OracleLosses {
  double bce = 0.0;
  double dice = 0.0;
  double jaccard = 0.0;
  double focal = 0.0;
  double centroid = 0.0;  // jaccard + dice + focal
};

OracleLosses oracle_scalar_losses(std::span<const double> p, std::span<const double> g, double epsilon = 1.0,
                                  double alpha = 0.25, double gamma = 2.0, double clamp = 1e-7);
/// Mean of prod over maps, pixel by pixel.
double oracle_interclass(const std::vector<std::vector<double>>& maps);

/// Pixels whose 3x3 neighbourhood (inside the image) holds a different label. At most 64 x 64.
Mask oracle_boundary(const LabelMap& labels);
/// Pixels whose centre lies within diameter / 2 of (cx, cy).
Mask oracle_disk(int cx, int cy, int diameter, int height, int width);

struct OraclePoint {
  double x = 0.0;
  double y = 0.0;
  double score = 0.0;
};

/// Repeatedly takes the best remaining point (score desc, then (y, x) asc) and deletes every point
/// within min_distance of it.
std::vector<OraclePoint> oracle_distance_suppression(std::vector<OraclePoint> points, double min_distance);
/// Same elimination loop with box overlap: deletes points whose box IoU with the taken one exceeds threshold.
std::vector<OraclePoint> oracle_box_suppression(std::vector<OraclePoint> points, int box_size, double threshold);
/// Pixels >= threshold, > 0, and strictly greater than all 8 neighbours.
std::vector<OraclePoint> oracle_strict_maxima(const ProbMap& map, double threshold);

/// Best sensitivity over all confidence thresholds whose FP count per mm^2 stays <= rate (exhaustive).
double oracle_froc_sensitivity(std::span<const Detection> preds, std::span<const Centroid> gts, double radius,
                               double area_mm2, double rate);

}  // namespace kongnet::testkit

#endif  // KONGNET_TESTKIT_HPP
