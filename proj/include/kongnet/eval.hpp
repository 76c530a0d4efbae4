#ifndef KONGNET_EVAL_HPP
#define KONGNET_EVAL_HPP

#include <array>
#include <span>
#include <stdexcept>
#include <vector>

#include "kongnet/core_types.hpp"

namespace kongnet::eval {

struct MatchPair {
  std::size_t pred = 0;
  std::size_t gt = 0;
  double distance = 0.0;

  friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

struct MatchResult {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::vector<MatchPair> pairs;  // in matching order
};

/// Greedy one-to-one matching. Predictions go in order of confidence desc, then (y, x) asc, then index;
/// each claims the nearest unmatched gt with distance <= radius (ties: gt (y, x), then index).
MatchResult match_points(std::span<const Detection> preds, std::span<const Centroid> gts, double radius);

struct F1Score {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// 0/0 ratios are 0.
F1Score f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);

/// Counts pooled over images, then scored.
F1Score f1_global(std::span<const MatchResult> per_image);

/// Mean of per-image F1. Images with TP + FP + FN = 0 are skipped; no scored image gives 0.
double f1_per_image_avg(std::span<const MatchResult> per_image);

struct ClassConfusion {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  ClassConfusion& operator+=(const ClassConfusion& o);
};

/// Per-class confusion among detection-matched pairs only.
std::vector<ClassConfusion> classification_confusion(const MatchResult& detection, std::span<const Detection> preds,
                                                     std::span<const Centroid> gts, std::size_t n_classes);

struct PanNukeScore {
  F1Score detection;
  std::vector<F1Score> classes;
};

/// Detection F1_d plus per-class F1_c, whose denominators also carry the detection FP_d and FN_d.
PanNukeScore pannuke_f1(const MatchResult& detection, std::span<const ClassConfusion> confusion);

struct FrocPoint {
  double threshold = 0.0;
  double fp_per_mm2 = 0.0;
  double sensitivity = 0.0;
};

struct FrocCurve {
  /// Sweep order: the first point is the empty operating point above every confidence.
  std::vector<FrocPoint> points;
  double area_mm2 = 0.0;
  std::size_t n_gt = 0;
};

struct FrocResult {
  FrocCurve curve;
  std::vector<double> fp_rates;
  std::vector<double> sensitivities;  // interpolated at fp_rates
  double score = 0.0;
};

struct FrocImage {
  std::span<const Detection> preds;
  std::span<const Centroid> gts;
};

inline constexpr std::array<double, 5> kDefaultFpRates{10.0, 20.0, 50.0, 100.0, 200.0};

/// Piecewise-linear interpolation with np.interp conventions (clamped ends, rightmost value on tied x).
double interpolate(std::span<const double> xs, std::span<const double> ys, double x);

/// Pooled over images: threshold sweep over unique confidences, matching at margin_um / mpp pixels.
FrocResult froc(std::span<const FrocImage> images, double margin_um, double mpp, double area_mm2,
                std::span<const double> fp_rates = kDefaultFpRates);
FrocResult froc(std::span<const Detection> preds, std::span<const Centroid> gts, double margin_um, double mpp,
                double area_mm2, std::span<const double> fp_rates = kDefaultFpRates);

}  // namespace kongnet::eval

#endif  // KONGNET_EVAL_HPP
