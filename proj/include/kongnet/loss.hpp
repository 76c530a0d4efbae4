#ifndef KONGNET_LOSS_HPP
#define KONGNET_LOSS_HPP

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kongnet/core_types.hpp"

namespace kongnet::loss {

enum class Weighting { fixed_equal, uncertainty };

std::string to_string(Weighting w);
Weighting weighting_from_string(const std::string& s);

struct LossConfig {
  Weighting weighting = Weighting::fixed_equal;
  double epsilon = 1.0;  // dice/jaccard smoothing
  double alpha = 0.25;
  double gamma = 2.0;
  double contour_weight = 0.5;
  double clamp = 1e-7;  // probabilities clamped to [clamp, 1 - clamp] before logs

  void validate() const;
};

struct LossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-map losses. Each reduces over all N pixels of p and g (same length).
// When `grad` is non-empty, scale * dL/dp is accumulated into it.

double bce(std::span<const double> p, std::span<const double> g, double clamp = 1e-7, std::span<double> grad = {},
           double scale = 1.0);
double dice_loss(std::span<const double> p, std::span<const double> g, double epsilon, std::span<double> grad = {},
                 double scale = 1.0);
/// Soft form: 1 - (sum pg + eps) / (sum p^2 + sum g^2 - sum pg + eps).
double jaccard_loss(std::span<const double> p, std::span<const double> g, double epsilon,
                    std::span<double> grad = {}, double scale = 1.0);
double focal_loss(std::span<const double> p, std::span<const double> g, double alpha, double gamma,
                  double clamp = 1e-7, std::span<double> grad = {}, double scale = 1.0);
/// jaccard + dice + focal.
double centroid_loss(std::span<const double> p, std::span<const double> g, const LossConfig& cfg,
                     std::span<double> grad = {}, double scale = 1.0);

enum class TaskMode { detection_only, multitask };

/// Probability maps of one class; seg/contour are empty in detection-only mode.
struct ClassPrediction {
  std::span<const double> centroid;
  std::span<const double> seg;
  std::span<const double> contour;
};

struct ClassTargetValues {
  std::span<const double> centroid;
  std::span<const double> seg;
  std::span<const double> contour;
};

struct ClassGradient {
  std::span<double> centroid;
  std::span<double> seg;
  std::span<double> contour;
};

struct ClassLoss {
  double centroid = 0.0;
  double seg = 0.0;
  double contour = 0.0;
  double total = 0.0;
};

/// centroid_loss + (bce + dice) on seg + contour_weight * (bce + dice) on contour; detection-only keeps the centroid term.
ClassLoss class_loss(const ClassPrediction& p, const ClassTargetValues& g, TaskMode mode, const LossConfig& cfg,
                     const ClassGradient* grad = nullptr, double scale = 1.0);

/// (1/N) sum_i prod_k p_{k,i}. Fewer than two maps gives 0 (with a one-time warning).
double interclass_exclusion(std::span<const std::span<const double>> maps,
                            std::span<const std::span<double>> grads = {}, double scale = 1.0);

struct TotalLoss {
  double value = 0.0;
  std::vector<double> class_scale;    // d total / d L_k
  std::vector<double> log_var_grad;   // d total / d s_k (uncertainty weighting only)
};

/// fixed_equal: sum L_k + L_inter. uncertainty: sum (exp(-s_k) L_k + s_k) + L_inter.
TotalLoss total_loss(std::span<const double> class_losses, double interclass, Weighting weighting,
                     std::span<const double> log_vars = {});

/// Per-pixel gradient buffers matching a PredictionMaps layout.
struct MapGradients {
  std::vector<std::vector<double>> centroid;
  std::vector<std::vector<double>> seg;
  std::vector<std::vector<double>> contour;
};

struct LossReport {
  std::vector<ClassLoss> classes;
  double interclass = 0.0;
  double total = 0.0;
  std::vector<double> log_var_grad;
};

/// Full objective over all predicted classes. The first `n_exclusive` classes enter the exclusion term
/// (the optional overall-detection class does not).
LossReport compute_loss(const PredictionMaps& prediction, const TargetMaskSet& targets, const LossConfig& cfg,
                        std::size_t n_exclusive, std::span<const double> log_vars = {},
                        MapGradients* grads = nullptr);

}  // namespace kongnet::loss

#endif  // KONGNET_LOSS_HPP
