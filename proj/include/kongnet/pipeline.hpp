#ifndef KONGNET_PIPELINE_HPP
#define KONGNET_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kongnet/augment.hpp"
#include "kongnet/core_types.hpp"
#include "kongnet/loss.hpp"
#include "kongnet/model.hpp"
#include "kongnet/postprocess.hpp"
#include "kongnet/preprocess.hpp"

namespace kongnet::pipeline {

enum class Schedule { cosine, cosine_warm_restarts };

std::string to_string(Schedule s);
Schedule schedule_from_string(const std::string& s);

struct TrainConfig {
  std::size_t batch_size = 4;
  std::string optimiser = "adamw";
  double learning_rate = 4e-4;
  double min_learning_rate = 0.0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  Schedule schedule = Schedule::cosine;
  std::size_t epochs = 1;
  /// 0 means ceil(dataset size / batch size).
  std::size_t steps_per_epoch = 0;
  /// Restart period in epochs for cosine_warm_restarts.
  std::size_t restart_epochs = 1;
  std::vector<std::string> augmentations;
  double augment_probability = 0.5;
  bool use_sampler = true;
  std::uint64_t seed = 0;
  loss::LossConfig loss;

  void validate() const;
};

struct Dataset {
  ClassSpec classes;
  std::vector<std::string> ids;
  std::vector<augment::TrainingSample> samples;
  /// Sampler area rows (background + foreground classes, overall output excluded).
  std::vector<std::vector<double>> areas;

  std::size_t size() const { return samples.size(); }
};

/// Builds targets per patch with the class dilation diameters; `overall` appends the union output.
Dataset make_dataset(std::span<const ImagePatch> patches, std::span<const AnnotationSet> annotations,
                     const ClassSpec& classes, preprocess::TargetMode mode, bool overall);

/// Per-patch draw weights; falls back to uniform (with a warning) when a class never occurs.
std::vector<double> dataset_weights(const Dataset& dataset);

double learning_rate_at(const TrainConfig& config, std::size_t step, std::size_t steps_per_epoch);

struct Objective {
  double total = 0.0;
  std::vector<loss::LossReport> reports;  // per sample
};

/// Batch-mean loss; gradients (optional) accumulate the batch mean w.r.t. weights and log-variances.
Objective evaluate_objective(const model::Model& model, std::span<const augment::TrainingSample> batch,
                             const loss::LossConfig& loss, std::span<const double> log_vars = {},
                             std::span<double> weight_grad = {}, std::span<double> log_var_grad = {});

struct LossLogRow {
  std::size_t step = 0;
  double learning_rate = 0.0;
  std::vector<loss::ClassLoss> classes;  // batch means
  double interclass = 0.0;
  double total = 0.0;
};

void write_loss_log(std::ostream& out, std::span<const LossLogRow> rows, const ClassSpec& classes,
                    std::size_t output_classes);

struct TrainResult {
  std::vector<LossLogRow> log;
  std::vector<std::size_t> drawn;  // patch indices in draw order
  model::TrainingState state;
};

/// Runs from `resume.step` (or 0) to epochs * steps_per_epoch, or to `stop_at` when given.
/// Batches, augmentations and the learning rate depend only on (seed, step), so resuming from a saved
/// state continues the uninterrupted run exactly.
TrainResult train(model::Model& model, const Dataset& dataset, const TrainConfig& config,
                  std::optional<model::TrainingState> resume = std::nullopt,
                  std::optional<std::size_t> stop_at = std::nullopt,
                  const std::function<void(const LossLogRow&)>& on_step = {});

struct TileGrid {
  int tile = 0;
  int stride = 0;
  int height = 0;
  int width = 0;
  std::vector<std::pair<int, int>> origins;  // (x0, y0), row-major
};

/// Origins at multiples of stride with the last one clamped to size - tile on each axis.
TileGrid tile_image(int height, int width, int tile, int stride);

enum class TtaMode { none, x4, x16 };

std::string to_string(TtaMode m);
TtaMode tta_from_string(const std::string& s);

/// x4: quarter turns. x16: quarter turns x {identity, hflip} x {identity, vflip}.
std::vector<augment::D4> tta_transforms(TtaMode mode);

/// Mean of the inverse-transformed probability maps.
PredictionMaps tta_forward(const model::Model& model, const ImagePatch& patch, TtaMode mode);

/// Read-only access to a large image.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual int height() const = 0;
  virtual int width() const = 0;
  virtual double mpp() const = 0;
  /// Region inside the image bounds.
  virtual ImagePatch read(int x0, int y0, int width, int height) const = 0;
};

class ArraySource final : public ImageSource {
 public:
  explicit ArraySource(ImagePatch image) : image_(std::move(image)) {}
  int height() const override { return image_.height(); }
  int width() const override { return image_.width(); }
  double mpp() const override { return image_.mpp(); }
  ImagePatch read(int x0, int y0, int width, int height) const override;

 private:
  ImagePatch image_;
};

struct InferConfig {
  int tile = 256;
  int stride = 192;
  TtaMode tta = TtaMode::none;
  std::vector<postprocess::PostprocessConfig> postprocess;  // one per output class
};

/// Tiles the source (zero-padding images smaller than a tile), runs TTA + extraction per tile,
/// shifts to global coordinates and applies per-class NMS across tiles.
std::vector<Detection> infer_large(const ImageSource& source, const model::Model& model, const InferConfig& config);

}  // namespace kongnet::pipeline

#endif  // KONGNET_PIPELINE_HPP
