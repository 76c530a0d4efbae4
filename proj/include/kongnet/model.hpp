#ifndef KONGNET_MODEL_HPP
#define KONGNET_MODEL_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kongnet/core_types.hpp"
#include "kongnet/loss.hpp"
#include "kongnet/tensor.hpp"

namespace kongnet::model {

enum class Variant { full, single_head, det_only };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

/// Per-channel input standardisation: (pixel - mean) / std.
struct Normalisation {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};

  friend bool operator==(const Normalisation&, const Normalisation&) = default;
};

inline constexpr int kPyramidLevels = 5;
using Widths = std::array<int, kPyramidLevels>;

struct ModelConfig {
  Variant variant = Variant::full;
  int n_classes = 1;
  Widths decoder_widths{256, 128, 64, 32, 16};
  std::string backbone = "tiny_cnn";
  Widths encoder_widths{16, 32, 64, 96, 128};
  /// Adds a decoder (or channel group) predicting all classes together.
  bool overall_decoder = false;
  Normalisation normalisation;
  int scse_reduction = 4;
  std::uint64_t init_seed = 0;

  void validate() const;
  /// n_classes plus the optional overall-detection output.
  int output_classes() const { return n_classes + (overall_decoder ? 1 : 0); }
  bool multitask() const { return variant != Variant::det_only; }

  static Widths wide_decoder() { return {512, 256, 128, 64, 32}; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Features at strides 2, 4, 8, 16, 32; index 4 is the deepest.
using Pyramid = std::array<nn::Tape::Var, kPyramidLevels>;

/// Encoder behind a five-level pyramid contract.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual Widths channels() const = 0;
  virtual Pyramid forward(nn::Tape& tape, nn::Tape::Var input) const = 0;
};

/// Known names: "tiny_cnn" (built), "efficientnetv2_l" (recognised, not available in this build).
std::unique_ptr<Backbone> make_backbone(const std::string& name, const Widths& widths, nn::ParameterSet& params);

struct ScseParams {
  nn::ConvParams squeeze;    // C -> C/r, on the pooled vector
  nn::ConvParams excite;     // C/r -> C
  nn::ConvParams spatial;    // C -> 1
};

/// [conv3x3 -> SiLU -> SCSE -> pixel-shuffle(2) -> concat skip -> conv3x3 -> SiLU -> SCSE]
struct DecoderBlockParams {
  nn::ConvParams expand;  // in -> 4 * out
  ScseParams scse_pre;
  nn::ConvParams fuse;    // out + skip -> out
  ScseParams scse_post;
};

ScseParams add_scse(nn::ParameterSet& params, const std::string& name, int channels, int reduction);
DecoderBlockParams add_decoder_block(nn::ParameterSet& params, const std::string& name, int in_channels,
                                     int out_channels, int skip_channels, int reduction);

nn::Tape::Var scse(nn::Tape& tape, nn::Tape::Var x, const ScseParams& p);
/// `skip` may be absent for the last block.
nn::Tape::Var decoder_block(nn::Tape& tape, nn::Tape::Var x, std::optional<nn::Tape::Var> skip,
                            const DecoderBlockParams& p);

/// Sigmoid outputs of one class on a tape. seg/contour are unset for detection-only models.
struct ClassHeads {
  nn::Tape::Var centroid = 0;
  std::optional<nn::Tape::Var> seg;
  std::optional<nn::Tape::Var> contour;
};

class Model {
 public:
  explicit Model(ModelConfig config);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  /// Records a forward pass; H and W must be multiples of 32.
  std::vector<ClassHeads> forward(nn::Tape& tape, const ImagePatch& patch) const;

  /// Evaluation-mode forward returning probability maps.
  PredictionMaps predict(const ImagePatch& patch) const;
  std::vector<PredictionMaps> predict(std::span<const ImagePatch> batch) const;

  /// Normalised C x H x W input tensor.
  nn::Tensor input_tensor(const ImagePatch& patch) const;

  /// Reads tape outputs into PredictionMaps.
  PredictionMaps collect(const nn::Tape& tape, const std::vector<ClassHeads>& heads) const;

 private:
  void initialise();

  ModelConfig config_;
  nn::ParameterSet params_;
  std::unique_ptr<Backbone> backbone_;
  std::vector<std::array<DecoderBlockParams, kPyramidLevels>> decoders_;
  std::vector<nn::ConvParams> heads_;
};

Model build(const ModelConfig& config);
std::size_t count_parameters(const Model& model);

/// Optimiser and uncertainty-weighting state carried for resuming training.
struct TrainingState {
  std::uint64_t step = 0;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::vector<double> log_vars;
  std::vector<double> log_var_m;
  std::vector<double> log_var_v;
};

struct Checkpoint {
  ModelConfig model;
  ClassSpec classes;
  loss::LossConfig loss;
  std::vector<double> weights;
  std::optional<TrainingState> training;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Checkpoint make_checkpoint(const Model& model, const ClassSpec& classes, const loss::LossConfig& loss,
                           std::optional<TrainingState> training = std::nullopt);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Rebuilds the model and installs the stored weights.
Model restore_model(const Checkpoint& checkpoint);

}  // namespace kongnet::model

#endif  // KONGNET_MODEL_HPP
