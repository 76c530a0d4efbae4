#include "kongnet/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"

namespace kongnet::model {

using nn::Tape;
using Var = nn::Tape::Var;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::single_head: return "single_head";
    case Variant::det_only: return "det_only";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "single_head") return Variant::single_head;
  if (s == "det_only") return Variant::det_only;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

void ModelConfig::validate() const {
  if (n_classes < 1) throw std::invalid_argument("ModelConfig: n_classes must be >= 1");
  for (int i = 0; i < kPyramidLevels; ++i) {
    if (decoder_widths[static_cast<std::size_t>(i)] <= 0 || encoder_widths[static_cast<std::size_t>(i)] <= 0) {
      throw std::invalid_argument("ModelConfig: widths must be positive");
    }
    if (i > 0 && decoder_widths[static_cast<std::size_t>(i)] > decoder_widths[static_cast<std::size_t>(i - 1)]) {
      throw std::invalid_argument("ModelConfig: decoder widths must be non-increasing");
    }
  }
  if (scse_reduction < 1) throw std::invalid_argument("ModelConfig: scse_reduction must be >= 1");
  for (double s : normalisation.std) {
    if (!(s > 0.0)) throw std::invalid_argument("ModelConfig: normalisation std must be > 0");
  }
}

// ---- backbone ----

namespace {

class TinyCnn final : public Backbone {
 public:
  TinyCnn(const Widths& widths, nn::ParameterSet& params) : widths_(widths) {
    int in = 3;
    for (int level = 0; level < kPyramidLevels; ++level) {
      const int out = widths[static_cast<std::size_t>(level)];
      const std::string name = "encoder.level" + std::to_string(level);
      down_[static_cast<std::size_t>(level)] = nn::add_conv(params, name + ".down", in, out, 3, 2);
      refine_[static_cast<std::size_t>(level)] = nn::add_conv(params, name + ".refine", out, out, 3, 1);
      in = out;
    }
  }

  Widths channels() const override { return widths_; }

  Pyramid forward(Tape& tape, Var input) const override {
    Pyramid out{};
    Var x = input;
    for (std::size_t level = 0; level < kPyramidLevels; ++level) {
      x = tape.silu(tape.conv2d(x, down_[level]));
      x = tape.silu(tape.conv2d(x, refine_[level]));
      out[level] = x;
    }
    return out;
  }

 private:
  Widths widths_;
  std::array<nn::ConvParams, kPyramidLevels> down_{};
  std::array<nn::ConvParams, kPyramidLevels> refine_{};
};

// Platform-independent normal draws (Box-Muller over raw 64-bit output).
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : rng_(seed) {}
  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::unique_ptr<Backbone> make_backbone(const std::string& name, const Widths& widths, nn::ParameterSet& params) {
  if (name == "tiny_cnn") return std::make_unique<TinyCnn>(widths, params);
  if (name == "efficientnetv2_l") {
    throw std::invalid_argument("backbone 'efficientnetv2_l' is not available in this build; use 'tiny_cnn'");
  }
  throw std::invalid_argument("unknown backbone '" + name + "'");
}

// ---- decoder ----

ScseParams add_scse(nn::ParameterSet& params, const std::string& name, int channels, int reduction) {
  const int hidden = std::max(1, channels / reduction);
  return {nn::add_conv(params, name + ".cse_squeeze", channels, hidden, 1),
          nn::add_conv(params, name + ".cse_excite", hidden, channels, 1),
          nn::add_conv(params, name + ".sse", channels, 1, 1)};
}

DecoderBlockParams add_decoder_block(nn::ParameterSet& params, const std::string& name, int in_channels,
                                     int out_channels, int skip_channels, int reduction) {
  DecoderBlockParams p;
  p.expand = nn::add_conv(params, name + ".expand", in_channels, 4 * out_channels, 3);
  p.scse_pre = add_scse(params, name + ".scse_pre", 4 * out_channels, reduction);
  p.fuse = nn::add_conv(params, name + ".fuse", out_channels + skip_channels, out_channels, 3);
  p.scse_post = add_scse(params, name + ".scse_post", out_channels, reduction);
  return p;
}

Var scse(Tape& tape, Var x, const ScseParams& p) {
  Var pooled = tape.global_avg_pool(x);
  Var gate = tape.sigmoid(tape.conv2d(tape.silu(tape.conv2d(pooled, p.squeeze)), p.excite));
  Var channel = tape.scale_channels(x, gate);
  Var spatial = tape.scale_spatial(x, tape.sigmoid(tape.conv2d(x, p.spatial)));
  return tape.add(channel, spatial);
}

Var decoder_block(Tape& tape, Var x, std::optional<Var> skip, const DecoderBlockParams& p) {
  Var y = scse(tape, tape.silu(tape.conv2d(x, p.expand)), p.scse_pre);
  y = tape.pixel_shuffle(y, 2);
  if (skip) y = tape.concat(y, *skip);
  return scse(tape, tape.silu(tape.conv2d(y, p.fuse)), p.scse_post);
}

// ---- model ----

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  backbone_ = make_backbone(config_.backbone, config_.encoder_widths, params_);
  const Widths enc = backbone_->channels();
  const int out_classes = config_.output_classes();
  const int n_decoders = config_.variant == Variant::full ? out_classes : 1;

  for (int d = 0; d < n_decoders; ++d) {
    std::array<DecoderBlockParams, kPyramidLevels> blocks{};
    int in = enc[kPyramidLevels - 1];
    for (int b = 0; b < kPyramidLevels; ++b) {
      const int out = config_.decoder_widths[static_cast<std::size_t>(b)];
      // Block b upsamples to stride 2^(4-b); its skip is the encoder level at that stride.
      const int skip = b < kPyramidLevels - 1 ? enc[static_cast<std::size_t>(kPyramidLevels - 2 - b)] : 0;
      blocks[static_cast<std::size_t>(b)] = add_decoder_block(
          params_, "decoder" + std::to_string(d) + ".block" + std::to_string(b), in, out, skip, config_.scse_reduction);
      in = out;
    }
    decoders_.push_back(blocks);
  }

  const int last = config_.decoder_widths[kPyramidLevels - 1];
  switch (config_.variant) {
    case Variant::full:
      for (int d = 0; d < n_decoders; ++d) {
        heads_.push_back(nn::add_conv(params_, "decoder" + std::to_string(d) + ".head", last, 3, 1));
      }
      break;
    case Variant::single_head:
      heads_.push_back(nn::add_conv(params_, "decoder0.head", last, 3 * out_classes, 1));
      break;
    case Variant::det_only:
      heads_.push_back(nn::add_conv(params_, "decoder0.head", last, out_classes, 1));
      break;
  }
  initialise();
}

void Model::initialise() {
  NormalStream normal(config_.init_seed);
  const double prior_bias = std::log(0.1 / 0.9);
  for (const auto& e : params_.entries()) {
    auto values = params_.values().subspan(e.offset, e.size);
    if (ends_with(e.name, ".weight")) {
      const double fan_in = static_cast<double>(e.shape[1]) * e.shape[2] * e.shape[3];
      const double scale = std::sqrt(2.0 / fan_in);
      for (double& v : values) v = normal.next() * scale;
    } else if (ends_with(e.name, ".head.bias")) {
      std::fill(values.begin(), values.end(), prior_bias);
    } else {
      std::fill(values.begin(), values.end(), 0.0);
    }
  }
}

nn::Tensor Model::input_tensor(const ImagePatch& patch) const {
  if (patch.height() % 32 != 0 || patch.width() % 32 != 0) {
    throw nn::ShapeError("model input must have H and W divisible by 32, got " + std::to_string(patch.height()) + "x" +
                         std::to_string(patch.width()));
  }
  nn::Tensor t(3, patch.height(), patch.width());
  const auto& norm = config_.normalisation;
  for (int c = 0; c < 3; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    for (int y = 0; y < patch.height(); ++y) {
      for (int x = 0; x < patch.width(); ++x) t.at(c, y, x) = (patch.at(x, y, c) - norm.mean[ci]) / norm.std[ci];
    }
  }
  return t;
}

std::vector<ClassHeads> Model::forward(Tape& tape, const ImagePatch& patch) const {
  Var input = tape.input(input_tensor(patch));
  const Pyramid pyramid = backbone_->forward(tape, input);

  std::vector<Var> decoded;
  for (const auto& blocks : decoders_) {
    Var x = pyramid[kPyramidLevels - 1];
    for (int b = 0; b < kPyramidLevels; ++b) {
      std::optional<Var> skip;
      if (b < kPyramidLevels - 1) skip = pyramid[static_cast<std::size_t>(kPyramidLevels - 2 - b)];
      x = decoder_block(tape, x, skip, blocks[static_cast<std::size_t>(b)]);
    }
    decoded.push_back(x);
  }

  const int out_classes = config_.output_classes();
  std::vector<ClassHeads> heads(static_cast<std::size_t>(out_classes));
  switch (config_.variant) {
    case Variant::full:
      for (std::size_t k = 0; k < heads.size(); ++k) {
        Var maps = tape.sigmoid(tape.conv2d(decoded[k], heads_[k]));
        heads[k].centroid = tape.slice_channels(maps, 0, 1);
        heads[k].seg = tape.slice_channels(maps, 1, 1);
        heads[k].contour = tape.slice_channels(maps, 2, 1);
      }
      break;
    case Variant::single_head: {
      Var maps = tape.sigmoid(tape.conv2d(decoded[0], heads_[0]));
      for (int k = 0; k < out_classes; ++k) {
        auto& h = heads[static_cast<std::size_t>(k)];
        h.centroid = tape.slice_channels(maps, 3 * k, 1);
        h.seg = tape.slice_channels(maps, 3 * k + 1, 1);
        h.contour = tape.slice_channels(maps, 3 * k + 2, 1);
      }
      break;
    }
    case Variant::det_only: {
      Var maps = tape.sigmoid(tape.conv2d(decoded[0], heads_[0]));
      for (int k = 0; k < out_classes; ++k) heads[static_cast<std::size_t>(k)].centroid = tape.slice_channels(maps, k, 1);
      break;
    }
  }
  return heads;
}

PredictionMaps Model::collect(const Tape& tape, const std::vector<ClassHeads>& heads) const {
  auto to_map = [&](Var v) {
    const nn::Tensor& t = tape.value(v);
    ProbMap m(t.height, t.width);
    std::copy(t.data.begin(), t.data.end(), m.values().begin());
    return m;
  };
  PredictionMaps out;
  const nn::Tensor& first = tape.value(heads.front().centroid);
  out.height = first.height;
  out.width = first.width;
  for (const auto& h : heads) {
    ClassMaps c;
    c.centroid = to_map(h.centroid);
    if (h.seg) c.seg = to_map(*h.seg);
    if (h.contour) c.contour = to_map(*h.contour);
    out.classes.push_back(std::move(c));
  }
  return out;
}

PredictionMaps Model::predict(const ImagePatch& patch) const {
  Tape tape(params_.values());
  const auto heads = forward(tape, patch);
  return collect(tape, heads);
}

std::vector<PredictionMaps> Model::predict(std::span<const ImagePatch> batch) const {
  std::vector<PredictionMaps> out;
  out.reserve(batch.size());
  for (const auto& p : batch) out.push_back(predict(p));
  return out;
}

Model build(const ModelConfig& config) { return Model(config); }

std::size_t count_parameters(const Model& model) { return model.parameter_count(); }

// ---- checkpoints ----

namespace {

using nlohmann::json;

constexpr char kMagic[] = "KONGNET-CKPT\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

json config_to_json(const ModelConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"n_classes", c.n_classes},
          {"decoder_widths", c.decoder_widths},
          {"backbone", c.backbone},
          {"encoder_widths", c.encoder_widths},
          {"overall_decoder", c.overall_decoder},
          {"normalisation", {{"mean", c.normalisation.mean}, {"std", c.normalisation.std}}},
          {"scse_reduction", c.scse_reduction},
          {"init_seed", c.init_seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.variant = variant_from_string(j.at("variant").get<std::string>());
  c.n_classes = j.at("n_classes").get<int>();
  c.decoder_widths = j.at("decoder_widths").get<Widths>();
  c.backbone = j.at("backbone").get<std::string>();
  c.encoder_widths = j.at("encoder_widths").get<Widths>();
  c.overall_decoder = j.at("overall_decoder").get<bool>();
  c.normalisation.mean = j.at("normalisation").at("mean").get<std::array<double, 3>>();
  c.normalisation.std = j.at("normalisation").at("std").get<std::array<double, 3>>();
  c.scse_reduction = j.at("scse_reduction").get<int>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

void write_array(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_array(std::ifstream& in, std::size_t n) {
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw CheckpointError("checkpoint truncated");
  return v;
}

}  // namespace

Checkpoint make_checkpoint(const Model& model, const ClassSpec& classes, const loss::LossConfig& loss,
                           std::optional<TrainingState> training) {
  Checkpoint c;
  c.model = model.config();
  c.classes = classes;
  c.loss = loss;
  c.weights.assign(model.parameters().values().begin(), model.parameters().values().end());
  c.training = std::move(training);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json header;
  header["model"] = config_to_json(ckpt.model);
  header["classes"] = {{"names", ckpt.classes.names},
                       {"dilation_diameters", ckpt.classes.dilation_diameters},
                       {"match_radii", ckpt.classes.match_radii}};
  header["loss"] = {{"weighting", loss::to_string(ckpt.loss.weighting)},
                    {"epsilon", ckpt.loss.epsilon},
                    {"alpha", ckpt.loss.alpha},
                    {"gamma", ckpt.loss.gamma},
                    {"contour_weight", ckpt.loss.contour_weight},
                    {"clamp", ckpt.loss.clamp}};
  std::vector<const std::vector<double>*> arrays{&ckpt.weights};
  json layout = json::array({{{"name", "weights"}, {"count", ckpt.weights.size()}}});
  if (ckpt.training) {
    const auto& t = *ckpt.training;
    header["training"] = {{"step", t.step}};
    const std::pair<const char*, const std::vector<double>*> extra[] = {
        {"adam_m", &t.adam_m}, {"adam_v", &t.adam_v}, {"log_vars", &t.log_vars},
        {"log_var_m", &t.log_var_m}, {"log_var_v", &t.log_var_v}};
    for (const auto& [name, vec] : extra) {
      layout.push_back({{"name", name}, {"count", vec->size()}});
      arrays.push_back(vec);
    }
  }
  header["arrays"] = layout;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic, static_cast<std::streamsize>(kMagicLen));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* a : arrays) write_array(out, *a);
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[kMagicLen];
  in.read(magic, static_cast<std::streamsize>(kMagicLen));
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0) throw CheckpointError(path.string() + " is not a checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ull << 30)) throw CheckpointError("checkpoint header corrupt");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("checkpoint header truncated");

  Checkpoint c;
  try {
    const json header = json::parse(text);
    c.model = config_from_json(header.at("model"));
    const auto& cls = header.at("classes");
    c.classes.names = cls.at("names").get<std::vector<std::string>>();
    c.classes.dilation_diameters = cls.at("dilation_diameters").get<std::vector<int>>();
    c.classes.match_radii = cls.at("match_radii").get<std::vector<double>>();
    const auto& l = header.at("loss");
    c.loss.weighting = loss::weighting_from_string(l.at("weighting").get<std::string>());
    c.loss.epsilon = l.at("epsilon").get<double>();
    c.loss.alpha = l.at("alpha").get<double>();
    c.loss.gamma = l.at("gamma").get<double>();
    c.loss.contour_weight = l.at("contour_weight").get<double>();
    c.loss.clamp = l.at("clamp").get<double>();

    std::map<std::string, std::vector<double>> arrays;
    for (const auto& a : header.at("arrays")) {
      arrays[a.at("name").get<std::string>()] = read_array(in, a.at("count").get<std::size_t>());
    }
    if (!arrays.count("weights")) throw CheckpointError("checkpoint lacks weights");
    c.weights = std::move(arrays["weights"]);
    if (header.contains("training")) {
      TrainingState t;
      t.step = header.at("training").at("step").get<std::uint64_t>();
      t.adam_m = std::move(arrays.at("adam_m"));
      t.adam_v = std::move(arrays.at("adam_v"));
      t.log_vars = std::move(arrays.at("log_vars"));
      t.log_var_m = std::move(arrays.at("log_var_m"));
      t.log_var_v = std::move(arrays.at("log_var_v"));
      c.training = std::move(t);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header incomplete: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw CheckpointError(std::string("checkpoint missing array: ") + e.what());
  }
  c.model.validate();
  c.classes.validate();
  c.loss.validate();
  if (static_cast<int>(c.classes.size()) != c.model.n_classes) {
    throw CheckpointError("checkpoint class list does not match model n_classes");
  }
  return c;
}

Model restore_model(const Checkpoint& checkpoint) {
  Model m(checkpoint.model);
  if (checkpoint.weights.size() != m.parameter_count()) {
    throw CheckpointError("checkpoint has " + std::to_string(checkpoint.weights.size()) + " weights, model needs " +
                          std::to_string(m.parameter_count()));
  }
  std::copy(checkpoint.weights.begin(), checkpoint.weights.end(), m.parameters().values().begin());
  return m;
}

}  // namespace kongnet::model
