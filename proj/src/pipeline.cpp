#include "kongnet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <ostream>
#include <random>

#include "kongnet/io.hpp"
#include "kongnet/sampler.hpp"

namespace kongnet::pipeline {

std::string to_string(Schedule s) { return s == Schedule::cosine ? "cosine" : "cosine_warm_restarts"; }

Schedule schedule_from_string(const std::string& s) {
  if (s == "cosine") return Schedule::cosine;
  if (s == "cosine_warm_restarts") return Schedule::cosine_warm_restarts;
  throw std::invalid_argument("unknown schedule '" + s + "'");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be > 0");
  if (optimiser != "adamw") throw std::invalid_argument("TrainConfig: only the 'adamw' optimiser is available");
  if (!(learning_rate > 0.0) || min_learning_rate < 0.0 || min_learning_rate > learning_rate) {
    throw std::invalid_argument("TrainConfig: need 0 <= min_learning_rate <= learning_rate, learning_rate > 0");
  }
  if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  if (epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be > 0");
  if (schedule == Schedule::cosine_warm_restarts && restart_epochs == 0) {
    throw std::invalid_argument("TrainConfig: restart_epochs must be > 0");
  }
  loss.validate();
  augment::Augmenter(augmentations, augment_probability);
}

Dataset make_dataset(std::span<const ImagePatch> patches, std::span<const AnnotationSet> annotations,
                     const ClassSpec& classes, preprocess::TargetMode mode, bool overall) {
  if (patches.size() != annotations.size()) throw std::invalid_argument("make_dataset: patch/annotation count differs");
  classes.validate();
  Dataset d;
  d.classes = classes;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto violations = validate_annotation(annotations[i], patches[i], classes.size());
    if (!violations.empty()) {
      throw std::invalid_argument("annotation for patch '" + patches[i].id() + "': " + violations.front().message);
    }
    auto targets =
        preprocess::build_target_set(annotations[i], classes, patches[i].height(), patches[i].width(), mode);
    d.areas.push_back(sampler::patch_areas_from_targets(targets));
    if (overall) preprocess::append_overall_target(targets);
    d.ids.push_back(patches[i].id().empty() ? "patch" + std::to_string(i) : patches[i].id());
    d.samples.push_back({patches[i], std::move(targets)});
  }
  return d;
}

std::vector<double> dataset_weights(const Dataset& dataset) {
  sampler::SamplerState state;
  state.areas = dataset.areas;
  if (!dataset.samples.empty()) {
    const auto& t = dataset.samples.front().targets;
    state.patch_area = static_cast<double>(t.height) * t.width;
  }
  try {
    return sampler::patch_weights(state);
  } catch (const sampler::DegenerateClass& e) {
    std::cerr << "warning: " << e.what() << "; sampling uniformly\n";
    return std::vector<double>(dataset.size(), 1.0);
  }
}

double learning_rate_at(const TrainConfig& c, std::size_t step, std::size_t steps_per_epoch) {
  std::size_t period = c.epochs * steps_per_epoch;
  std::size_t t = step;
  if (c.schedule == Schedule::cosine_warm_restarts) {
    period = c.restart_epochs * steps_per_epoch;
    t = step % period;
  }
  const double frac = period == 0 ? 0.0 : static_cast<double>(t) / static_cast<double>(period);
  return c.min_learning_rate + (c.learning_rate - c.min_learning_rate) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

Objective evaluate_objective(const model::Model& model, std::span<const augment::TrainingSample> batch,
                             const loss::LossConfig& loss, std::span<const double> log_vars,
                             std::span<double> weight_grad, std::span<double> log_var_grad) {
  Objective obj;
  const double inv = 1.0 / static_cast<double>(batch.size());
  const auto n_exclusive = static_cast<std::size_t>(model.config().n_classes);
  for (const auto& sample : batch) {
    nn::Tape tape(model.parameters().values());
    const auto heads = model.forward(tape, sample.image);
    const PredictionMaps maps = model.collect(tape, heads);
    loss::MapGradients g;
    const bool want = !weight_grad.empty();
    auto report = loss::compute_loss(maps, sample.targets, loss, n_exclusive, log_vars, want ? &g : nullptr);
    obj.total += report.total * inv;
    if (!log_var_grad.empty()) {
      for (std::size_t k = 0; k < report.log_var_grad.size(); ++k) log_var_grad[k] += report.log_var_grad[k] * inv;
    }
    if (want) {
      auto seed = [&](nn::Tape::Var v, const std::vector<double>& src) {
        auto& dst = tape.grad(v).data;
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i] * inv;
      };
      for (std::size_t k = 0; k < heads.size(); ++k) {
        seed(heads[k].centroid, g.centroid[k]);
        if (heads[k].seg && !g.seg[k].empty()) seed(*heads[k].seg, g.seg[k]);
        if (heads[k].contour && !g.contour[k].empty()) seed(*heads[k].contour, g.contour[k]);
      }
      tape.backward(weight_grad);
    }
    obj.reports.push_back(std::move(report));
  }
  return obj;
}

void write_loss_log(std::ostream& out, std::span<const LossLogRow> rows, const ClassSpec& classes,
                    std::size_t output_classes) {
  auto name = [&](std::size_t k) { return k < classes.size() ? classes.names[k] : std::string("overall"); };
  out << "step,learning_rate";
  for (std::size_t k = 0; k < output_classes; ++k) {
    out << ',' << name(k) << "_centroid," << name(k) << "_seg," << name(k) << "_contour";
  }
  out << ",interclass,total\n";
  for (const auto& r : rows) {
    out << r.step << ',' << io::format_number(r.learning_rate);
    for (const auto& c : r.classes) {
      out << ',' << io::format_number(c.centroid) << ',' << io::format_number(c.seg) << ','
          << io::format_number(c.contour);
    }
    out << ',' << io::format_number(r.interclass) << ',' << io::format_number(r.total) << '\n';
  }
}

namespace {

std::mt19937_64 step_rng(std::uint64_t seed, std::size_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(static_cast<std::uint64_t>(step) >> 32)};
  return std::mt19937_64(seq);
}

void adamw(std::span<double> params, std::span<const double> grad, std::vector<double>& m, std::vector<double>& v,
           std::size_t t, double lr, double weight_decay, const TrainConfig& c) {
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
    params[i] *= 1.0 - lr * weight_decay;
    params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.adam_epsilon);
  }
}

}  // namespace

TrainResult train(model::Model& model, const Dataset& dataset, const TrainConfig& config,
                  std::optional<model::TrainingState> resume, std::optional<std::size_t> stop_at,
                  const std::function<void(const LossLogRow&)>& on_step) {
  config.validate();
  if (dataset.size() == 0) throw std::invalid_argument("train: empty dataset");
  const auto n_out = static_cast<std::size_t>(model.config().output_classes());
  for (const auto& s : dataset.samples) {
    if (s.targets.classes.size() != n_out) {
      throw std::invalid_argument("train: dataset has " + std::to_string(s.targets.classes.size()) +
                                  " target classes, model outputs " + std::to_string(n_out));
    }
    if (model.config().multitask() && !s.targets.has_segmentation()) {
      throw std::invalid_argument("train: multitask model needs segmentation targets");
    }
  }

  const std::size_t spe = config.steps_per_epoch
                              ? config.steps_per_epoch
                              : (dataset.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total = config.epochs * spe;
  const std::size_t end = stop_at ? std::min(*stop_at, total) : total;
  const std::size_t n_params = model.parameter_count();

  TrainResult result;
  model::TrainingState& st = result.state;
  if (resume) {
    st = std::move(*resume);
    if (st.adam_m.size() != n_params || st.adam_v.size() != n_params || st.log_vars.size() != n_out) {
      throw std::invalid_argument("train: resume state does not match the model");
    }
  } else {
    st.adam_m.assign(n_params, 0.0);
    st.adam_v.assign(n_params, 0.0);
    st.log_vars.assign(n_out, 0.0);
    st.log_var_m.assign(n_out, 0.0);
    st.log_var_v.assign(n_out, 0.0);
  }

  const sampler::WeightedSampler draw(config.use_sampler ? dataset_weights(dataset)
                                                         : std::vector<double>(dataset.size(), 1.0));
  const augment::Augmenter augmenter(config.augmentations, config.augment_probability);
  const bool uncertainty = config.loss.weighting == loss::Weighting::uncertainty;

  std::vector<double> grad(n_params);
  std::vector<double> lv_grad(n_out);
  for (std::size_t step = st.step; step < end; ++step) {
    auto rng = step_rng(config.seed, step);
    const auto indices = draw.draw(config.batch_size, rng());
    std::vector<augment::TrainingSample> batch;
    for (std::size_t i : indices) {
      batch.push_back(dataset.samples[i]);
      augmenter.apply(batch.back(), rng);
      result.drawn.push_back(i);
    }

    std::fill(grad.begin(), grad.end(), 0.0);
    std::fill(lv_grad.begin(), lv_grad.end(), 0.0);
    const auto obj = evaluate_objective(model, batch, config.loss, uncertainty ? std::span<const double>(st.log_vars)
                                                                              : std::span<const double>{},
                                        grad, lv_grad);

    const double lr = learning_rate_at(config, step, spe);
    adamw(model.parameters().values(), grad, st.adam_m, st.adam_v, step + 1, lr, config.weight_decay, config);
    if (uncertainty) adamw(st.log_vars, lv_grad, st.log_var_m, st.log_var_v, step + 1, lr, 0.0, config);
    st.step = step + 1;

    LossLogRow row;
    row.step = step;
    row.learning_rate = lr;
    row.total = obj.total;
    row.classes.assign(n_out, {});
    const double inv = 1.0 / static_cast<double>(obj.reports.size());
    for (const auto& r : obj.reports) {
      row.interclass += r.interclass * inv;
      for (std::size_t k = 0; k < n_out; ++k) {
        row.classes[k].centroid += r.classes[k].centroid * inv;
        row.classes[k].seg += r.classes[k].seg * inv;
        row.classes[k].contour += r.classes[k].contour * inv;
        row.classes[k].total += r.classes[k].total * inv;
      }
    }
    if (on_step) on_step(row);
    result.log.push_back(std::move(row));
  }
  return result;
}

TileGrid tile_image(int height, int width, int tile, int stride) {
  if (tile <= 0 || stride <= 0) throw std::invalid_argument("tile_image: tile and stride must be positive");
  if (stride > tile) throw std::invalid_argument("tile_image: stride must not exceed tile");
  if (tile > height || tile > width) throw std::invalid_argument("tile_image: tile larger than image");
  auto axis = [&](int length) {
    std::vector<int> o;
    for (int p = 0;; p += stride) {
      if (p + tile >= length) {
        o.push_back(length - tile);
        break;
      }
      o.push_back(p);
    }
    return o;
  };
  TileGrid g{tile, stride, height, width, {}};
  const auto ys = axis(height);
  const auto xs = axis(width);
  for (int y : ys)
    for (int x : xs) g.origins.emplace_back(x, y);
  return g;
}

std::string to_string(TtaMode m) {
  switch (m) {
    case TtaMode::none: return "none";
    case TtaMode::x4: return "x4";
    case TtaMode::x16: return "x16";
  }
  return "none";
}

TtaMode tta_from_string(const std::string& s) {
  if (s == "none") return TtaMode::none;
  if (s == "x4") return TtaMode::x4;
  if (s == "x16") return TtaMode::x16;
  throw std::invalid_argument("unknown TTA mode '" + s + "'");
}

std::vector<augment::D4> tta_transforms(TtaMode mode) {
  std::vector<augment::D4> out;
  switch (mode) {
    case TtaMode::none:
      out.push_back({});
      break;
    case TtaMode::x4:
      for (int r = 0; r < 4; ++r) out.push_back({r, false, false});
      break;
    case TtaMode::x16:
      for (int r = 0; r < 4; ++r)
        for (bool h : {false, true})
          for (bool v : {false, true}) out.push_back({r, h, v});
      break;
  }
  return out;
}

PredictionMaps tta_forward(const model::Model& model, const ImagePatch& patch, TtaMode mode) {
  const auto transforms = tta_transforms(mode);
  if (transforms.size() == 1) return model.predict(patch);

  PredictionMaps sum;
  auto accumulate = [](std::optional<ProbMap>& acc, const ProbMap& m) {
    if (!acc) {
      acc = m;
    } else {
      for (std::size_t i = 0; i < m.size(); ++i) acc->values()[i] += m.values()[i];
    }
  };
  std::vector<std::optional<ProbMap>> c, s, k;
  for (const auto& t : transforms) {
    const PredictionMaps out = model.predict(augment::apply(patch, t));
    c.resize(out.classes.size());
    s.resize(out.classes.size());
    k.resize(out.classes.size());
    for (std::size_t i = 0; i < out.classes.size(); ++i) {
      const auto& cm = out.classes[i];
      accumulate(c[i], augment::apply_inverse(cm.centroid, t));
      if (cm.seg) accumulate(s[i], augment::apply_inverse(*cm.seg, t));
      if (cm.contour) accumulate(k[i], augment::apply_inverse(*cm.contour, t));
    }
  }
  const double inv = 1.0 / static_cast<double>(transforms.size());
  auto finish = [&](std::optional<ProbMap>& m) {
    if (m)
      for (double& v : m->values()) v *= inv;
  };
  sum.height = patch.height();
  sum.width = patch.width();
  for (std::size_t i = 0; i < c.size(); ++i) {
    finish(c[i]);
    finish(s[i]);
    finish(k[i]);
    sum.classes.push_back({std::move(*c[i]), std::move(s[i]), std::move(k[i])});
  }
  return sum;
}

ImagePatch ArraySource::read(int x0, int y0, int width, int height) const {
  if (x0 < 0 || y0 < 0 || width <= 0 || height <= 0 || x0 + width > image_.width() || y0 + height > image_.height()) {
    throw std::out_of_range("ArraySource::read: region outside image");
  }
  ImagePatch out(height, width, image_.mpp(), image_.id());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = image_.at(x0 + x, y0 + y, c);
  return out;
}

std::vector<Detection> infer_large(const ImageSource& source, const model::Model& model, const InferConfig& config) {
  if (config.stride >= config.tile) throw std::invalid_argument("infer_large: stride must be smaller than tile");
  const auto n_out = static_cast<std::size_t>(model.config().output_classes());
  std::vector<postprocess::PostprocessConfig> post = config.postprocess;
  if (post.empty()) post.assign(n_out, {});
  if (post.size() == 1 && n_out > 1) post.assign(n_out, post.front());
  if (post.size() != n_out) throw std::invalid_argument("infer_large: need one PostprocessConfig per output class");

  const int h = source.height();
  const int w = source.width();
  const TileGrid grid = tile_image(std::max(h, config.tile), std::max(w, config.tile), config.tile, config.stride);

  std::vector<Detection> all;
  for (const auto& [x0, y0] : grid.origins) {
    const int rw = std::min(config.tile, w - x0);
    const int rh = std::min(config.tile, h - y0);
    ImagePatch tile(config.tile, config.tile, source.mpp(), "tile");
    const ImagePatch region = source.read(x0, y0, rw, rh);
    for (int y = 0; y < rh; ++y)
      for (int x = 0; x < rw; ++x)
        for (int c = 0; c < 3; ++c) tile.at(x, y, c) = region.at(x, y, c);

    const PredictionMaps maps = tta_forward(model, tile, config.tta);
    for (auto d : postprocess::extract_detections(maps, post)) {
      d.x += x0;
      d.y += y0;
      if (d.x < w && d.y < h) all.push_back(d);
    }
  }
  return postprocess::nms_detections(all, post);
}

}  // namespace kongnet::pipeline
