// kongnet command-line front end: synth, train, infer, eval.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"
#include "kongnet/eval.hpp"
#include "kongnet/io.hpp"
#include "kongnet/model.hpp"
#include "kongnet/pipeline.hpp"
#include "kongnet/postprocess.hpp"
#include "kongnet/sampler.hpp"
#include "kongnet/testkit.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kongnet;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return json::parse(in);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

ClassSpec classes_from_json(const json& j) {
  ClassSpec c;
  c.names = j.at("names").get<std::vector<std::string>>();
  c.dilation_diameters = j.at("dilation_diameters").get<std::vector<int>>();
  c.match_radii = j.at("match_radii").get<std::vector<double>>();
  c.validate();
  return c;
}

json classes_to_json(const ClassSpec& c) {
  return {{"names", c.names}, {"dilation_diameters", c.dilation_diameters}, {"match_radii", c.match_radii}};
}

postprocess::PostprocessConfig postprocess_from_json(const json& j) {
  postprocess::PostprocessConfig c;
  if (j.contains("preset")) c = postprocess::PostprocessConfig::preset(j.at("preset").get<std::string>());
  c.centroid_weight = j.value("centroid_weight", c.centroid_weight);
  c.threshold = j.value("threshold", c.threshold);
  c.min_distance = j.value("min_distance", c.min_distance);
  c.box_size = j.value("box_size", c.box_size);
  c.overlap_threshold = j.value("overlap_threshold", c.overlap_threshold);
  c.validate();
  return c;
}

model::ModelConfig model_from_json(const json& j, int n_classes) {
  model::ModelConfig m;
  m.n_classes = n_classes;
  m.variant = model::variant_from_string(j.value("variant", std::string("full")));
  if (j.contains("decoder_widths")) m.decoder_widths = j.at("decoder_widths").get<model::Widths>();
  if (j.contains("encoder_widths")) m.encoder_widths = j.at("encoder_widths").get<model::Widths>();
  m.backbone = j.value("backbone", m.backbone);
  m.overall_decoder = j.value("overall_decoder", m.overall_decoder);
  m.scse_reduction = j.value("scse_reduction", m.scse_reduction);
  m.init_seed = j.value("init_seed", m.init_seed);
  if (j.contains("normalisation")) {
    m.normalisation.mean = j.at("normalisation").at("mean").get<std::array<double, 3>>();
    m.normalisation.std = j.at("normalisation").at("std").get<std::array<double, 3>>();
  }
  m.validate();
  return m;
}

loss::LossConfig loss_from_json(const json& j) {
  loss::LossConfig l;
  l.weighting = loss::weighting_from_string(j.value("weighting", loss::to_string(l.weighting)));
  l.epsilon = j.value("epsilon", l.epsilon);
  l.alpha = j.value("alpha", l.alpha);
  l.gamma = j.value("gamma", l.gamma);
  l.contour_weight = j.value("contour_weight", l.contour_weight);
  l.clamp = j.value("clamp", l.clamp);
  l.validate();
  return l;
}

pipeline::TrainConfig train_from_json(const json& j) {
  pipeline::TrainConfig t;
  t.batch_size = j.value("batch_size", t.batch_size);
  t.optimiser = j.value("optimiser", t.optimiser);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.min_learning_rate = j.value("min_learning_rate", t.min_learning_rate);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.schedule = pipeline::schedule_from_string(j.value("schedule", pipeline::to_string(t.schedule)));
  t.epochs = j.value("epochs", t.epochs);
  t.steps_per_epoch = j.value("steps_per_epoch", t.steps_per_epoch);
  t.restart_epochs = j.value("restart_epochs", t.restart_epochs);
  t.augmentations = j.value("augmentations", t.augmentations);
  t.augment_probability = j.value("augment_probability", t.augment_probability);
  t.use_sampler = j.value("use_sampler", t.use_sampler);
  t.seed = j.value("seed", t.seed);
  return t;
}

// ---- synth ----

struct SynthOptions {
  int n = 10;
  fs::path out;
  std::uint64_t seed = 0;
  int size = 64;
  int classes = 3;
  int min_per_class = 1;
  int max_per_class = 3;
  bool confusable = false;
};

int run_synth(const SynthOptions& o) {
  testkit::SynthSpec spec = o.confusable ? testkit::SynthSpec::confusable(o.classes)
                                         : testkit::SynthSpec::separable(o.classes);
  spec.size = o.size;
  spec.min_per_class = o.min_per_class;
  spec.max_per_class = o.max_per_class;
  std::vector<std::string> names;
  for (int k = 0; k < o.classes; ++k) names.push_back("class" + std::to_string(k));
  const int diameter = preprocess::default_dilation_diameter(spec.mpp);
  const ClassSpec classes = ClassSpec::uniform(names, diameter, 6.0);

  fs::create_directories(o.out / "images");
  fs::create_directories(o.out / "annotations");
  std::vector<std::string> ids;
  std::vector<io::PointRecord> all_points;
  for (int i = 0; i < o.n; ++i) {
    const auto sample = testkit::synth_patch(spec, o.seed + static_cast<std::uint64_t>(i));
    char buf[32];
    std::snprintf(buf, sizeof buf, "patch%05d", i);
    const std::string id = buf;
    io::save_image(o.out / "images" / (id + ".npy"), sample.image);
    io::save_annotation(o.out / "annotations" / id, id, sample.annotation, classes);
    for (const auto& c : sample.annotation.centroids) {
      all_points.push_back({id, c.x, c.y, names[static_cast<std::size_t>(c.class_index)], std::nullopt});
    }
    ids.push_back(id);
  }
  io::write_points_csv(o.out / "points.csv", all_points);
  write_json(o.out / "dataset.json", {{"classes", classes_to_json(classes)}, {"mpp", spec.mpp}, {"patches", ids}});
  std::cout << "wrote " << o.n << " patches to " << o.out << '\n';
  return 0;
}

// ---- train ----

int run_train(const fs::path& config_path) {
  const json cfg = read_json(config_path);
  const fs::path base = config_path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  const fs::path data_dir = resolve(cfg.at("dataset").get<std::string>());
  const json meta = read_json(data_dir / "dataset.json");
  const ClassSpec classes = classes_from_json(cfg.contains("classes") ? cfg.at("classes") : meta.at("classes"));
  const double mpp = meta.value("mpp", 0.5);

  std::vector<ImagePatch> patches;
  std::vector<AnnotationSet> annotations;
  for (const auto& id : meta.at("patches").get<std::vector<std::string>>()) {
    patches.push_back(io::load_image(data_dir / "images" / (id + ".npy"), mpp, id));
    annotations.push_back(io::load_annotation(data_dir / "annotations" / id, classes));
  }

  const auto model_cfg = model_from_json(cfg.value("model", json::object()), static_cast<int>(classes.size()));
  auto train_cfg = train_from_json(cfg.value("train", json::object()));
  train_cfg.loss = loss_from_json(cfg.value("loss", json::object()));
  const auto mode = model_cfg.multitask() ? preprocess::TargetMode::multitask : preprocess::TargetMode::detection_only;
  const auto dataset = pipeline::make_dataset(patches, annotations, classes, mode, model_cfg.overall_decoder);

  model::Model model(model_cfg);
  std::optional<model::TrainingState> resume;
  if (cfg.contains("resume")) {
    const auto ckpt = model::load_checkpoint(resolve(cfg.at("resume").get<std::string>()));
    if (!(ckpt.model == model_cfg)) throw std::runtime_error("resume checkpoint has a different model config");
    model = model::restore_model(ckpt);
    resume = ckpt.training;
  }

  const json out = cfg.value("output", json::object());
  const fs::path ckpt_path = resolve(out.value("checkpoint", std::string("model.ckpt")));
  const fs::path log_path = resolve(out.value("loss_log", std::string("loss_log.csv")));
  if (out.contains("weights_csv")) {
    std::ofstream w(resolve(out.at("weights_csv").get<std::string>()));
    const auto weights = pipeline::dataset_weights(dataset);
    sampler::write_weights_csv(w, dataset.ids, weights);
  }

  std::cout << "training " << model::to_string(model_cfg.variant) << " model, " << model.parameter_count()
            << " parameters, " << dataset.size() << " patches\n";
  const auto result = pipeline::train(model, dataset, train_cfg, resume, std::nullopt, [](const pipeline::LossLogRow& r) {
    if (r.step % 25 == 0) std::cout << "step " << r.step << " loss " << r.total << '\n';
  });

  std::ofstream log(log_path);
  pipeline::write_loss_log(log, result.log, classes, static_cast<std::size_t>(model_cfg.output_classes()));
  model::save_checkpoint(ckpt_path, model::make_checkpoint(model, classes, train_cfg.loss, result.state));
  std::cout << "checkpoint " << ckpt_path << ", loss log " << log_path << '\n';
  return 0;
}

// ---- infer ----

struct InferOptions {
  fs::path checkpoint;
  fs::path input;
  fs::path out = "detections.csv";
  fs::path postprocess;
  std::string preset;
  std::string id;
  double mpp = 0.5;
  int tile = 256;
  int stride = 192;
  std::string tta = "none";
};

int run_infer(const InferOptions& o) {
  const auto ckpt = model::load_checkpoint(o.checkpoint);
  const model::Model model = model::restore_model(ckpt);
  const std::string id = o.id.empty() ? o.input.stem().string() : o.id;
  const ImagePatch image = io::load_image(o.input, o.mpp, id);

  pipeline::InferConfig cfg;
  cfg.tile = o.tile;
  cfg.stride = o.stride;
  cfg.tta = pipeline::tta_from_string(o.tta);
  postprocess::PostprocessConfig post;
  if (!o.preset.empty()) post = postprocess::PostprocessConfig::preset(o.preset);
  if (!o.postprocess.empty()) {
    const json j = read_json(o.postprocess);
    post = postprocess_from_json(j.contains("postprocess") ? j.at("postprocess") : j);
  }
  cfg.postprocess.assign(static_cast<std::size_t>(model.config().output_classes()), post);

  const auto detections = pipeline::infer_large(pipeline::ArraySource(image), model, cfg);
  ClassSpec names = ckpt.classes;
  if (model.config().overall_decoder) {
    names.names.push_back("overall");
    names.dilation_diameters.push_back(names.dilation_diameters.back());
    names.match_radii.push_back(names.match_radii.back());
  }
  io::write_points_csv(o.out, io::to_records(detections, names, id));
  std::cout << detections.size() << " detections written to " << o.out << '\n';
  return 0;
}

// ---- eval ----

struct EvalOptions {
  std::string protocol;
  fs::path pred;
  fs::path gt;
  fs::path out = "report.json";
  fs::path config;
  fs::path curve;
  double radius = 6.0;
  double margin_um = 4.0;
  double mpp = 0.5;
  double area_mm2 = 0.0;
};

std::vector<Centroid> as_centroids(const std::vector<Detection>& d) {
  std::vector<Centroid> out;
  for (const auto& x : d) out.push_back({x.x, x.y, x.class_index});
  return out;
}

std::vector<Detection> of_class(const std::vector<Detection>& d, int k) {
  std::vector<Detection> out;
  std::copy_if(d.begin(), d.end(), std::back_inserter(out), [&](const Detection& x) { return x.class_index == k; });
  return out;
}

int run_eval(EvalOptions o) {
  json cfg = o.config.empty() ? json::object() : read_json(o.config);
  o.radius = cfg.value("radius", o.radius);
  o.margin_um = cfg.value("margin_um", o.margin_um);
  o.mpp = cfg.value("mpp", o.mpp);
  o.area_mm2 = cfg.value("area_mm2", o.area_mm2);
  std::vector<double> fp_rates(eval::kDefaultFpRates.begin(), eval::kDefaultFpRates.end());
  fp_rates = cfg.value("fp_rates", fp_rates);

  const auto pred_records = io::read_points_csv(o.pred);
  const auto gt_records = io::read_points_csv(o.gt);
  std::vector<std::string> names;
  if (cfg.contains("classes")) {
    names = cfg.at("classes").get<std::vector<std::string>>();
  } else {
    for (const auto* records : {&gt_records, &pred_records}) {
      for (const auto& r : *records) {
        if (std::find(names.begin(), names.end(), r.class_name) == names.end()) names.push_back(r.class_name);
      }
    }
  }
  const ClassSpec classes = ClassSpec::uniform(names, 1, o.radius);
  const auto preds = io::group_detections(pred_records, classes);
  const auto gts = io::group_detections(gt_records, classes);
  std::set<std::string> ids;
  for (const auto& [id, _] : preds) ids.insert(id);
  for (const auto& [id, _] : gts) ids.insert(id);
  auto get = [](const std::map<std::string, std::vector<Detection>>& m, const std::string& id) {
    const auto it = m.find(id);
    return it == m.end() ? std::vector<Detection>{} : it->second;
  };

  json report{{"protocol", o.protocol}, {"images", ids.size()}};
  if (o.protocol == "global_f1" || o.protocol == "per_image_f1") {
    report["radius"] = o.radius;
    double mean = 0.0;
    for (std::size_t k = 0; k < names.size(); ++k) {
      std::vector<eval::MatchResult> per_image;
      for (const auto& id : ids) {
        const auto p = of_class(get(preds, id), static_cast<int>(k));
        const auto g = as_centroids(of_class(get(gts, id), static_cast<int>(k)));
        per_image.push_back(eval::match_points(p, g, o.radius));
      }
      json entry;
      if (o.protocol == "global_f1") {
        const auto s = eval::f1_global(per_image);
        entry = {{"f1", s.f1}, {"precision", s.precision}, {"recall", s.recall}};
        mean += s.f1;
      } else {
        const double f = eval::f1_per_image_avg(per_image);
        entry = {{"f1", f}};
        mean += f;
      }
      report["classes"][names[k]] = entry;
    }
    report["mean_f1"] = names.empty() ? 0.0 : mean / static_cast<double>(names.size());
  } else if (o.protocol == "pannuke") {
    report["radius"] = o.radius;
    eval::MatchResult pooled;
    std::vector<eval::ClassConfusion> confusion(names.size());
    for (const auto& id : ids) {
      const auto p = get(preds, id);
      const auto g = as_centroids(get(gts, id));
      const auto m = eval::match_points(p, g, o.radius);
      pooled.tp += m.tp;
      pooled.fp += m.fp;
      pooled.fn += m.fn;
      const auto c = eval::classification_confusion(m, p, g, names.size());
      for (std::size_t k = 0; k < names.size(); ++k) confusion[k] += c[k];
    }
    const auto s = eval::pannuke_f1(pooled, confusion);
    report["detection"] = {{"f1", s.detection.f1}, {"precision", s.detection.precision},
                           {"recall", s.detection.recall}};
    for (std::size_t k = 0; k < names.size(); ++k) {
      report["classes"][names[k]] = {{"f1", s.classes[k].f1},
                                     {"precision", s.classes[k].precision},
                                     {"recall", s.classes[k].recall}};
    }
  } else if (o.protocol == "froc") {
    if (!(o.area_mm2 > 0.0)) throw std::runtime_error("froc needs --area-mm2 (total annotated area) > 0");
    report["margin_um"] = o.margin_um;
    report["mpp"] = o.mpp;
    report["area_mm2"] = o.area_mm2;
    report["fp_rates"] = fp_rates;
    std::ofstream curve;
    if (!o.curve.empty()) {
      curve.open(o.curve);
      curve << "class_name,threshold,fp_per_mm2,sensitivity\n";
    }
    for (std::size_t k = 0; k < names.size(); ++k) {
      std::vector<std::vector<Detection>> p_store;
      std::vector<std::vector<Centroid>> g_store;
      for (const auto& id : ids) {
        p_store.push_back(of_class(get(preds, id), static_cast<int>(k)));
        g_store.push_back(as_centroids(of_class(get(gts, id), static_cast<int>(k))));
      }
      std::vector<eval::FrocImage> images;
      for (std::size_t i = 0; i < p_store.size(); ++i) images.push_back({p_store[i], g_store[i]});
      const auto r = eval::froc(images, o.margin_um, o.mpp, o.area_mm2, fp_rates);
      report["classes"][names[k]] = {{"froc", r.score}, {"sensitivities", r.sensitivities}};
      if (curve.is_open()) {
        for (const auto& pt : r.curve.points) {
          curve << names[k] << ',' << (std::isinf(pt.threshold) ? std::string("inf") : io::format_number(pt.threshold))
                << ',' << io::format_number(pt.fp_per_mm2) << ',' << io::format_number(pt.sensitivity) << '\n';
        }
      }
    }
  } else {
    throw std::runtime_error("unknown protocol '" + o.protocol + "'");
  }
  write_json(o.out, report);
  std::cout << report.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KongNet nuclei detection and classification"};
  app.require_subcommand(1);

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "write synthetic patches with annotations");
  s->add_option("--n", synth.n, "number of patches")->required();
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--seed", synth.seed, "first seed");
  s->add_option("--size", synth.size, "patch side in pixels");
  s->add_option("--classes", synth.classes, "number of classes");
  s->add_option("--min-per-class", synth.min_per_class);
  s->add_option("--max-per-class", synth.max_per_class);
  s->add_flag("--confusable", synth.confusable, "near-identical class colours");

  fs::path train_config;
  auto* t = app.add_subcommand("train", "train a model from a JSON config");
  t->add_option("--config", train_config, "training config")->required()->check(CLI::ExistingFile);

  InferOptions infer;
  auto* i = app.add_subcommand("infer", "tiled inference on an image array");
  i->add_option("--checkpoint", infer.checkpoint)->required()->check(CLI::ExistingFile);
  i->add_option("--input", infer.input, "(H, W, 3) .npy image")->required()->check(CLI::ExistingFile);
  i->add_option("--out", infer.out, "detections CSV");
  i->add_option("--tile", infer.tile);
  i->add_option("--stride", infer.stride);
  i->add_option("--tta", infer.tta)->check(CLI::IsMember({"none", "x4", "x16"}));
  i->add_option("--mpp", infer.mpp, "microns per pixel of the input");
  i->add_option("--id", infer.id, "image id written to the CSV (default: file stem)");
  i->add_option("--postprocess", infer.postprocess, "JSON with PostprocessConfig fields")->check(CLI::ExistingFile);
  i->add_option("--preset", infer.preset)->check(CLI::IsMember({"monkey", "puma", "pannuke", "conic", "midog"}));

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "score detections against ground truth");
  e->add_option("--protocol", ev.protocol)->required()->check(
      CLI::IsMember({"froc", "pannuke", "global_f1", "per_image_f1"}));
  e->add_option("--pred", ev.pred)->required()->check(CLI::ExistingFile);
  e->add_option("--gt", ev.gt)->required()->check(CLI::ExistingFile);
  e->add_option("--out", ev.out, "report JSON");
  e->add_option("--config", ev.config, "protocol config JSON")->check(CLI::ExistingFile);
  e->add_option("--curve", ev.curve, "FROC curve CSV");
  e->add_option("--radius", ev.radius, "matching radius in pixels");
  e->add_option("--margin-um", ev.margin_um, "FROC margin in microns");
  e->add_option("--mpp", ev.mpp);
  e->add_option("--area-mm2", ev.area_mm2, "total annotated area for FROC");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*s) return run_synth(synth);
    if (*t) return run_train(train_config);
    if (*i) return run_infer(infer);
    if (*e) return run_eval(ev);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
