// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion; exit status is nonzero on any FAIL.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include "kongnet/eval.hpp"
#include "kongnet/io.hpp"
#include "kongnet/loss.hpp"
#include "kongnet/pipeline.hpp"
#include "kongnet/postprocess.hpp"
#include "kongnet/preprocess.hpp"
#include "kongnet/sampler.hpp"
#include "kongnet/testkit.hpp"

using namespace kongnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << " : " << o.detail << " (" << std::fixed
            << std::setprecision(1) << secs << " s)" << std::defaultfloat << std::endl;
}

double rel_err(double a, double b) {
  const double d = std::max(std::abs(a), std::abs(b));
  return d == 0.0 ? 0.0 : std::abs(a - b) / d;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

// ---- 1 ----

Outcome loss_oracle() {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const loss::LossConfig cfg;
  double worst = 0.0;
  double worst_identity = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> p(64), g(64);
    for (auto& v : p) v = u(rng);
    for (auto& v : g) v = static_cast<double>(rng() & 1u);
    const auto o = testkit::oracle_scalar_losses(p, g);
    worst = std::max({worst, rel_err(loss::bce(p, g), o.bce), rel_err(loss::dice_loss(p, g, 1.0), o.dice),
                      rel_err(loss::jaccard_loss(p, g, 1.0), o.jaccard),
                      rel_err(loss::focal_loss(p, g, 0.25, 2.0), o.focal),
                      rel_err(loss::centroid_loss(p, g, cfg), o.centroid)});

    // gamma = 0: alpha on positives, 1 - alpha on negatives, plain cross-entropy otherwise.
    double weighted = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const std::vector<double> pi{p[i]}, gi{g[i]};
      weighted += (g[i] > 0.5 ? 0.25 : 0.75) * loss::bce(pi, gi);
    }
    weighted /= static_cast<double>(p.size());
    worst_identity = std::max(worst_identity, rel_err(loss::focal_loss(p, g, 0.25, 0.0), weighted));
  }
  return {worst <= 1e-9 && worst_identity <= 1e-9,
          "max rel err " + fmt(worst) + ", gamma=0 identity " + fmt(worst_identity)};
}

// ---- 2 ----

Outcome gradient_check() {
  model::ModelConfig mc;
  mc.variant = model::Variant::full;
  mc.n_classes = 2;
  mc.encoder_widths = {3, 4, 4, 4, 4};
  mc.decoder_widths = {4, 4, 4, 3, 3};
  mc.init_seed = 5;
  auto spec = testkit::SynthSpec::separable(2);
  spec.size = 32;
  spec.max_per_class = 2;
  const auto s = testkit::synth_patch(spec, 3);
  const std::vector<ImagePatch> ims{s.image};
  const std::vector<AnnotationSet> anns{s.annotation};
  const auto ds = pipeline::make_dataset(ims, anns, ClassSpec::uniform({"a", "b"}, 5, 6.0),
                                         preprocess::TargetMode::multitask, false);

  double worst = 0.0;
  std::size_t checked = 0, above_floor = 0;
  for (auto weighting : {loss::Weighting::fixed_equal, loss::Weighting::uncertainty}) {
    model::Model m(mc);
    loss::LossConfig lc;
    lc.weighting = weighting;
    const std::vector<double> log_vars{0.4, -0.3};
    const std::span<const double> lv =
        weighting == loss::Weighting::uncertainty ? std::span<const double>(log_vars) : std::span<const double>{};
    std::vector<double> grad(m.parameter_count(), 0.0), lv_grad(2, 0.0);
    pipeline::evaluate_objective(m, ds.samples, lc, lv, grad, lv_grad);

    std::mt19937_64 rng(weighting == loss::Weighting::uncertainty ? 2 : 1);
    std::vector<std::size_t> idx(m.parameter_count());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(100);
    for (std::size_t i : idx) {
      double& w = m.parameters().values()[i];
      const double keep = w;
      const double h = 1e-5;
      w = keep + h;
      const double up = pipeline::evaluate_objective(m, ds.samples, lc, lv).total;
      w = keep - h;
      const double down = pipeline::evaluate_objective(m, ds.samples, lc, lv).total;
      w = keep;
      const double fd = (up - down) / (2 * h);
      // Gradients under 1e-6 are scaled by the floor: their central differences are mostly rounding noise.
      const double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
      worst = std::max(worst, std::abs(fd - grad[i]) / scale);
      if (scale > 1e-6) ++above_floor;
      ++checked;
    }
  }
  return {worst <= 1e-3, std::to_string(checked) + " parameters (" + std::to_string(above_floor) +
                                " above 1e-6), worst rel err " + fmt(worst)};
}

// ---- 3 ----

Outcome sampler_checks() {
  bool ok = true;
  std::string note;
  const sampler::SamplerState equal{{{50, 50}}, 100};
  const sampler::SamplerState tenth{{{90, 10}}, 100};
  ok = ok && sampler::class_weights(equal)[1] == std::log(2.0) && sampler::class_weights(tenth)[1] == std::log(10.0);
  note += ok ? "fixtures exact" : "fixtures differ";

  const std::vector<double> w{1, 3};
  const auto d = sampler::sample_indices(w, 100000, 8);
  const double f = static_cast<double>(std::count(d.begin(), d.end(), std::size_t{1})) / static_cast<double>(d.size());
  const bool freq = std::abs(f - 0.75) <= 0.02;
  ok = ok && freq;
  note += ", freq " + fmt(f) + " vs 0.75";

  std::mt19937_64 rng(9);
  bool exact = true;
  for (int trial = 0; trial < 100; ++trial) {
    sampler::SamplerState s;
    s.patch_area = 4096;
    for (int p = 0; p < 8; ++p)
      s.areas.push_back({double(rng() % 4000), double(1 + rng() % 90), double(rng() % 9), double(1 + rng() % 300)});
    for (double k : {0.125, 4.0, 65536.0}) {
      sampler::SamplerState t = s;
      t.patch_area *= k;
      for (auto& row : t.areas)
        for (auto& a : row) a *= k;
      exact = exact && sampler::patch_weights(t) == sampler::patch_weights(s);
    }
  }
  ok = ok && exact;
  note += exact ? ", scaling bit-exact" : ", scaling not exact";
  return {ok, note};
}

// ---- 4 ----

LabelMap random_blobs(std::mt19937_64& rng, int h, int w) {
  LabelMap l(h, w);
  const int n = 1 + static_cast<int>(rng() % 8);
  for (int i = 1; i <= n; ++i) {
    const int cx = static_cast<int>(rng() % static_cast<unsigned>(w));
    const int cy = static_cast<int>(rng() % static_cast<unsigned>(h));
    const int r = 2 + static_cast<int>(rng() % 6);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) l(x, y) = i;
  }
  return l;
}

bool near(const Mask& m, int x, int y) {
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      if (m.contains(x + dx, y + dy) && m(x + dx, y + dy)) return true;
  return false;
}

Outcome contour_and_dilation() {
  std::mt19937_64 rng(11);
  std::size_t bad_maps = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 8 + static_cast<int>(rng() % 57), w = 8 + static_cast<int>(rng() % 57);
    const LabelMap l = random_blobs(rng, h, w);
    const Mask c = preprocess::contour_from_instance(l);
    const Mask o = testkit::oracle_boundary(l);
    bool ok = true;
    for (int y = 0; y < h && ok; ++y)
      for (int x = 0; x < w && ok; ++x) {
        if (c(x, y) && !near(o, x, y)) ok = false;
        if (o(x, y) && !near(c, x, y)) ok = false;
      }
    bad_maps += ok ? 0 : 1;
  }

  std::size_t bad_counts = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int d = std::array<int, 4>{3, 5, 9, 11}[rng() % 4];
    std::vector<Centroid> pts;
    const int n = static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) pts.push_back({double(rng() % 64), double(rng() % 64), 0});
    const Mask m = preprocess::dilate_centroids(pts, preprocess::DilationKernel(d), 64, 64);
    Mask oracle(64, 64);
    for (const auto& p : pts) {
      const Mask disk = testkit::oracle_disk(int(p.x), int(p.y), d, 64, 64);
      for (std::size_t i = 0; i < disk.size(); ++i) oracle.values()[i] |= disk.values()[i];
    }
    std::size_t a = 0, b = 0;
    for (auto v : m.values()) a += v;
    for (auto v : oracle.values()) b += v;
    bad_counts += (a == b && m == oracle) ? 0 : 1;
  }
  return {bad_maps == 0 && bad_counts == 0, std::to_string(bad_maps) + "/200 contour maps outside the 1-px bound, " +
                                                std::to_string(bad_counts) + "/200 dilation counts differ"};
}

// ---- 5 ----

Outcome peaks_and_nms() {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::size_t mismatches = 0, not_idempotent = 0;
  for (int trial = 0; trial < 200; ++trial) {
    ProbMap m(64, 64);
    const int n = 1 + static_cast<int>(rng() % 200);
    for (int i = 0; i < n; ++i) m(static_cast<int>(rng() % 64), static_cast<int>(rng() % 64)) = u(rng);
    const int min_distance = 1 + static_cast<int>(rng() % 6);
    const int box = 3 + 2 * static_cast<int>(rng() % 4);
    const auto expected = testkit::oracle_box_suppression(
        testkit::oracle_distance_suppression(testkit::oracle_strict_maxima(m, 0.3), min_distance), box, 0.5);
    const auto peaks = postprocess::peak_local_max(m, 0.3, min_distance);
    const auto kept = postprocess::nms(peaks, box, 0.5);
    bool same = kept.size() == expected.size();
    for (std::size_t i = 0; same && i < kept.size(); ++i)
      same = kept[i].x == expected[i].x && kept[i].y == expected[i].y && kept[i].score == expected[i].score;
    mismatches += same ? 0 : 1;
    not_idempotent += postprocess::nms(kept, box, 0.5) == kept ? 0 : 1;
  }
  return {mismatches == 0 && not_idempotent == 0,
          std::to_string(mismatches) + "/200 differ from oracle, " + std::to_string(not_idempotent) + " not idempotent"};
}

// ---- 6 ----

Outcome metric_fixtures() {
  std::vector<std::string> failed;
  auto expect = [&](bool c, const std::string& what) {
    if (!c) failed.push_back(what);
  };
  const std::vector<Centroid> g{{10, 10, 0}};
  const std::vector<Detection> exact{{10, 10, 0, 1.0}};
  const auto m = eval::match_points(exact, g, 6);
  expect(m.tp == 1 && m.fp == 0 && m.fn == 0, "exact match");
  const std::vector<Detection> two{{11, 10, 0, 0.3}, {12, 10, 0, 0.8}};
  const auto m2 = eval::match_points(two, g, 6);
  expect(m2.tp == 1 && m2.fp == 1 && m2.pairs.at(0).pred == 1, "higher confidence wins");
  expect(std::abs(eval::f1_from_counts(1, 1, 0).f1 - 2.0 / 3.0) < 1e-15, "f1 2/3");

  const std::vector<eval::MatchResult> imgs{{1, 1, 0, {}}, {0, 0, 1, {}}};
  expect(std::abs(eval::f1_global(imgs).f1 - 0.5) < 1e-15, "global 0.5");
  expect(std::abs(eval::f1_per_image_avg(imgs) - 1.0 / 3.0) < 1e-15, "per-image 1/3");

  expect(eval::froc(exact, g, 3, 0.5, 1.0).score == 1.0, "froc perfect detector");
  expect(eval::froc(std::vector<Detection>{}, g, 3, 0.5, 1.0).score == 0.0, "froc no predictions");
  const std::vector<Detection> fp_then_tp{{40, 40, 0, 0.9}, {10, 10, 0, 0.8}};
  const auto r = eval::froc(fp_then_tp, g, 3, 0.5, 1.0, std::vector<double>{0.5, 1.0});
  expect(r.sensitivities[0] == 0.0 && r.sensitivities[1] == 1.0, "froc fp/tp sweep");

  const std::vector<Detection> extra{{10, 10, 0, 1.0}, {50, 50, 0, 0.5}};
  expect(std::abs(eval::pannuke_f1(eval::match_points(extra, g, 6), {}).detection.f1 - 2.0 / 3.0) < 1e-15,
         "pannuke F1_d 2/3");
  std::string detail = failed.empty() ? "all fixtures hold" : "failed:";
  for (const auto& f : failed) detail += " " + f;
  return {failed.empty(), detail};
}

// ---- 7 to 10: trained toy models ----

const ClassSpec kClasses = ClassSpec::uniform({"a", "b", "c"}, 5, 6.0);

model::Model train_toy(const testkit::SynthSpec& spec, model::Variant variant, int seed) {
  std::vector<ImagePatch> ims;
  std::vector<AnnotationSet> anns;
  for (int i = 0; i < 50; ++i) {
    auto s = testkit::synth_patch(spec, static_cast<std::uint64_t>(1000 * seed + i));
    ims.push_back(std::move(s.image));
    anns.push_back(std::move(s.annotation));
  }
  model::ModelConfig mc;
  mc.variant = variant;
  mc.n_classes = 3;
  mc.encoder_widths = {8, 16, 24, 32, 48};
  mc.decoder_widths = {32, 16, 16, 8, 8};
  mc.init_seed = static_cast<std::uint64_t>(seed);
  const auto ds = pipeline::make_dataset(
      ims, anns, kClasses,
      mc.multitask() ? preprocess::TargetMode::multitask : preprocess::TargetMode::detection_only, false);
  model::Model m(mc);
  pipeline::TrainConfig tc;
  tc.learning_rate = 3e-3;
  tc.steps_per_epoch = 600;
  tc.batch_size = 4;
  tc.seed = static_cast<std::uint64_t>(seed);
  tc.augmentations = {"hflip", "vflip", "rot90"};
  pipeline::train(m, ds, tc);
  return m;
}

postprocess::PostprocessConfig toy_postprocess(const model::Model& m) {
  return {m.config().multitask() ? 0.6 : 1.0, 0.5, 4, 5, 0.5};
}

std::vector<double> heldout_f1(const model::Model& m, const testkit::SynthSpec& spec, int seed, pipeline::TtaMode tta) {
  std::vector<std::vector<eval::MatchResult>> per(3);
  for (int i = 0; i < 20; ++i) {
    const auto s = testkit::synth_patch(spec, static_cast<std::uint64_t>(999999 - i - 1000 * seed));
    const auto dets = postprocess::extract_detections(pipeline::tta_forward(m, s.image, tta), toy_postprocess(m));
    for (int k = 0; k < 3; ++k) {
      std::vector<Detection> p;
      std::vector<Centroid> g;
      for (const auto& d : dets)
        if (d.class_index == k) p.push_back(d);
      for (const auto& c : s.annotation.centroids)
        if (c.class_index == k) g.push_back(c);
      per[static_cast<std::size_t>(k)].push_back(eval::match_points(p, g, 6.0));
    }
  }
  std::vector<double> f;
  for (const auto& r : per) f.push_back(eval::f1_global(r).f1);
  return f;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : "/") + fmt(x);
  return s;
}

std::optional<model::Model> separable_model;

Outcome end_to_end() {
  const auto spec = testkit::SynthSpec::separable(3);
  const auto t0 = std::chrono::steady_clock::now();
  separable_model.emplace(train_toy(spec, model::Variant::full, 0));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto f1 = heldout_f1(*separable_model, spec, 0, pipeline::TtaMode::none);
  const bool ok = secs <= 900 && std::all_of(f1.begin(), f1.end(), [](double f) { return f >= 0.90; });
  return {ok, "per-class F1 " + list(f1) + " after " + fmt(secs) + " s training"};
}

struct Ablation {
  std::vector<double> full_none, det_none, full_x4;
};

Ablation run_ablation() {
  Ablation a;
  const auto spec = testkit::SynthSpec::confusable(3);
  for (int seed = 0; seed < 3; ++seed) {
    const auto full = train_toy(spec, model::Variant::full, seed);
    a.full_none.push_back(mean(heldout_f1(full, spec, seed, pipeline::TtaMode::none)));
    a.full_x4.push_back(mean(heldout_f1(full, spec, seed, pipeline::TtaMode::x4)));
    const auto det = train_toy(spec, model::Variant::det_only, seed);
    a.det_none.push_back(mean(heldout_f1(det, spec, seed, pipeline::TtaMode::none)));
    std::cout << "  seed " << seed << ": full " << fmt(a.full_none.back()) << ", full x4 " << fmt(a.full_x4.back())
              << ", det " << fmt(a.det_none.back()) << std::endl;
  }
  return a;
}

std::optional<Ablation> ablation;

Outcome full_vs_det() {
  ablation = run_ablation();
  const double f = median3(ablation->full_none), d = median3(ablation->det_none);
  return {f >= d, "median class-avg F1 full " + fmt(f) + " vs det " + fmt(d) + " (seeds " + list(ablation->full_none) +
                      " vs " + list(ablation->det_none) + ")"};
}

Outcome tta_vs_none() {
  if (!ablation) return {false, "ablation did not run"};
  const double x4 = median3(ablation->full_x4), none = median3(ablation->full_none);
  return {x4 >= none, "median class-avg F1 x4 " + fmt(x4) + " vs none " + fmt(none)};
}

Outcome cli_determinism() {
  if (!separable_model) return {false, "no trained model"};
  const fs::path dir = fs::temp_directory_path() / "kongnet_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  model::save_checkpoint(dir / "model.ckpt", model::make_checkpoint(*separable_model, kClasses, loss::LossConfig{}));
  auto spec = testkit::SynthSpec::separable(3);
  spec.size = 160;
  spec.min_per_class = 4;
  spec.max_per_class = 6;
  io::save_image(dir / "image.npy", testkit::synth_patch(spec, 77).image);
  auto run = [&](const std::string& out) {
    const std::string cmd = std::string(KONGNET_CLI_PATH) + " infer --checkpoint " + (dir / "model.ckpt").string() +
                            " --input " + (dir / "image.npy").string() + " --out " + (dir / out).string() +
                            " --tile 64 --stride 48 --tta x4 --mpp 0.5 > /dev/null 2>&1";
    return std::system(cmd.c_str());
  };
  if (run("a.csv") != 0 || run("b.csv") != 0) return {false, "infer exited with an error"};
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  const std::string a = slurp(dir / "a.csv"), b = slurp(dir / "b.csv");
  const auto lines = std::count(a.begin(), a.end(), '\n');
  return {a == b && lines > 1, std::to_string(lines - 1) + " detections, " + (a == b ? "byte-identical" : "differ")};
}

}  // namespace

int main() {
  report(1, "loss components match the summation oracle", loss_oracle);
  report(2, "total-loss gradients match finite differences", gradient_check);
  report(3, "sampler fixtures, frequencies and scale invariance", sampler_checks);
  report(4, "contours and dilated centroids match their oracles", contour_and_dilation);
  report(5, "peak finding and NMS match the brute-force oracle", peaks_and_nms);
  report(6, "metric fixtures", metric_fixtures);
  report(7, "toy model reaches F1 >= 0.90 per class", end_to_end);
  report(8, "full variant >= detection-only on the confusable task", full_vs_det);
  report(9, "x4 TTA >= no TTA", tta_vs_none);
  report(10, "CLI inference is byte-for-byte repeatable", cli_determinism);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
