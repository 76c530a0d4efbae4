#include "kongnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kongnet::eval {

MatchResult match_points(std::span<const Detection> preds, std::span<const Centroid> gts, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("match_points: radius must be > 0");
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Detection& p = preds[a];
    const Detection& q = preds[b];
    if (p.confidence != q.confidence) return p.confidence > q.confidence;
    if (p.y != q.y) return p.y < q.y;
    return p.x < q.x;
  });

  MatchResult r;
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t pi : order) {
    const Detection& p = preds[pi];
    std::size_t best = gts.size();
    double best_d = INFINITY;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (taken[gi]) continue;
      const double d = std::hypot(p.x - gts[gi].x, p.y - gts[gi].y);
      if (d > radius) continue;
      bool better = d < best_d;
      if (d == best_d && best < gts.size()) {
        const Centroid& g = gts[gi];
        const Centroid& b = gts[best];
        better = g.y < b.y || (g.y == b.y && g.x < b.x);
      }
      if (better) {
        best = gi;
        best_d = d;
      }
    }
    if (best < gts.size()) {
      taken[best] = true;
      r.pairs.push_back({pi, best, best_d});
    }
  }
  r.tp = r.pairs.size();
  r.fp = preds.size() - r.tp;
  r.fn = gts.size() - r.tp;
  return r;
}

F1Score f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
  const double t = static_cast<double>(tp);
  return {ratio(2.0 * t, 2.0 * t + static_cast<double>(fp) + static_cast<double>(fn)),
          ratio(t, t + static_cast<double>(fp)), ratio(t, t + static_cast<double>(fn))};
}

F1Score f1_global(std::span<const MatchResult> per_image) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& m : per_image) {
    tp += m.tp;
    fp += m.fp;
    fn += m.fn;
  }
  return f1_from_counts(tp, fp, fn);
}

double f1_per_image_avg(std::span<const MatchResult> per_image) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& m : per_image) {
    if (m.tp + m.fp + m.fn == 0) continue;
    sum += f1_from_counts(m.tp, m.fp, m.fn).f1;
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

ClassConfusion& ClassConfusion::operator+=(const ClassConfusion& o) {
  tp += o.tp;
  tn += o.tn;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

std::vector<ClassConfusion> classification_confusion(const MatchResult& detection, std::span<const Detection> preds,
                                                     std::span<const Centroid> gts, std::size_t n_classes) {
  std::vector<ClassConfusion> out(n_classes);
  for (const auto& pair : detection.pairs) {
    const int pc = preds[pair.pred].class_index;
    const int gc = gts[pair.gt].class_index;
    for (std::size_t c = 0; c < n_classes; ++c) {
      const bool p = pc == static_cast<int>(c);
      const bool g = gc == static_cast<int>(c);
      if (p && g) ++out[c].tp;
      else if (!p && !g) ++out[c].tn;
      else if (p) ++out[c].fp;
      else ++out[c].fn;
    }
  }
  return out;
}

PanNukeScore pannuke_f1(const MatchResult& detection, std::span<const ClassConfusion> confusion) {
  PanNukeScore s;
  s.detection = f1_from_counts(detection.tp, detection.fp, detection.fn);
  const double fp_d = static_cast<double>(detection.fp);
  const double fn_d = static_cast<double>(detection.fn);
  auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
  for (const auto& c : confusion) {
    const double agree = static_cast<double>(c.tp + c.tn);
    const double fp = static_cast<double>(c.fp);
    const double fn = static_cast<double>(c.fn);
    F1Score f;
    f.f1 = ratio(2.0 * agree, 2.0 * agree + 2.0 * fp + 2.0 * fn + fp_d + fn_d);
    f.precision = ratio(agree, agree + 2.0 * fp + fp_d);
    f.recall = ratio(agree, agree + 2.0 * fn + fn_d);
    s.classes.push_back(f);
  }
  return s;
}

double interpolate(std::span<const double> xs, std::span<const double> ys, double x) {
  if (xs.empty() || xs.size() != ys.size()) throw std::invalid_argument("interpolate: bad sample arrays");
  if (x < xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  // First index with xs[i] > x; x lies in [xs[i-1], xs[i]).
  const auto hi = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin());
  const std::size_t lo = hi - 1;
  if (xs[lo] == x) return ys[lo];
  const double t = (x - xs[lo]) / (xs[hi] - xs[lo]);
  return ys[lo] + t * (ys[hi] - ys[lo]);
}

FrocResult froc(std::span<const FrocImage> images, double margin_um, double mpp, double area_mm2,
                std::span<const double> fp_rates) {
  if (!(area_mm2 > 0.0)) throw std::invalid_argument("froc: area must be > 0");
  if (!(mpp > 0.0) || !(margin_um > 0.0)) throw std::invalid_argument("froc: margin and mpp must be > 0");
  const double radius = margin_um / mpp;

  FrocResult r;
  r.fp_rates.assign(fp_rates.begin(), fp_rates.end());
  r.curve.area_mm2 = area_mm2;
  std::vector<double> thresholds;
  for (const auto& im : images) {
    r.curve.n_gt += im.gts.size();
    for (const auto& p : im.preds) thresholds.push_back(p.confidence);
  }
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  r.curve.points.push_back({INFINITY, 0.0, 0.0});
  std::vector<Detection> kept;
  for (double t : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (const auto& im : images) {
      kept.clear();
      for (const auto& p : im.preds) {
        if (p.confidence >= t) kept.push_back(p);
      }
      const MatchResult m = match_points(kept, im.gts, radius);
      tp += m.tp;
      fp += m.fp;
    }
    const double sens = r.curve.n_gt == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(r.curve.n_gt);
    r.curve.points.push_back({t, static_cast<double>(fp) / area_mm2, sens});
  }

  if (thresholds.empty() || r.curve.n_gt == 0) {
    r.sensitivities.assign(fp_rates.size(), 0.0);
    r.score = 0.0;
    return r;
  }
  std::vector<double> xs, ys;
  for (const auto& p : r.curve.points) {
    xs.push_back(p.fp_per_mm2);
    ys.push_back(p.sensitivity);
  }
  for (double rate : fp_rates) r.sensitivities.push_back(interpolate(xs, ys, rate));
  r.score = r.sensitivities.empty()
                ? 0.0
                : std::accumulate(r.sensitivities.begin(), r.sensitivities.end(), 0.0) /
                      static_cast<double>(r.sensitivities.size());
  return r;
}

FrocResult froc(std::span<const Detection> preds, std::span<const Centroid> gts, double margin_um, double mpp,
                double area_mm2, std::span<const double> fp_rates) {
  const FrocImage image{preds, gts};
  return froc(std::span<const FrocImage>(&image, 1), margin_um, mpp, area_mm2, fp_rates);
}

}  // namespace kongnet::eval
