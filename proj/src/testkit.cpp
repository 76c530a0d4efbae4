#include "kongnet/testkit.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace kongnet::testkit {

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Colour hue_colour(int k, int n) {
  // Evenly spaced hues at moderate saturation and value, darker than the background.
  const double h = static_cast<double>(k) / std::max(1, n);
  const double s = 0.65;
  const double v = 0.7;
  const double hh = h * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

struct Placed {
  int x, y;
  double r;
  int cls;
};

}  // namespace

void SynthSpec::validate() const {
  if (size < ImagePatch::kMinSide) throw std::invalid_argument("SynthSpec: size below minimum patch side");
  if (!(mpp > 0.0)) throw std::invalid_argument("SynthSpec: mpp must be > 0");
  if (n_classes < 1) throw std::invalid_argument("SynthSpec: n_classes must be >= 1");
  if (min_per_class < 0 || max_per_class < min_per_class) throw std::invalid_argument("SynthSpec: bad count range");
  if (!(min_radius > 0.0) || max_radius < min_radius) throw std::invalid_argument("SynthSpec: bad radius range");
  if (!radius_scale.empty() && radius_scale.size() != static_cast<std::size_t>(n_classes)) {
    throw std::invalid_argument("SynthSpec: radius_scale needs one entry per class");
  }
  if (!colours.empty() && colours.size() != static_cast<std::size_t>(n_classes)) {
    throw std::invalid_argument("SynthSpec: colours needs one entry per class");
  }
}

SynthSpec SynthSpec::separable(int n_classes) {
  SynthSpec s;
  s.n_classes = n_classes;
  for (int k = 0; k < n_classes; ++k) s.colours.push_back(hue_colour(k, n_classes));
  return s;
}

SynthSpec SynthSpec::confusable(int n_classes) {
  SynthSpec s;
  s.n_classes = n_classes;
  s.noise = 0.05;
  for (int k = 0; k < n_classes; ++k) {
    Colour c{0.45, 0.32, 0.55};
    c[static_cast<std::size_t>(k % 3)] += 0.03;
    s.colours.push_back(c);
    s.radius_scale.push_back(n_classes == 1 ? 1.0 : 0.7 + 0.6 * k / (n_classes - 1));
  }
  s.min_radius = 3.0;
  s.max_radius = 4.0;
  return s;
}

SynthSample synth_patch(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);

  std::vector<int> order;
  for (int k = 0; k < spec.n_classes; ++k) {
    const int span = spec.max_per_class - spec.min_per_class + 1;
    const int n = spec.min_per_class + static_cast<int>(rng() % static_cast<std::uint64_t>(span));
    order.insert(order.end(), static_cast<std::size_t>(n), k);
  }
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Placed> placed;
  for (int cls : order) {
    const double scale = spec.radius_scale.empty() ? 1.0 : spec.radius_scale[static_cast<std::size_t>(cls)];
    bool ok = false;
    for (int attempt = 0; attempt < spec.max_attempts && !ok; ++attempt) {
      const double r = scale * (spec.min_radius + (spec.max_radius - spec.min_radius) * unit(rng));
      const int margin = static_cast<int>(std::ceil(r)) + 1;
      const int span = spec.size - 2 * margin;
      if (span <= 0) break;
      const int x = margin + static_cast<int>(rng() % static_cast<std::uint64_t>(span));
      const int y = margin + static_cast<int>(rng() % static_cast<std::uint64_t>(span));
      ok = std::all_of(placed.begin(), placed.end(), [&](const Placed& o) {
        return std::hypot(x - o.x, y - o.y) > r + o.r + spec.gap;
      });
      if (ok) placed.push_back({x, y, r, cls});
    }
    if (!ok) {
      throw InfeasibleDensity("synth_patch: could not place nucleus " + std::to_string(placed.size() + 1) + " of " +
                              std::to_string(order.size()) + " after " + std::to_string(spec.max_attempts) +
                              " attempts");
    }
  }

  SynthSample s;
  s.image = ImagePatch(spec.size, spec.size, spec.mpp, "synth-" + std::to_string(seed));
  LabelMap labels(spec.size, spec.size, 0);
  for (std::size_t i = 0; i < placed.size(); ++i) {
    const Placed& n = placed[i];
    const int reach = static_cast<int>(std::ceil(n.r));
    for (int y = n.y - reach; y <= n.y + reach; ++y) {
      for (int x = n.x - reach; x <= n.x + reach; ++x) {
        if (labels.contains(x, y) && std::hypot(x - n.x, y - n.y) <= n.r) labels(x, y) = static_cast<int>(i) + 1;
      }
    }
    s.annotation.centroids.push_back({static_cast<double>(n.x), static_cast<double>(n.y), n.cls});
    s.annotation.instance_classes.push_back(n.cls);
  }

  const double amp = spec.noise * std::sqrt(3.0);
  for (int y = 0; y < spec.size; ++y) {
    for (int x = 0; x < spec.size; ++x) {
      const int label = labels(x, y);
      const Colour& base =
          label == 0 ? spec.background
                     : (spec.colours.empty() ? hue_colour(placed[static_cast<std::size_t>(label - 1)].cls, spec.n_classes)
                                             : spec.colours[static_cast<std::size_t>(placed[static_cast<std::size_t>(label - 1)].cls)]);
      for (int c = 0; c < 3; ++c) {
        const double v = base[static_cast<std::size_t>(c)] + amp * (2.0 * unit(rng) - 1.0);
        s.image.at(x, y, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  s.annotation.instance_mask = std::move(labels);
  return s;
}

std::size_t oracle_match(std::span<const Detection> preds, std::span<const Centroid> gts, double radius) {
  if (preds.size() > 8 || gts.size() > 8) throw std::invalid_argument("oracle_match: at most 8 points per side");
  std::vector<bool> used(gts.size(), false);
  // Depth-first over predictions: each is left unmatched or paired with any free gt in range.
  auto best = [&](auto&& self, std::size_t i) -> std::size_t {
    if (i == preds.size()) return 0;
    std::size_t result = self(self, i + 1);
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (used[j]) continue;
      const double dx = preds[i].x - gts[j].x;
      const double dy = preds[i].y - gts[j].y;
      if (std::sqrt(dx * dx + dy * dy) > radius) continue;
      used[j] = true;
      result = std::max(result, 1 + self(self, i + 1));
      used[j] = false;
    }
    return result;
  };
  return best(best, 0);
}

OracleLosses oracle_scalar_losses(std::span<const double> p, std::span<const double> g, double epsilon, double alpha,
                                  double gamma, double clamp) {
  if (p.size() != g.size() || p.empty()) throw std::invalid_argument("oracle_scalar_losses: bad map sizes");
  const std::size_t n = p.size();
  OracleLosses out;

  double bce_sum = 0.0;
  double focal_sum = 0.0;
  double inter = 0.0, p_sum = 0.0, g_sum = 0.0, p_sq = 0.0, g_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double pi = p[i];
    if (pi < clamp) pi = clamp;
    if (pi > 1.0 - clamp) pi = 1.0 - clamp;
    const double gi = g[i];
    bce_sum += -(gi * std::log(pi)) - (1.0 - gi) * std::log(1.0 - pi);

    if (gi == 1.0) {
      focal_sum += -alpha * std::pow(1.0 - pi, gamma) * std::log(pi);
    } else if (gi == 0.0) {
      focal_sum += -(1.0 - alpha) * std::pow(pi, gamma) * std::log(1.0 - pi);
    } else {
      focal_sum += -alpha * gi * std::pow(1.0 - pi, gamma) * std::log(pi) -
                   (1.0 - alpha) * (1.0 - gi) * std::pow(pi, gamma) * std::log(1.0 - pi);
    }

    inter += p[i] * g[i];
    p_sum += p[i];
    g_sum += g[i];
    p_sq += p[i] * p[i];
    g_sq += g[i] * g[i];
  }
  out.bce = bce_sum / static_cast<double>(n);
  out.focal = focal_sum / static_cast<double>(n);
  out.dice = 1.0 - (2.0 * inter + epsilon) / (p_sum + g_sum + epsilon);
  out.jaccard = 1.0 - (inter + epsilon) / (p_sq + g_sq - inter + epsilon);
  out.centroid = out.jaccard + out.dice + out.focal;
  return out;
}

double oracle_interclass(const std::vector<std::vector<double>>& maps) {
  if (maps.size() < 2) return 0.0;
  const std::size_t n = maps.front().size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double prod = 1.0;
    for (const auto& m : maps) prod *= m.at(i);
    total += prod;
  }
  return total / static_cast<double>(n);
}

Mask oracle_boundary(const LabelMap& labels) {
  if (labels.height() > 64 || labels.width() > 64) throw std::invalid_argument("oracle_boundary: at most 64 x 64");
  Mask out(labels.height(), labels.width());
  for (int y = 0; y < labels.height(); ++y) {
    for (int x = 0; x < labels.width(); ++x) {
      bool differs = false;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (labels.contains(x + dx, y + dy) && labels(x + dx, y + dy) != labels(x, y)) differs = true;
        }
      }
      out(x, y) = differs ? 1 : 0;
    }
  }
  return out;
}

Mask oracle_disk(int cx, int cy, int diameter, int height, int width) {
  Mask out(height, width);
  const double r = diameter / 2.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double d = std::sqrt(static_cast<double>((x - cx) * (x - cx) + (y - cy) * (y - cy)));
      if (d <= r) out(x, y) = 1;
    }
  }
  return out;
}

namespace {

std::size_t best_index(const std::vector<OraclePoint>& pts) {
  std::size_t b = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const auto& p = pts[i];
    const auto& q = pts[b];
    if (p.score > q.score || (p.score == q.score && (p.y < q.y || (p.y == q.y && p.x < q.x)))) b = i;
  }
  return b;
}

}  // namespace

std::vector<OraclePoint> oracle_distance_suppression(std::vector<OraclePoint> points, double min_distance) {
  std::vector<OraclePoint> taken;
  while (!points.empty()) {
    const OraclePoint top = points[best_index(points)];
    taken.push_back(top);
    std::vector<OraclePoint> rest;
    for (const auto& p : points) {
      const double d = std::sqrt((p.x - top.x) * (p.x - top.x) + (p.y - top.y) * (p.y - top.y));
      if (d > min_distance) rest.push_back(p);
    }
    points = std::move(rest);
  }
  return taken;
}

std::vector<OraclePoint> oracle_box_suppression(std::vector<OraclePoint> points, int box_size, double threshold) {
  const double half = box_size / 2.0;
  auto iou = [&](const OraclePoint& a, const OraclePoint& b) {
    const double left = std::max(a.x - half, b.x - half);
    const double right = std::min(a.x + half, b.x + half);
    const double top = std::max(a.y - half, b.y - half);
    const double bottom = std::min(a.y + half, b.y + half);
    const double inter = std::max(0.0, right - left) * std::max(0.0, bottom - top);
    const double area = static_cast<double>(box_size) * box_size;
    return inter / (area + area - inter);
  };
  std::vector<OraclePoint> taken;
  while (!points.empty()) {
    const OraclePoint top = points[best_index(points)];
    taken.push_back(top);
    std::vector<OraclePoint> rest;
    bool skipped_self = false;
    for (const auto& p : points) {
      if (!skipped_self && p.x == top.x && p.y == top.y && p.score == top.score) {
        skipped_self = true;
        continue;
      }
      if (iou(p, top) <= threshold) rest.push_back(p);
    }
    points = std::move(rest);
  }
  return taken;
}

std::vector<OraclePoint> oracle_strict_maxima(const ProbMap& map, double threshold) {
  std::vector<OraclePoint> out;
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      const double v = map(x, y);
      if (!(v > 0.0) || v < threshold) continue;
      bool strict = true;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if ((dx || dy) && map.contains(x + dx, y + dy) && map(x + dx, y + dy) >= v) strict = false;
      if (strict) out.push_back({static_cast<double>(x), static_cast<double>(y), v});
    }
  }
  return out;
}

double oracle_froc_sensitivity(std::span<const Detection> preds, std::span<const Centroid> gts, double radius,
                               double area_mm2, double rate) {
  if (gts.empty()) return 0.0;
  std::vector<double> thresholds{INFINITY};
  for (const auto& p : preds) thresholds.push_back(p.confidence);
  double best = 0.0;
  for (double t : thresholds) {
    std::vector<Detection> kept;
    for (const auto& p : preds)
      if (p.confidence >= t) kept.push_back(p);
    if (kept.size() > 8) throw std::invalid_argument("oracle_froc_sensitivity: at most 8 predictions");
    const std::size_t tp = oracle_match(kept, gts, radius);
    const double fp = static_cast<double>(kept.size() - tp) / area_mm2;
    if (fp <= rate) best = std::max(best, static_cast<double>(tp) / static_cast<double>(gts.size()));
  }
  return best;
}

}  // namespace kongnet::testkit
